//! Analytic operation counts.
//!
//! Everything is counted in multiply-adds; the `flops` convention doubles every
//! count. Elementwise work (norms, activations, rotary, pooling, softmax) is
//! charged [`ELEMENTWISE_OPS`] units per element, except pooling at one unit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{param_count, CatConfig, ModelKind};
use crate::attention::PosMode;
use crate::{Error, Result};

/// Charge per element for norms, activations, rotary and softmax.
pub const ELEMENTWISE_OPS: u64 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Two operations per multiply-add.
    #[default]
    Flops,
    /// One operation per multiply-add.
    Macs,
}

impl Convention {
    pub fn factor(self) -> u64 {
        match self {
            Convention::Flops => 2,
            Convention::Macs => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Embed,
    Stage1,
    Stage2,
    Projections,
    Ffn,
    Norms,
    Softmax,
    Head,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Embed,
        Component::Stage1,
        Component::Stage2,
        Component::Projections,
        Component::Ffn,
        Component::Norms,
        Component::Softmax,
        Component::Head,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Embed => "embed",
            Component::Stage1 => "stage1",
            Component::Stage2 => "stage2",
            Component::Projections => "projections",
            Component::Ffn => "ffn",
            Component::Norms => "norms",
            Component::Softmax => "softmax",
            Component::Head => "head",
        }
    }
}

/// Counts for one attention layer at one grid size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionCount {
    pub stage1: u64,
    pub stage2: u64,
    /// q, k, v and output projections.
    pub projections: u64,
    pub softmax: u64,
}

impl AttentionCount {
    /// The two score/value products only.
    pub fn contraction(&self) -> u64 {
        self.stage1 + self.stage2
    }
}

/// Cross-axis attention on an `S x S` grid: `S^3 d` per stage, `4 S^2 d^2`
/// for the projections.
pub fn flops_cross_axis_attention(grid: u64, hidden: u64, convention: Convention) -> AttentionCount {
    let k = convention.factor();
    AttentionCount {
        stage1: k * grid.pow(3) * hidden,
        stage2: k * grid.pow(3) * hidden,
        projections: k * 4 * grid * grid * hidden * hidden,
        softmax: 0,
    }
}

/// Softmax attention over `N` tokens: `N^2 d` per product, `5 H N^2` for the
/// softmax itself.
pub fn flops_quadratic_attention(tokens: u64, hidden: u64, heads: u64, convention: Convention) -> AttentionCount {
    let k = convention.factor();
    AttentionCount {
        stage1: k * tokens * tokens * hidden,
        stage2: k * tokens * tokens * hidden,
        projections: k * 4 * tokens * hidden * hidden,
        softmax: k * ELEMENTWISE_OPS * heads * tokens * tokens,
    }
}

/// Per-image counts of one model, stored as multiply-adds.
#[derive(Clone, Debug, PartialEq)]
pub struct FlopReport {
    pub kind: ModelKind,
    pub tokens: u64,
    pub params: u64,
    macs: Vec<(Component, u64)>,
}

impl FlopReport {
    pub fn macs(&self, component: Component) -> u64 {
        self.macs
            .iter()
            .find(|(c, _)| *c == component)
            .map_or(0, |(_, v)| *v)
    }

    pub fn count(&self, component: Component, convention: Convention) -> u64 {
        self.macs(component) * convention.factor()
    }

    pub fn total(&self, convention: Convention) -> u64 {
        self.macs.iter().map(|(_, v)| v).sum::<u64>() * convention.factor()
    }

    /// Operations per parameter.
    pub fn fpp(&self, convention: Convention) -> f64 {
        self.total(convention) as f64 / self.params as f64
    }

    pub fn components(&self) -> impl Iterator<Item = (Component, u64)> + '_ {
        self.macs.iter().copied()
    }

    /// `component,flops,macs` rows plus a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,flops,macs\n");
        for (c, m) in &self.macs {
            let _ = writeln!(out, "{},{},{}", c.name(), 2 * m, m);
        }
        let _ = writeln!(
            out,
            "total,{},{}",
            self.total(Convention::Flops),
            self.total(Convention::Macs)
        );
        out
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let title = match self.kind {
            ModelKind::Cat => "cross-axis",
            ModelKind::VitBaseline => "softmax baseline",
        };
        let _ = writeln!(out, "{title} ({} tokens, {} params)", self.tokens, self.params);
        let _ = writeln!(out, "{:<12} {:>18} {:>18}", "component", "flops", "macs");
        for (c, m) in &self.macs {
            let _ = writeln!(out, "{:<12} {:>18} {:>18}", c.name(), 2 * m, m);
        }
        let _ = writeln!(
            out,
            "{:<12} {:>18} {:>18}",
            "total",
            self.total(Convention::Flops),
            self.total(Convention::Macs)
        );
        let _ = writeln!(
            out,
            "{:<12} {:>18.2} {:>18.2}",
            "per param",
            self.fpp(Convention::Flops),
            self.fpp(Convention::Macs)
        );
        out
    }
}

/// Full per-image count for `config` over embedding, every layer and the head.
pub fn flops_model(config: &CatConfig) -> FlopReport {
    let s = config.grid() as u64;
    let n = s * s;
    let d = config.hidden as u64;
    let h = config.heads as u64;
    let l = config.layers as u64;
    let f = config.ffn_hidden() as u64;
    let e = ELEMENTWISE_OPS;
    let attn = match config.model_kind {
        ModelKind::Cat => flops_cross_axis_attention(s, d, Convention::Macs),
        ModelKind::VitBaseline => flops_quadratic_attention(n, d, h, Convention::Macs),
    };
    let rotary = match (config.model_kind, config.pos_mode) {
        (ModelKind::Cat, _) | (ModelKind::VitBaseline, PosMode::Rotary) => 2 * n * d,
        _ => 0,
    };
    let group_norm = if config.model_kind == ModelKind::Cat { n * d } else { 0 };
    // two layer norms, gelu, rotary on q and k, group norm
    let per_layer_elementwise = e * (2 * n * d + n * f + rotary + group_norm);
    let macs = vec![
        (Component::Embed, n * config.patch_features() as u64 * d),
        (Component::Stage1, l * attn.stage1),
        (Component::Stage2, l * attn.stage2),
        (Component::Projections, l * attn.projections),
        (Component::Ffn, l * 2 * n * d * f),
        (Component::Norms, l * per_layer_elementwise + n * d),
        (Component::Softmax, l * attn.softmax),
        (Component::Head, d * config.num_classes as u64),
    ];
    FlopReport {
        kind: config.model_kind,
        tokens: n,
        params: param_count(config),
        macs,
    }
}

/// The cross-axis model and its softmax baseline under one architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub cat: FlopReport,
    pub vit: FlopReport,
}

impl Comparison {
    pub fn new(config: &CatConfig) -> Self {
        let with = |kind| CatConfig {
            model_kind: kind,
            ..config.clone()
        };
        Self {
            cat: flops_model(&with(ModelKind::Cat)),
            vit: flops_model(&with(ModelKind::VitBaseline)),
        }
    }

    /// Cross-axis total over baseline total; convention-independent.
    pub fn ratio(&self) -> f64 {
        self.cat.total(Convention::Macs) as f64 / self.vit.total(Convention::Macs) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    CrossAxis,
    Quadratic,
}

/// Score/value product cost of one layer at grid side `grid`.
pub fn contraction_macs(mechanism: Mechanism, grid: u64, hidden: u64) -> u64 {
    match mechanism {
        Mechanism::CrossAxis => flops_cross_axis_attention(grid, hidden, Convention::Macs).contraction(),
        Mechanism::Quadratic => flops_quadratic_attention(grid * grid, hidden, 1, Convention::Macs).contraction(),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::TooFewSizes(points.len()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("sizes must not all be equal".into()));
    }
    Ok(sxy / sxx)
}

/// Exponent of the analytic contraction cost in token count `N = S^2`.
pub fn fit_scaling_exponent(mechanism: Mechanism, sizes: &[usize], hidden: usize) -> Result<f64> {
    let points: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&s| {
            let s = s as u64;
            ((s * s) as f64, contraction_macs(mechanism, s, hidden as u64) as f64)
        })
        .collect();
    log_log_slope(&points)
}
