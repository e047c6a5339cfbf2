use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, GammaMode, PosMode};
use crate::{Error, Result};

/// How strongly the initial embedding is re-added before attention at layer `l`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprintMode {
    Off,
    #[default]
    Constant,
    ForwardDecay,
    BackwardDecay,
    TanhForward,
    TanhBackward,
}

impl ImprintMode {
    /// Weight for layer `layer` of `layers`.
    pub fn weight(self, layer: usize, layers: usize) -> f64 {
        let frac = layer as f64 / layers as f64;
        match self {
            ImprintMode::Off => 0.0,
            ImprintMode::Constant => 1.0,
            ImprintMode::ForwardDecay => 1.0 - frac,
            ImprintMode::BackwardDecay => frac,
            ImprintMode::TanhForward => (1.0 - frac).tanh(),
            ImprintMode::TanhBackward => frac.tanh(),
        }
    }
}

pub fn imprint_schedule(layer: usize, layers: usize, mode: ImprintMode) -> f64 {
    mode.weight(layer, layers)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Cat,
    VitBaseline,
}

/// Architecture hyperparameters. Every field has a default, so a JSON config
/// only needs the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_ratio: usize,
    pub num_classes: usize,
    pub imprint_mode: ImprintMode,
    /// Per-layer imprint mask; `None` enables every layer.
    pub imprint_layers: Option<Vec<bool>>,
    pub model_kind: ModelKind,
    /// Positional scheme of the softmax baseline. The cross-axis model always
    /// uses axial rotary.
    pub pos_mode: PosMode,
    pub gamma_mode: GammaMode,
    pub norm_eps: f64,
}

impl Default for CatConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            hidden: 64,
            heads: 4,
            layers: 3,
            ffn_ratio: 4,
            num_classes: 10,
            imprint_mode: ImprintMode::Constant,
            imprint_layers: None,
            model_kind: ModelKind::Cat,
            pos_mode: PosMode::Rotary,
            gamma_mode: GammaMode::Retnet,
            norm_eps: 1e-5,
        }
    }
}

impl CatConfig {
    /// Full-size configuration: 224px images (assumed), patch 8, hidden 1024,
    /// 8 heads, 5 layers, 1000 classes and an FFN ratio of 1.
    pub fn paper() -> Self {
        Self {
            image_size: 224,
            patch_size: 8,
            hidden: 1024,
            heads: 8,
            layers: 5,
            ffn_ratio: 1,
            num_classes: 1000,
            ..Self::default()
        }
    }

    /// Small model used by tests and examples: 32px, patch 8, hidden 32, 4 heads, 2 layers.
    pub fn toy() -> Self {
        Self {
            hidden: 32,
            layers: 2,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size.max(1)
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn patch_features(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn ffn_hidden(&self) -> usize {
        self.hidden * self.ffn_ratio
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            hidden: self.hidden,
            heads: self.heads,
            grid: self.grid(),
            gamma_mode: self.gamma_mode,
            use_rotary: true,
        }
    }

    /// Imprint weight for `layer`, zero when the layer is masked out.
    pub fn imprint_weight(&self, layer: usize) -> f64 {
        let on = self
            .imprint_layers
            .as_ref()
            .is_none_or(|mask| mask.get(layer).copied().unwrap_or(false));
        if on {
            self.imprint_mode.weight(layer, self.layers)
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.channels == 0 || self.layers == 0 || self.ffn_ratio == 0 {
            return bad("channels, layers and ffn_ratio must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} must be at least 2", self.num_classes));
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            return bad(format!("norm_eps {} must be positive", self.norm_eps));
        }
        if let Some(mask) = &self.imprint_layers {
            if mask.len() != self.layers {
                return bad(format!(
                    "imprint_layers has {} entries for {} layers",
                    mask.len(),
                    self.layers
                ));
            }
        }
        self.attention().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert_eq!(imprint_schedule(3, 5, ImprintMode::Constant), 1.0);
        assert_eq!(imprint_schedule(0, 5, ImprintMode::ForwardDecay), 1.0);
        assert_eq!(imprint_schedule(2, 5, ImprintMode::BackwardDecay), 0.4);
        assert_eq!(imprint_schedule(4, 5, ImprintMode::Off), 0.0);
        assert_eq!(imprint_schedule(1, 4, ImprintMode::TanhForward), 0.75f64.tanh());
        assert_eq!(imprint_schedule(1, 4, ImprintMode::TanhBackward), 0.25f64.tanh());
    }

    #[test]
    fn mask_gates_layers() {
        let cfg = CatConfig {
            imprint_layers: Some(vec![false, true, false]),
            ..CatConfig::default()
        };
        assert_eq!(cfg.imprint_weight(0), 0.0);
        assert_eq!(cfg.imprint_weight(1), 1.0);
        cfg.validate().unwrap();
        let short = CatConfig {
            imprint_layers: Some(vec![true]),
            ..CatConfig::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn validation() {
        CatConfig::default().validate().unwrap();
        CatConfig::paper().validate().unwrap();
        assert_eq!(CatConfig::paper().grid(), 28);
        let odd = CatConfig {
            image_size: 30,
            ..CatConfig::default()
        };
        assert!(matches!(odd.validate(), Err(Error::Config(_))));
        let dh = CatConfig {
            hidden: 24,
            heads: 4,
            ..CatConfig::default()
        };
        assert!(matches!(dh.validate(), Err(Error::BadHeadDim(6))));
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg: CatConfig = serde_json::from_str(r#"{"hidden": 32, "imprint_mode": "forward_decay"}"#).unwrap();
        assert_eq!(cfg.hidden, 32);
        assert_eq!(cfg.imprint_mode, ImprintMode::ForwardDecay);
        let back: CatConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<CatConfig>(r#"{"hiden": 32}"#).is_err());
    }
}
