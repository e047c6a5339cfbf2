//! Per-component cost of the cross-axis model and its softmax baseline.
//!
//! `cargo run --example flop_report -- [paper|toy]`

use cat_core::flops::{fit_scaling_exponent, Comparison, Convention, Mechanism};
use cat_core::model::{param_count, CatConfig, ModelKind};

fn main() -> cat_core::Result<()> {
    let config = match std::env::args().nth(1).as_deref() {
        Some("toy") => CatConfig::toy(),
        _ => CatConfig::paper(),
    };
    let cmp = Comparison::new(&config);
    let vit = CatConfig {
        model_kind: ModelKind::VitBaseline,
        ..config.clone()
    };
    println!("cross-axis, {} parameters\n{}", param_count(&config), cmp.cat.to_table());
    println!("softmax baseline, {} parameters\n{}", param_count(&vit), cmp.vit.to_table());
    println!(
        "ratio {:.4}; FPP {:.2} vs {:.2} (multiply-adds per parameter)",
        cmp.ratio(),
        cmp.cat.fpp(Convention::Macs),
        cmp.vit.fpp(Convention::Macs)
    );
    let sizes = [8, 16, 32, 64];
    println!(
        "contraction exponent in token count: cross-axis {:.3}, softmax {:.3}",
        fit_scaling_exponent(Mechanism::CrossAxis, &sizes, config.hidden)?,
        fit_scaling_exponent(Mechanism::Quadratic, &sizes, config.hidden)?
    );
    Ok(())
}
