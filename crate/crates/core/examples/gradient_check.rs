//! Central finite differences against the tape for every op, one attention
//! layer and both full models.
//!
//! `cargo run --release --example gradient_check`

use cat_core::checks::{attention_gradient_check, gradcheck_model_config, model_gradient_check, op_gradient_suite};
use cat_core::model::{CatConfig, ModelKind};

fn main() {
    let vit = CatConfig {
        model_kind: ModelKind::VitBaseline,
        ..gradcheck_model_config()
    };
    let mut cases = op_gradient_suite(0);
    cases.push(attention_gradient_check(0));
    cases.push(model_gradient_check(&gradcheck_model_config(), 0));
    cases.push(model_gradient_check(&vit, 0));
    for c in &cases {
        println!("{:<24} {:.2e}", c.name, c.error);
    }
}
