//! Trains the toy model under each imprint schedule on the synthetic set and
//! reports the final validation accuracy.
//!
//! `cargo run --release --example imprint_ablation -- [steps]`

use cat_core::model::{CatConfig, ImprintMode};
use cat_core::train::{train, DatasetSpec, RunConfig};

fn main() -> cat_core::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(150, |s| s.parse().expect("integer"));
    let modes = [
        ImprintMode::Off,
        ImprintMode::Constant,
        ImprintMode::ForwardDecay,
        ImprintMode::BackwardDecay,
        ImprintMode::TanhForward,
        ImprintMode::TanhBackward,
    ];
    let root = std::env::temp_dir().join("cat-imprint-ablation");
    for mode in modes {
        let weights: Vec<f64> = (0..3).map(|l| mode.weight(l, 3)).collect();
        let mut config = RunConfig {
            model: CatConfig {
                layers: 3,
                imprint_mode: mode,
                ..CatConfig::toy()
            },
            ..RunConfig::default()
        };
        config.train.base_lr = 1e-3;
        config.train.max_steps = Some(steps);
        config.train.epochs = 1 + steps / 100;
        config.train.eval_every = 0;
        config.train.out_dir = root.join(format!("{mode:?}"));
        config.train.dataset = DatasetSpec::Synthetic {
            classes: 10,
            train_samples: 3200,
            val_samples: 320,
        };
        let outcome = train(&config)?;
        let acc = outcome.evals.last().map_or(0.0, |e| e.acc);
        let loss = outcome.steps.last().map_or(f64::NAN, |s| s.loss);
        println!("{:<14} weights {weights:.2?}  train loss {loss:.4}  val acc {acc:.3}", format!("{mode:?}"));
    }
    Ok(())
}
