//! Trains the toy cross-axis model on the synthetic set and prints the loss curve.
//!
//! `cargo run --release --example train_synthetic -- [out_dir] [base_lr]`

use cat_core::model::CatConfig;
use cat_core::train::{train, DatasetSpec, RunConfig};

fn main() -> cat_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let out_dir = args.next().unwrap_or_else(|| "runs/synthetic".into());
    let mut config = RunConfig {
        model: CatConfig {
            hidden: 32,
            layers: 2,
            ..CatConfig::default()
        },
        ..RunConfig::default()
    };
    config.train.out_dir = out_dir.into();
    config.train.base_lr = args.next().map_or(1e-3, |s| s.parse().expect("learning rate"));
    config.train.dataset = DatasetSpec::Synthetic {
        classes: 10,
        train_samples: 3200,
        val_samples: 640,
    };
    let start = std::time::Instant::now();
    let outcome = train(&config)?;
    for s in outcome.steps.iter().filter(|s| s.step % 25 == 0 || s.step <= 5) {
        println!("step {:>4}  lr {:.2e}  loss {:.4}  acc {:.3}", s.step, s.lr, s.loss, s.acc);
    }
    for e in &outcome.evals {
        println!("eval @ {:>4}: loss {:.4}  acc {:.3}", e.step, e.loss, e.acc);
    }
    println!("{} steps in {:.1?}", outcome.steps.len(), start.elapsed());
    Ok(())
}
