//! Trains a few steps, reloads the final checkpoint and resumes the optimizer
//! state, showing the round trip is bit-exact.
//!
//! `cargo run --release --example checkpoint_roundtrip -- [out_dir]`

use std::fs;

use cat_core::model::CatConfig;
use cat_core::train::{load_checkpoint, train, Checkpoint, DatasetSpec, RunConfig, FINAL_CHECKPOINT};

fn main() -> cat_core::Result<()> {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "runs/roundtrip".into());
    let mut config = RunConfig {
        model: CatConfig::toy(),
        ..RunConfig::default()
    };
    config.train.out_dir = out_dir.into();
    config.train.epochs = 1;
    config.train.dataset = DatasetSpec::Synthetic {
        classes: 10,
        train_samples: 256,
        val_samples: 64,
    };
    let outcome = train(&config)?;
    let path = outcome.out_dir.join(FINAL_CHECKPOINT);
    let bytes = fs::read(&path)?;
    let ckpt = load_checkpoint::<f32>(&path)?;
    let (model, opt, restored) = ckpt.restore()?;
    let again = Checkpoint::capture(&model, &opt, &restored, ckpt.step).to_bytes();
    println!("{}: {} bytes, {} tensors, step {}", path.display(), bytes.len(), ckpt.tensors.len(), ckpt.step);
    println!("optimizer steps {}, re-encoded identical: {}", opt.steps(), again == bytes);
    println!("same weights as the live model: {}", model.params() == outcome.model.params());
    Ok(())
}
