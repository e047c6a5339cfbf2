//! Trains the small cross-axis model on a CIFAR-10 subset from the binary
//! batches (`data_batch_{1..5}.bin`, `test_batch.bin`).
//!
//! `cargo run --release --example train_cifar10 -- <cifar_dir> [train_images] [epochs]`

use cat_core::model::CatConfig;
use cat_core::train::{train_on, load_datasets, DatasetSpec, RunConfig};

fn main() -> cat_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(path) = args.next() else {
        eprintln!("usage: train_cifar10 <cifar_dir> [train_images] [epochs]");
        std::process::exit(2);
    };
    let limit: usize = args.next().map_or(5000, |s| s.parse().expect("integer"));
    let mut config = RunConfig {
        model: CatConfig::default(),
        ..RunConfig::default()
    };
    config.train.epochs = args.next().map_or(5, |s| s.parse().expect("integer"));
    config.train.base_lr = 1e-3;
    config.train.hflip = true;
    config.train.out_dir = "runs/cifar10".into();
    config.train.dataset = DatasetSpec::Cifar10 {
        path: path.into(),
        train_limit: Some(limit),
        val_limit: None,
    };
    let (train_set, val_set) = load_datasets(&config)?;
    println!("{} train / {} test images", train_set.len(), val_set.len());
    let outcome = train_on(&config, &train_set, &val_set, |s| {
        if s.step % 50 == 0 {
            println!("step {:>5}  loss {:.4}  acc {:.3}", s.step, s.loss, s.acc);
        }
    })?;
    for e in &outcome.evals {
        println!("eval @ {:>5}: loss {:.4}  acc {:.3}", e.step, e.loss, e.acc);
    }
    Ok(())
}
