//! Training: datasets, AdamW with cosine annealing, the step loop, metrics
//! files and checkpoints.

mod checkpoint;
mod config;
pub mod data;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::{DatasetSpec, RunConfig, TrainConfig};
pub use data::{ImageSet, SyntheticSpec};
pub use optim::{adamw_update, cosine_lr, AdamHyper, AdamW};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::model::{gradients_of, CatModel};
use crate::tensor::{Element, Tape, Tensor};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const CONFIG_SNAPSHOT: &str = "config.json";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Accuracy on the step's batch.
    pub acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub loss: f64,
    pub acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
}

/// Index of the largest logit per row; ties go to the lowest class.
pub fn predictions<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

pub fn accuracy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> f64 {
    let hits = predictions(logits).iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Mean cross entropy and accuracy over `set`, in batches of `batch_size`.
pub fn evaluate<T: Element>(model: &CatModel<T>, set: &ImageSet, batch_size: usize) -> Result<EvalResult> {
    let (mut loss, mut hits) = (0.0, 0.0);
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, labels) = set.batch::<T>(chunk, None);
        let logits = model.logits(&images)?;
        let (l, _) = crate::tensor::ops::cross_entropy(&logits, &labels)?;
        loss += l.as_f64() * chunk.len() as f64;
        hits += accuracy(&logits, &labels) * chunk.len() as f64;
    }
    let n = set.len().max(1) as f64;
    Ok(EvalResult {
        loss: loss / n,
        accuracy: hits / n,
    })
}

/// Train and validation sets named by the config.
pub fn load_datasets(config: &RunConfig) -> Result<(ImageSet, ImageSet)> {
    let m = &config.model;
    match &config.train.dataset {
        DatasetSpec::Synthetic {
            classes,
            train_samples,
            val_samples,
        } => {
            let spec = SyntheticSpec {
                classes: *classes,
                channels: m.channels,
                image_size: m.image_size,
                patch_size: m.patch_size,
                seed: config.train.seed,
            };
            Ok((spec.generate(0, *train_samples)?, spec.generate(*train_samples, *val_samples)?))
        }
        DatasetSpec::Cifar10 {
            path,
            train_limit,
            val_limit,
        } => {
            let (train, val) = data::load_cifar10(path)?;
            Ok((
                train.truncate(train_limit.unwrap_or(usize::MAX)),
                val.truncate(val_limit.unwrap_or(usize::MAX)),
            ))
        }
    }
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size.max(1))
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub model: CatModel<f32>,
    pub optimizer: AdamW<f32>,
    pub out_dir: PathBuf,
}

impl TrainOutcome {
    pub fn best_eval(&self) -> Option<EvalRecord> {
        self.evals.iter().copied().fold(None, |best, e| match best {
            Some(b) if b.acc >= e.acc => Some(b),
            _ => Some(e),
        })
    }
}

/// Runs the configured datasets; see [`train_on`].
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_set, val_set) = load_datasets(config)?;
    train_on(config, &train_set, &val_set, |_| {})
}

/// Trains on `train_set`, writing metrics, eval rows, checkpoints and a
/// config snapshot under `config.train.out_dir`. `observer` sees every step.
pub fn train_on(
    config: &RunConfig,
    train_set: &ImageSet,
    val_set: &ImageSet,
    mut observer: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let tc = &config.train;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let out_dir = tc.out_dir.clone();
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join(CONFIG_SNAPSHOT), config.to_json())?;
    let mut metrics = BufWriter::new(File::create(out_dir.join(METRICS_FILE))?);
    writeln!(metrics, "step,lr,loss,acc")?;
    let mut eval_file = BufWriter::new(File::create(out_dir.join(EVAL_FILE))?);
    writeln!(eval_file, "step,loss,acc")?;

    let mut model = CatModel::<f32>::new(config.model.clone(), tc.seed)?;
    let mut opt = AdamW::new(model.params());
    let per_epoch = steps_per_epoch(train_set.len(), tc.batch_size);
    let total = tc.epochs * per_epoch;
    let last = tc.max_steps.map_or(total, |m| m.min(total));
    let mut steps = Vec::with_capacity(last);
    let mut evals = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut step = 0;

    let mut run_eval = |step: usize, model: &CatModel<f32>, opt: &AdamW<f32>, evals: &mut Vec<EvalRecord>| -> Result<()> {
        let r = evaluate(model, val_set, tc.batch_size)?;
        writeln!(eval_file, "{step},{},{}", r.loss, r.accuracy)?;
        eval_file.flush()?;
        evals.push(EvalRecord {
            step,
            loss: r.loss,
            acc: r.accuracy,
        });
        if r.accuracy > best {
            best = r.accuracy;
            save_checkpoint(&out_dir.join(BEST_CHECKPOINT), model, opt, config, step as u64)?;
        }
        Ok(())
    };

    'epochs: for epoch in 0..tc.epochs {
        let plan = data::epoch_plan(train_set.len(), tc.seed, epoch, tc.hflip);
        for (b, chunk) in plan.order.chunks(tc.batch_size).enumerate() {
            if step >= last {
                break 'epochs;
            }
            let flips = plan
                .flips
                .as_ref()
                .map(|f| f[b * tc.batch_size..b * tc.batch_size + chunk.len()].to_vec());
            let (images, labels) = train_set.batch::<f32>(chunk, flips.as_deref());
            let lr = cosine_lr(step, total, tc.base_lr, tc.min_lr);
            let (loss, acc, grads) = {
                let tape = Tape::new();
                let bound = model.bind(&tape);
                let logits = model.forward(&bound, &images)?;
                let loss = logits.cross_entropy(&labels)?;
                let grads = tape.backward(&loss)?;
                (
                    loss.value().item()?.as_f64(),
                    accuracy(&logits.value(), &labels),
                    gradients_of(&bound, &grads)?,
                )
            };
            step += 1;
            if !loss.is_finite() {
                metrics.flush()?;
                return Err(Error::NonFiniteLoss { step });
            }
            opt.step(model.params_mut(), &grads, lr, tc.weight_decay)?;
            let record = StepRecord { step, lr, loss, acc };
            writeln!(metrics, "{step},{lr},{loss},{acc}")?;
            observer(&record);
            steps.push(record);
            if tc.eval_every > 0 && step % tc.eval_every == 0 && step < last {
                metrics.flush()?;
                run_eval(step, &model, &opt, &mut evals)?;
            }
        }
    }
    metrics.flush()?;
    if !val_set.is_empty() {
        run_eval(step, &model, &opt, &mut evals)?;
    }
    save_checkpoint(&out_dir.join(FINAL_CHECKPOINT), &model, &opt, config, step as u64)?;
    Ok(TrainOutcome {
        steps,
        evals,
        model,
        optimizer: opt,
        out_dir,
    })
}

/// Reads `metrics.csv` back into records.
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad metrics line {line:?}")))
            };
            Ok(StepRecord {
                step: num(0)? as usize,
                lr: num(1)?,
                loss: num(2)?,
                acc: num(3)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CatConfig;

    #[test]
    fn argmax_ties_go_low() {
        let logits = Tensor::new(&[3, 3], vec![0.0f32, 0.0, 0.0, 1.0, 2.0, 2.0, 5.0, -1.0, 0.0]).unwrap();
        assert_eq!(predictions(&logits), vec![0, 1, 0]);
        assert_eq!(accuracy(&logits, &[0, 1, 2]), 2.0 / 3.0);
    }

    #[test]
    fn zero_model_scores_chance_on_balanced_set() {
        let cfg = CatConfig::toy();
        let mut params = crate::model::init_params::<f32>(&cfg, 0);
        crate::nn::ParamTree::for_each_mut(&mut params, "", &mut |_, t| *t = Tensor::zeros(t.shape()));
        let model = CatModel::from_params(cfg, params).unwrap();
        let spec = SyntheticSpec {
            classes: 10,
            channels: 3,
            image_size: 32,
            patch_size: 8,
            seed: 1,
        };
        let r = evaluate(&model, &spec.generate(0, 40).unwrap(), 16).unwrap();
        assert_eq!(r.accuracy, 0.1);
        assert!((r.loss - 10f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn short_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig {
            model: CatConfig::toy(),
            ..RunConfig::default()
        };
        cfg.train.out_dir = dir.path().to_path_buf();
        cfg.train.dataset = DatasetSpec::Synthetic {
            classes: 10,
            train_samples: 64,
            val_samples: 20,
        };
        cfg.train.batch_size = 16;
        cfg.train.epochs = 2;
        cfg.train.eval_every = 3;
        let out = train(&cfg).unwrap();
        assert_eq!(out.steps.len(), 8);
        let lrs: Vec<f64> = out.steps.iter().map(|s| s.lr).collect();
        let want: Vec<f64> = (0..8).map(|t| cosine_lr(t, 8, cfg.train.base_lr, 0.0)).collect();
        assert_eq!(lrs, want);
        assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), out.steps);
        assert_eq!(out.evals.iter().map(|e| e.step).collect::<Vec<_>>(), vec![3, 6, 8]);
        for f in [FINAL_CHECKPOINT, BEST_CHECKPOINT, EVAL_FILE, CONFIG_SNAPSHOT] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let ck = load_checkpoint::<f32>(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(ck.step, 8);
        let (model, opt, snapshot) = ck.restore().unwrap();
        assert_eq!(model.params(), out.model.params());
        assert_eq!(opt.steps(), 8);
        assert_eq!(snapshot, cfg);
    }
}
