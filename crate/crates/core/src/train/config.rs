use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::CatConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        classes: usize,
        train_samples: usize,
        val_samples: usize,
    },
    Cifar10 {
        path: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        val_limit: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            classes: 10,
            train_samples: 3200,
            val_samples: 640,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    /// Sole source of randomness: init, shuffling, flips, synthetic noise.
    pub seed: u64,
    pub dataset: DatasetSpec,
    /// Steps between evaluations; 0 evaluates only after the last step.
    pub eval_every: usize,
    pub out_dir: PathBuf,
    /// Stops early after this many steps; the schedule still spans all epochs.
    pub max_steps: Option<usize>,
    pub hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            base_lr: 3e-4,
            min_lr: 0.0,
            weight_decay: 0.01,
            seed: 0,
            dataset: DatasetSpec::default(),
            eval_every: 100,
            out_dir: PathBuf::from("runs/cat"),
            max_steps: None,
            hflip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.base_lr > self.min_lr && self.min_lr >= 0.0) {
            return bad("need base_lr > min_lr >= 0");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Everything a run needs; the JSON form is the config file format.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: CatConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match &self.train.dataset {
            DatasetSpec::Synthetic { classes, .. } if *classes != self.model.num_classes => Err(Error::Config(format!(
                "synthetic classes {classes} != model num_classes {}",
                self.model.num_classes
            ))),
            DatasetSpec::Cifar10 { .. }
                if self.model.num_classes != 10 || self.model.image_size != 32 || self.model.channels != 3 =>
            {
                Err(Error::Config("CIFAR-10 needs 32x32 RGB input and 10 classes".into()))
            }
            _ => Ok(()),
        }
    }

    /// Applies `key=value`. `key` is a dotted path (`train.base_lr`) or a bare
    /// field name that occurs exactly once. `value` is parsed as JSON, falling
    /// back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let mut tree = serde_json::to_value(&*self)?;
        let path = resolve_key(&tree, key.trim())?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut tree;
        for part in &path {
            slot = slot
                .get_mut(part.as_str())
                .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }
}

fn leaf_paths(value: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if let Value::Object(map) = value {
        for (k, v) in map {
            prefix.push(k.clone());
            out.push(prefix.clone());
            leaf_paths(v, prefix, out);
            prefix.pop();
        }
    }
}

fn resolve_key(tree: &Value, key: &str) -> Result<Vec<String>> {
    let mut all = Vec::new();
    leaf_paths(tree, &mut Vec::new(), &mut all);
    let parts: Vec<String> = key.split('.').map(str::to_string).collect();
    if all.contains(&parts) {
        return Ok(parts);
    }
    let matches: Vec<_> = all.into_iter().filter(|p| p.ends_with(&parts)).collect();
    match matches.len() {
        1 => Ok(matches.into_iter().next().expect("one match")),
        0 => Err(Error::Config(format!("unknown key {key:?}"))),
        _ => Err(Error::Config(format!(
            "ambiguous key {key:?}: {}",
            matches.iter().map(|p| p.join(".")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.base_lr=0.001").unwrap();
        assert_eq!(cfg.train.base_lr, 0.001);
        cfg.apply_override("hidden=32").unwrap();
        assert_eq!(cfg.model.hidden, 32);
        cfg.apply_override("out_dir=/tmp/x").unwrap();
        assert_eq!(cfg.train.out_dir, PathBuf::from("/tmp/x"));
        cfg.apply_override("imprint_mode=forward_decay").unwrap();
        cfg.apply_override("max_steps=20").unwrap();
        assert_eq!(cfg.train.max_steps, Some(20));
        cfg.apply_override("dataset.train_samples=64").unwrap();
        assert!(matches!(cfg.train.dataset, DatasetSpec::Synthetic { train_samples: 64, .. }));
        assert!(cfg.apply_override("nonsense=1").is_err());
        assert!(cfg.apply_override("hidden=\"abc\"").is_err());
        assert!(cfg.apply_override("hidden").is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = RunConfig::from_json(r#"{"train": {"epochs": 2}}"#).unwrap();
        assert_eq!(partial.train.epochs, 2);
        assert!(RunConfig::from_json(r#"{"training": {}}"#).is_err());
        let cifar = RunConfig::from_json(r#"{"train": {"dataset": {"kind": "cifar10", "path": "/d"}}}"#).unwrap();
        cifar.validate().unwrap();
    }

    #[test]
    fn validation() {
        RunConfig::default().validate().unwrap();
        let mut cfg = RunConfig::default();
        cfg.train.min_lr = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.model.num_classes = 5;
        assert!(cfg.validate().is_err());
    }
}
