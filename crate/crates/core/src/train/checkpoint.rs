//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "CATCKPT1" | u32 version | u32 tensor count
//! per tensor: u16 name len | name | u8 dtype (0 f32, 1 f64) | u8 rank | rank x u64 dims | data
//! u32 config len | config JSON | u64 step
//! ```
//!
//! Model tensors use the parameter names; optimizer moments are stored as
//! `adam.m.<name>` and `adam.v.<name>`, followed by the scalar `adam.t`.

use std::fs;
use std::path::Path;

use crate::model::{param_shapes, CatModel, ModelParams};
use crate::nn::ParamTree;
use crate::tensor::{DType, Element, Tensor};
use crate::train::{AdamW, RunConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CATCKPT1";
pub const VERSION: u32 = 1;

/// Raw contents of a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub tensors: Vec<(String, Tensor<T>)>,
    pub config_json: String,
    pub step: u64,
}

impl<T: Element> Checkpoint<T> {
    /// Snapshot of a model, its optimizer and the run config.
    pub fn capture(model: &CatModel<T>, opt: &AdamW<T>, config: &RunConfig, step: u64) -> Self {
        let mut tensors: Vec<(String, Tensor<T>)> = model
            .params()
            .named("")
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        for (name, m) in opt.names().iter().zip(opt.first_moments()) {
            tensors.push((format!("adam.m.{name}"), m.clone()));
        }
        for (name, v) in opt.names().iter().zip(opt.second_moments()) {
            tensors.push((format!("adam.v.{name}"), v.clone()));
        }
        tensors.push(("adam.t".into(), Tensor::scalar(T::of(opt.steps() as f64))));
        Self {
            tensors,
            config_json: serde_json::to_string(config).expect("config serializes"),
            step,
        }
    }

    pub fn config(&self) -> Result<RunConfig> {
        Ok(serde_json::from_str(&self.config_json)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.code());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.put_le(&mut out);
            }
        }
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| Error::BadMagic)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Config("tensor name is not UTF-8".into()))?;
            let dtype = DType::from_code(r.u8()?).ok_or_else(|| Error::Config(format!("{name}: unknown dtype")))?;
            if dtype != T::DTYPE {
                return Err(Error::Config(format!("{name}: stored as {dtype:?}, expected {:?}", T::DTYPE)));
            }
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let width = dtype.size_of();
            let raw = r.take(n.checked_mul(width).ok_or(Error::TruncatedFile)?)?;
            let data = raw.chunks(width).map(T::get_le).collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        let len = r.u32()? as usize;
        let config_json = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Config("config snapshot is not UTF-8".into()))?;
        let step = r.u64()?;
        Ok(Self {
            tensors,
            config_json,
            step,
        })
    }

    /// Rebuilds the model and optimizer, checking every name and shape against
    /// the stored config.
    pub fn restore(&self) -> Result<(CatModel<T>, AdamW<T>, RunConfig)> {
        let config = self.config()?;
        let shapes = param_shapes(&config.model);
        let mut by_name: std::collections::HashMap<&str, &Tensor<T>> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let t = by_name.remove(name).ok_or_else(|| Error::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: vec![],
            })?;
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            Ok(t.clone())
        };
        let mut leaves = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            leaves.push(take(name, shape)?);
        }
        let m = shapes
            .iter()
            .map(|(n, s)| take(&format!("adam.m.{n}"), s))
            .collect::<Result<Vec<_>>>()?;
        let v = shapes
            .iter()
            .map(|(n, s)| take(&format!("adam.v.{n}"), s))
            .collect::<Result<Vec<_>>>()?;
        let t = take("adam.t", &[])?.item()?.as_f64() as u64;
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::UnknownTensor(extra.to_string()));
        }
        let mut it = leaves.into_iter();
        let template = crate::model::build_params(&config.model, |_, _| ());
        let params: ModelParams<Tensor<T>> = template.map("", |_, _| it.next().expect("one per name"));
        let model = CatModel::from_params(config.model.clone(), params)?;
        let opt = AdamW::from_parts(model.params(), m, v, t)?;
        Ok((model, opt, config))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile)?;
        let out = self.bytes.get(self.pos..end).ok_or(Error::TruncatedFile)?;
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    model: &CatModel<T>,
    opt: &AdamW<T>,
    config: &RunConfig,
    step: u64,
) -> Result<()> {
    fs::write(path, Checkpoint::capture(model, opt, config, step).to_bytes())?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CatConfig;

    fn sample() -> (CatModel<f32>, AdamW<f32>, RunConfig) {
        let config = RunConfig {
            model: CatConfig::toy(),
            ..RunConfig::default()
        };
        let model = CatModel::new(config.model.clone(), 5).unwrap();
        let mut opt = AdamW::new(model.params());
        let mut params = model.params().clone();
        let grads = params.map("", |_, t| t.map(|v| v * 3.0 + 0.01));
        opt.step(&mut params, &grads, 1e-3, 0.01).unwrap();
        let model = CatModel::from_params(config.model.clone(), params).unwrap();
        (model, opt, config)
    }

    #[test]
    fn round_trip_is_exact() {
        let (model, opt, config) = sample();
        let bytes = Checkpoint::capture(&model, &opt, &config, 17).to_bytes();
        let ck = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(ck.step, 17);
        assert_eq!(ck.to_bytes(), bytes);
        let (m2, o2, c2) = ck.restore().unwrap();
        assert_eq!(m2.params(), model.params());
        assert_eq!(o2, opt);
        assert_eq!(c2, config);
        let count: usize = ck
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with("adam."))
            .map(|(_, t)| t.len())
            .sum();
        assert_eq!(count as u64, model.param_count());
    }

    #[test]
    fn corrupt_files() {
        let (model, opt, config) = sample();
        let bytes = Checkpoint::capture(&model, &opt, &config, 1).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bad),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::TruncatedFile)
        ));
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());

        let mut ck = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        ck.tensors[0].1 = Tensor::zeros(&[3]);
        assert!(matches!(ck.restore(), Err(Error::ShapeMismatch { .. })));
        let mut ck = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        ck.tensors.push(("stray".into(), Tensor::zeros(&[1])));
        assert!(matches!(ck.restore(), Err(Error::UnknownTensor(n)) if n == "stray"));
    }
}
