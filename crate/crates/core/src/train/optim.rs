use std::f64::consts::PI;

use crate::nn::ParamTree;
use crate::tensor::{Element, Tensor, TensorError};
use crate::{Error, Result};

/// `min + (base - min) (1 + cos(pi t / total)) / 2`, clamped to `t <= total`.
pub fn cosine_lr(step: usize, total: usize, base: f64, min: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let t = step.min(total) as f64 / total as f64;
    min + 0.5 * (base - min) * (1.0 + (PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Update of a single tensor at step `t` (1-based): decoupled decay, then the
/// bias-corrected moment step.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Element>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    lr: f64,
    weight_decay: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    for other in [grad.shape(), m.shape(), v.shape()] {
        if other != param.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adamw",
                lhs: param.shape().to_vec(),
                rhs: other.to_vec(),
            }
            .into());
        }
    }
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let decay = 1.0 - lr * weight_decay;
    let it = param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut()));
    for ((p, &g), (m, v)) in it {
        let g = g.as_f64();
        let mf = b1 * m.as_f64() + (1.0 - b1) * g;
        let vf = b2 * v.as_f64() + (1.0 - b2) * g * g;
        *m = T::of(mf);
        *v = T::of(vf);
        let step = lr * (mf / c1) / ((vf / c2).sqrt() + hyper.eps);
        *p = T::of(p.as_f64() * decay - step);
    }
    Ok(())
}

/// AdamW state for a whole parameter tree, moments kept in naming order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub hyper: AdamHyper,
    names: Vec<String>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Element> AdamW<T> {
    pub fn new<P: ParamTree<Tensor<T>>>(params: &P) -> Self {
        let named = params.named("");
        Self {
            hyper: AdamHyper::default(),
            names: named.iter().map(|(n, _)| n.clone()).collect(),
            m: named.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            v: named.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            t: 0,
        }
    }

    /// Rebuilds state from stored moments; names must match `params`.
    pub fn from_parts<P: ParamTree<Tensor<T>>>(
        params: &P,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
        t: u64,
    ) -> Result<Self> {
        let mut out = Self::new(params);
        if m.len() != out.m.len() || v.len() != out.v.len() {
            return Err(Error::Config("optimizer state does not match the parameters".into()));
        }
        for (i, name) in out.names.iter().enumerate() {
            for (stored, fresh) in [(&m[i], &out.m[i]), (&v[i], &out.v[i])] {
                if stored.shape() != fresh.shape() {
                    return Err(Error::ShapeMismatch {
                        name: name.clone(),
                        expected: fresh.shape().to_vec(),
                        found: stored.shape().to_vec(),
                    });
                }
            }
        }
        out.m = m;
        out.v = v;
        out.t = t;
        Ok(out)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One update of every parameter; `grads` must mirror `params`.
    pub fn step<P: ParamTree<Tensor<T>>>(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let grads = grads.named("");
        if grads.len() != self.m.len() {
            return Err(Error::Config("gradient tree does not match the parameters".into()));
        }
        self.t += 1;
        let (t, hyper) = (self.t, self.hyper);
        let mut i = 0;
        let mut result = Ok(());
        params.for_each_mut("", &mut |_, p| {
            if result.is_ok() {
                result = adamw_update(p, grads[i].1, &mut self.m[i], &mut self.v[i], t, lr, weight_decay, &hyper);
            }
            i += 1;
        });
        result
    }
}
