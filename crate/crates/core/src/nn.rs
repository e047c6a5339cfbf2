//! Parameter containers shared by the attention and model code.
//!
//! Containers are generic over the leaf type `P`: `Tensor<T>` for stored
//! weights, `Var<'t, T>` once bound to a tape for one forward pass.

use crate::tensor::{Element, TensorResult, Var};

/// Structured collection of named parameters.
pub trait ParamTree<P> {
    type Mapped<Q>;

    /// Rebuilds the tree with `f` applied to every leaf, in naming order.
    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> Result<Q, E>,
    ) -> Result<Self::Mapped<Q>, E>;

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P));

    fn map<'a, Q>(&'a self, prefix: &str, mut f: impl FnMut(&str, &'a P) -> Q) -> Self::Mapped<Q>
    where
        P: 'a,
    {
        match self.try_map::<Q, std::convert::Infallible>(prefix, &mut |n, p| Ok(f(n, p))) {
            Ok(out) => out,
            Err(never) => match never {},
        }
    }

    /// Leaves with their full names, in naming order.
    fn named<'a>(&'a self, prefix: &str) -> Vec<(String, &'a P)>
    where
        P: 'a,
    {
        let mut out = Vec::new();
        self.map(prefix, |n, p| out.push((n.to_string(), p)));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `x @ weight + bias` with `weight: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

impl<P> ParamTree<P> for Linear<P> {
    type Mapped<Q> = Linear<Q>;

    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> Result<Q, E>,
    ) -> Result<Linear<Q>, E> {
        Ok(Linear {
            weight: f(&join(prefix, "weight"), &self.weight)?,
            bias: f(&join(prefix, "bias"), &self.bias)?,
        })
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Scale and shift of a normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm<P> {
    pub scale: P,
    pub shift: P,
}

impl<P> ParamTree<P> for Norm<P> {
    type Mapped<Q> = Norm<Q>;

    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> Result<Q, E>,
    ) -> Result<Norm<Q>, E> {
        Ok(Norm {
            scale: f(&join(prefix, "scale"), &self.scale)?,
            shift: f(&join(prefix, "shift"), &self.shift)?,
        })
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "scale"), &mut self.scale);
        f(&join(prefix, "shift"), &mut self.shift);
    }
}

/// Applies `p` to the last axis of `x`, keeping the leading shape.
pub fn linear<'t, T: Element>(x: &Var<'t, T>, p: &Linear<Var<'t, T>>) -> TensorResult<Var<'t, T>> {
    let shape = x.shape();
    let w = p.weight.shape();
    let rows = shape[..shape.len().saturating_sub(1)].iter().product();
    let flat = x.reshape(&[rows, *shape.last().unwrap_or(&1)])?;
    let mut out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
    out_shape.push(*w.last().unwrap_or(&1));
    flat.matmul(&p.weight)?.reshape(&out_shape)?.add(&p.bias)
}
