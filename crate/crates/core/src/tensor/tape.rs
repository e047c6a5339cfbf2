use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops::{self, NormStats};
use super::{Element, Tensor, TensorError, TensorResult};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Narrow { x: usize, axis: usize, start: usize },
    Sum(usize),
    MeanAxis(usize, usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm { x: usize, scale: usize, shift: usize, stats: NormStats<T> },
    GroupNormHeads { x: usize, scale: usize, shift: usize, stats: NormStats<T> },
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Tensor<T> },
    RotateHalf { x: usize, cos: Arc<Tensor<T>>, sin: Arc<Tensor<T>> },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    tracked: bool,
}

/// Append-only record of differentiable operations.
///
/// Node ids are assigned in creation order, so every input precedes the nodes
/// that consume it. One tape belongs to one forward/backward pass.
pub struct Tape<T> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(tape={}, id={})", self.tape.id, self.id)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf whose gradient will be reported by [`Tape::backward`].
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Op::Leaf, value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Op::Leaf, value, false)
    }

    fn push(&self, op: Op<T>, value: Tensor<T>, tracked: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value, tracked });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].tracked)
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for every tracked leaf.
    pub fn backward(&self, loss: &Var<'_, T>) -> TensorResult<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::DetachedTensor);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.tracked {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut emit = |input: usize, grad: Tensor<T>| {
                if !nodes[input].tracked {
                    return;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(grad.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(grad),
                }
            };
            let value_of = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    let gb = ops::reduce_to_suffix(&g, value_of(*b).shape());
                    emit(*a, g);
                    emit(*b, gb);
                }
                Op::Sub(a, b) => {
                    let gb = ops::reduce_to_suffix(&g, value_of(*b).shape()).map(|v| -v);
                    emit(*a, g);
                    emit(*b, gb);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (value_of(*a), value_of(*b));
                    let ga = ops::mul(&g, bv)?;
                    let gb = ops::reduce_to_suffix(&g.zip_map(av, |x, y| x * y)?, bv.shape());
                    emit(*a, ga);
                    emit(*b, gb);
                }
                Op::Scale(a, s) => emit(*a, ops::scale(&g, *s)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (value_of(*a), value_of(*b));
                    let r = av.rank();
                    let ga = ops::matmul(&g, &bv.transpose(r - 2, r - 1)?)?;
                    let gb = ops::matmul(&av.transpose(r - 2, r - 1)?, &g)?;
                    emit(*a, ga);
                    emit(*b, gb);
                }
                Op::Permute(a, perm) => emit(*a, ops::permute(&g, &ops::inverse_perm(perm))?),
                Op::Reshape(a) => {
                    let shape = value_of(*a).shape().to_vec();
                    emit(*a, Tensor::from_parts(shape, g.into_data()));
                }
                Op::Narrow { x, axis, start } => {
                    let xv = value_of(*x);
                    let inner: usize = xv.shape()[axis + 1..].iter().product();
                    let dim = xv.shape()[*axis];
                    let len = g.shape()[*axis];
                    let mut full = vec![T::zero(); xv.len()];
                    for (o, chunk) in g.data().chunks(len * inner).enumerate() {
                        let base = (o * dim + start) * inner;
                        full[base..base + len * inner].copy_from_slice(chunk);
                    }
                    emit(*x, Tensor::from_parts(xv.shape().to_vec(), full));
                }
                Op::Sum(a) => {
                    let seed = g.data()[0];
                    emit(*a, Tensor::full(value_of(*a).shape(), seed));
                }
                Op::MeanAxis(a, axis) => {
                    let shape = value_of(*a).shape().to_vec();
                    let n = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let inv = T::one() / T::of(n as f64);
                    let mut full = Vec::with_capacity(g.len() * n);
                    for chunk in g.data().chunks(inner) {
                        for _ in 0..n {
                            full.extend(chunk.iter().map(|&v| v * inv));
                        }
                    }
                    emit(*a, Tensor::from_parts(shape, full));
                }
                Op::Gelu(a) => {
                    let grad = g.zip_map(value_of(*a), |gv, x| gv * ops::gelu_grad(x))?;
                    emit(*a, grad);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let n = *y.shape().last().unwrap();
                    let mut out = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                    }
                    emit(*a, Tensor::from_parts(y.shape().to_vec(), out));
                }
                Op::LayerNorm { x, scale, shift, stats } => {
                    let sv = value_of(*scale);
                    let d = sv.len();
                    let (gx, gs, gb) = norm_backward(&g, stats, d, |_, c| sv.data()[c], |_, c| c, d);
                    emit(*x, gx);
                    emit(*scale, gs);
                    emit(*shift, gb);
                }
                Op::GroupNormHeads { x, scale, shift, stats } => {
                    let sv = value_of(*scale);
                    let heads = sv.len();
                    let dh = *g.shape().last().unwrap();
                    let (gx, gs, gb) = norm_backward(
                        &g,
                        stats,
                        dh,
                        |row, _| sv.data()[row % heads],
                        |row, _| row % heads,
                        heads,
                    );
                    emit(*x, gx);
                    emit(*scale, gs);
                    emit(*shift, gb);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let classes = probs.shape()[1];
                    let k = g.data()[0] / T::of(labels.len() as f64);
                    let mut out = probs.data().to_vec();
                    for (row, &label) in out.chunks_mut(classes).zip(labels) {
                        row[label] = row[label] - T::one();
                        for v in row.iter_mut() {
                            *v = *v * k;
                        }
                    }
                    emit(*logits, Tensor::from_parts(probs.shape().to_vec(), out));
                }
                Op::RotateHalf { x, cos, sin } => {
                    emit(*x, ops::rotate_half_pairs(&g, cos, sin, true)?);
                }
            }
        }
        drop(nodes);
        Ok(Gradients {
            tape_id: self.id,
            grads,
        })
    }
}

/// Shared adjoint of layer norm and per-head group norm.
///
/// `affine(row, c)` is the scale multiplying normalized entry `c` of `row`, and
/// `slot(row, c)` the index of that scale/shift parameter.
fn norm_backward<T: Element>(
    g: &Tensor<T>,
    stats: &NormStats<T>,
    width: usize,
    affine: impl Fn(usize, usize) -> T,
    slot: impl Fn(usize, usize) -> usize,
    params: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let n = T::of(width as f64);
    let mut gx = vec![T::zero(); g.len()];
    let mut gs = vec![T::zero(); params];
    let mut gb = vec![T::zero(); params];
    let rows = g.data().chunks(width).zip(stats.normalized.data().chunks(width));
    for (row, ((gr, xr), out)) in rows.zip(gx.chunks_mut(width)).enumerate() {
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for c in 0..width {
            let d = gr[c] * affine(row, c);
            mean_d = mean_d + d;
            mean_dx = mean_dx + d * xr[c];
            let k = slot(row, c);
            gs[k] = gs[k] + gr[c] * xr[c];
            gb[k] = gb[k] + gr[c];
        }
        mean_d = mean_d / n;
        mean_dx = mean_dx / n;
        let r = stats.rstd[row];
        for c in 0..width {
            let d = gr[c] * affine(row, c);
            out[c] = r * (d - mean_d - xr[c] * mean_dx);
        }
    }
    (
        Tensor::from_parts(g.shape().to_vec(), gx),
        Tensor::from_parts(vec![params], gs),
        Tensor::from_parts(vec![params], gb),
    )
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    tape_id: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a tracked leaf, or `None` when the loss does not depend on it.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        if var.tape.id != self.tape_id {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but yields zeros for leaves the loss ignores.
    pub fn wrt(&self, var: &Var<'_, T>) -> TensorResult<Tensor<T>> {
        if var.tape.id != self.tape_id {
            return Err(TensorError::DetachedTensor);
        }
        Ok(self
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape())))
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    fn same_tape(&self, other: &Var<'_, T>) -> TensorResult<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::DetachedTensor)
        }
    }

    fn unary(
        &self,
        f: impl FnOnce(&Tensor<T>) -> TensorResult<(Tensor<T>, Op<T>)>,
    ) -> TensorResult<Var<'t, T>> {
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value)?
        };
        let tracked = self.tape.tracked(&[self.id]);
        Ok(self.tape.push(op, value, tracked))
    }

    fn binary(
        &self,
        other: &Var<'_, T>,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> TensorResult<Tensor<T>>,
        op: Op<T>,
    ) -> TensorResult<Var<'t, T>> {
        self.same_tape(other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        let tracked = self.tape.tracked(&[self.id, other.id]);
        Ok(self.tape.push(op, value, tracked))
    }

    /// Elementwise sum; `rhs` may be a suffix of `self`'s shape.
    pub fn add(&self, rhs: &Var<'_, T>) -> TensorResult<Var<'t, T>> {
        self.binary(rhs, ops::add, Op::Add(self.id, rhs.id))
    }

    pub fn sub(&self, rhs: &Var<'_, T>) -> TensorResult<Var<'t, T>> {
        self.binary(rhs, ops::sub, Op::Sub(self.id, rhs.id))
    }

    pub fn mul(&self, rhs: &Var<'_, T>) -> TensorResult<Var<'t, T>> {
        self.binary(rhs, ops::mul, Op::Mul(self.id, rhs.id))
    }

    pub fn scale(&self, s: T) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| Ok((ops::scale(x, s), Op::Scale(id, s))))
    }

    pub fn matmul(&self, rhs: &Var<'_, T>) -> TensorResult<Var<'t, T>> {
        self.binary(rhs, ops::matmul, Op::MatMul(self.id, rhs.id))
    }

    pub fn permute(&self, perm: &[usize]) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| Ok((ops::permute(x, perm)?, Op::Permute(id, perm.to_vec()))))
    }

    pub fn transpose(&self, axis0: usize, axis1: usize) -> TensorResult<Var<'t, T>> {
        let perm = ops::swap_perm(self.shape().len(), axis0, axis1)?;
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| Ok((x.reshape(shape)?, Op::Reshape(id))))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| Ok((ops::narrow(x, axis, start, len)?, Op::Narrow { x: id, axis, start })))
    }

    /// Sum of all entries as a rank-0 value.
    pub fn sum(&self) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| Ok((Tensor::scalar(x.sum()), Op::Sum(id))))
    }

    pub fn mean_axis(&self, axis: usize) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| Ok((ops::mean_axis(x, axis)?, Op::MeanAxis(id, axis))))
    }

    pub fn gelu(&self) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| Ok((ops::gelu(x), Op::Gelu(id))))
    }

    pub fn softmax(&self) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| Ok((ops::softmax(x)?, Op::Softmax(id))))
    }

    pub fn layer_norm(
        &self,
        scale: &Var<'_, T>,
        shift: &Var<'_, T>,
        eps: T,
    ) -> TensorResult<Var<'t, T>> {
        self.same_tape(scale)?;
        self.same_tape(shift)?;
        let (value, stats) = {
            let nodes = self.tape.nodes.borrow();
            ops::layer_norm_stats(
                &nodes[self.id].value,
                &nodes[scale.id].value,
                &nodes[shift.id].value,
                eps,
            )?
        };
        let op = Op::LayerNorm {
            x: self.id,
            scale: scale.id,
            shift: shift.id,
            stats,
        };
        let tracked = self.tape.tracked(&[self.id, scale.id, shift.id]);
        Ok(self.tape.push(op, value, tracked))
    }

    /// See [`ops::group_norm_heads`].
    pub fn group_norm_heads(
        &self,
        scale: &Var<'_, T>,
        shift: &Var<'_, T>,
        eps: T,
    ) -> TensorResult<Var<'t, T>> {
        self.same_tape(scale)?;
        self.same_tape(shift)?;
        let (value, stats) = {
            let nodes = self.tape.nodes.borrow();
            ops::group_norm_stats(
                &nodes[self.id].value,
                &nodes[scale.id].value,
                &nodes[shift.id].value,
                eps,
            )?
        };
        let op = Op::GroupNormHeads {
            x: self.id,
            scale: scale.id,
            shift: shift.id,
            stats,
        };
        let tracked = self.tape.tracked(&[self.id, scale.id, shift.id]);
        Ok(self.tape.push(op, value, tracked))
    }

    /// Mean cross entropy of `[batch, classes]` logits against integer labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| {
            let (loss, probs) = ops::cross_entropy(x, labels)?;
            let op = Op::CrossEntropy {
                logits: id,
                labels: labels.to_vec(),
                probs,
            };
            Ok((Tensor::scalar(loss), op))
        })
    }

    /// Rotate-half rotation of `self[..., grid..., heads, dh]` by angle tables of
    /// shape `[grid..., dh]`, shared across heads and leading dims.
    pub fn rotate_half(
        &self,
        cos: &Arc<Tensor<T>>,
        sin: &Arc<Tensor<T>>,
    ) -> TensorResult<Var<'t, T>> {
        let id = self.id;
        self.unary(|x| {
            let out = ops::rotate_half_pairs(x, cos, sin, false)?;
            let op = Op::RotateHalf {
                x: id,
                cos: Arc::clone(cos),
                sin: Arc::clone(sin),
            };
            Ok((out, op))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.var(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = x.mul(&x).unwrap().sum().unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn matmul_gradient_is_ones_times_b_transpose() {
        let tape = Tape::new();
        let a = tape.var(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.var(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let loss = a.matmul(&b).unwrap().sum().unwrap();
        let grads = tape.backward(&loss).unwrap();
        // dA[i, p] = sum_j B[p, j]
        assert_eq!(grads.get(&a).unwrap().data(), &[6.0, 15.0, 6.0, 15.0]);
        // dB[p, j] = sum_i A[i, p]
        assert_eq!(grads.get(&b).unwrap().data(), &[4.0, 4.0, 4.0, 6.0, 6.0, 6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[1.0, -1.0]));
        let y = x.add(&x).unwrap().add(&x).unwrap().sum().unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[5.0, 5.0]));
        let y = x.mul(&c).unwrap().sum().unwrap();
        let grads = tape.backward(&y).unwrap();
        assert!(grads.get(&c).is_none());
        assert_eq!(grads.get(&x).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(&x), Err(TensorError::NotScalar(_))));

        let other = Tape::new();
        let y = other.var(t(&[], &[1.0]));
        assert!(matches!(tape.backward(&y), Err(TensorError::DetachedTensor)));
        assert!(matches!(x.add(&y), Err(TensorError::DetachedTensor)));
    }

    #[test]
    fn node_ids_are_topological() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[1.0, 2.0]));
        let y = x.gelu().unwrap();
        let z = y.mul(&x).unwrap();
        assert!(x.id < y.id && y.id < z.id);
        assert_eq!(tape.len(), 3);
    }
}
