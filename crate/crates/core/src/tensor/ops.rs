//! Forward kernels on plain tensors.
//!
//! Every function here is pure. The tape reuses them for its forward pass and
//! implements the matching adjoints in `tape.rs`.

use std::cell::Cell;

use super::{Element, Tensor, TensorError, TensorResult};

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulate iterations executed by [`matmul`] on this thread since
/// the last [`reset_mac_count`].
pub fn mac_count() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Batched matrix product `[..., m, k] @ [..., k, n] -> [..., m, n]`.
///
/// Leading dims must match exactly; there is no batch broadcasting.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra < 2 || rb < 2 || ra != rb || a.shape[..ra - 2] != b.shape[..rb - 2] {
        return Err(mismatch("matmul", &a.shape, &b.shape));
    }
    let (m, k) = (a.shape[ra - 2], a.shape[ra - 1]);
    let (k2, n) = (b.shape[rb - 2], b.shape[rb - 1]);
    if k != k2 {
        return Err(mismatch("matmul", &a.shape, &b.shape));
    }
    let batch: usize = a.shape[..ra - 2].iter().product();
    let mut out = vec![T::zero(); batch * m * n];
    let mut iters = 0u64;
    for bi in 0..batch {
        let a_mat = &a.data[bi * m * k..(bi + 1) * m * k];
        let b_mat = &b.data[bi * k * n..(bi + 1) * k * n];
        let c_mat = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let c_row = &mut c_mat[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a_mat[i * k + p];
                let b_row = &b_mat[p * n..(p + 1) * n];
                for (c, &bv) in c_row.iter_mut().zip(b_row) {
                    *c = *c + av * bv;
                }
                iters += n as u64;
            }
        }
    }
    MACS.with(|c| c.set(c.get() + iters));
    let mut shape = a.shape[..ra - 2].to_vec();
    shape.extend([m, n]);
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn swap_perm(rank: usize, axis0: usize, axis1: usize) -> TensorResult<Vec<usize>> {
    for axis in [axis0, axis1] {
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { axis, rank });
        }
    }
    if axis0 == axis1 {
        return Err(TensorError::BadPermutation(vec![axis0, axis1]));
    }
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.swap(axis0, axis1);
    Ok(perm)
}

/// Output axis `i` is input axis `perm[i]`. Always materializes a copy.
pub fn permute<T: Element>(a: &Tensor<T>, perm: &[usize]) -> TensorResult<Tensor<T>> {
    let rank = a.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank
        || perm
            .iter()
            .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
    {
        return Err(TensorError::BadPermutation(perm.to_vec()));
    }
    let in_strides = a.strides();
    let shape: Vec<usize> = perm.iter().map(|&p| a.shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(a.len());
    let mut index = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..a.len() {
        out.push(a.data[offset]);
        for ax in (0..rank).rev() {
            index[ax] += 1;
            offset += src_strides[ax];
            if index[ax] < shape[ax] {
                break;
            }
            offset -= src_strides[ax] * shape[ax];
            index[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Slice `len` entries starting at `start` along `axis`.
pub fn narrow<T: Element>(
    a: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> TensorResult<Tensor<T>> {
    if axis >= a.rank() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: a.rank(),
        });
    }
    let dim = a.shape[axis];
    if len == 0 || start + len > dim {
        let mut want = a.shape.clone();
        want[axis] = start + len;
        return Err(mismatch("narrow", &a.shape, &want));
    }
    let inner: usize = a.shape[axis + 1..].iter().product();
    let outer: usize = a.shape[..axis].iter().product();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * dim + start) * inner;
        out.extend_from_slice(&a.data[base..base + len * inner]);
    }
    let mut shape = a.shape.clone();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out))
}

/// `b` must equal `a` in shape or be a suffix of it (a rank-0 `b` is the empty suffix).
pub(crate) fn check_suffix(op: &'static str, a: &[usize], b: &[usize]) -> TensorResult<()> {
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        Ok(())
    } else {
        Err(mismatch(op, a, b))
    }
}

pub(crate) fn broadcast_zip<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> TensorResult<Tensor<T>> {
    check_suffix(op, &a.shape, &b.shape)?;
    let bl = b.len();
    let data = a
        .data
        .chunks(bl)
        .flat_map(|chunk| chunk.iter().zip(&b.data).map(|(&x, &y)| f(x, y)))
        .collect();
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    broadcast_zip("add", a, b, |x, y| x + y)
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    broadcast_zip("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    broadcast_zip("mul", a, b, |x, y| x * y)
}

pub fn scale<T: Element>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|x| x * s)
}

/// Sums a broadcast gradient back onto the suffix shape it came from.
pub(crate) fn reduce_to_suffix<T: Element>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut out = vec![T::zero(); n];
    for chunk in g.data.chunks(n) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o = *o + v;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

pub fn mean_axis<T: Element>(a: &Tensor<T>, axis: usize) -> TensorResult<Tensor<T>> {
    if axis >= a.rank() {
        return Err(TensorError::AxisOutOfRange {
            axis,
            rank: a.rank(),
        });
    }
    let n = a.shape[axis];
    let inner: usize = a.shape[axis + 1..].iter().product();
    let outer: usize = a.shape[..axis].iter().product();
    let inv = T::one() / T::of(n as f64);
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..n {
            let src = &a.data[(o * n + j) * inner..(o * n + j + 1) * inner];
            for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d = *d + v;
            }
        }
    }
    for v in &mut out {
        *v = *v * inv;
    }
    let mut shape = a.shape.clone();
    shape.remove(axis);
    Ok(Tensor::from_parts(shape, out))
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal CDF.
pub(crate) fn phi_cdf<T: Element>(x: T) -> T {
    T::of(0.5) * (T::one() + (x * T::of(INV_SQRT_2)).erf())
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<T: Element>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x * phi_cdf(x))
}

pub(crate) fn gelu_grad<T: Element>(x: T) -> T {
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    phi_cdf(x) + x * pdf
}

/// Max-subtracted softmax over the last axis.
pub fn softmax<T: Element>(a: &Tensor<T>) -> TensorResult<Tensor<T>> {
    let n = *a.shape.last().ok_or(TensorError::AxisOutOfRange { axis: 0, rank: 0 })?;
    let mut out = a.data.clone();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(Tensor::from_parts(a.shape.clone(), out))
}

/// Normalized values and per-row reciprocal standard deviations from a layer norm.
pub(crate) struct NormStats<T> {
    pub normalized: Tensor<T>,
    pub rstd: Vec<T>,
}

fn normalize_rows<T: Element>(a: &Tensor<T>, width: usize, eps: T) -> NormStats<T> {
    let n = T::of(width as f64);
    let mut normalized = a.data.clone();
    let mut rstd = Vec::with_capacity(a.len() / width);
    for row in normalized.chunks_mut(width) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * r;
        }
        rstd.push(r);
    }
    NormStats {
        normalized: Tensor::from_parts(a.shape.clone(), normalized),
        rstd,
    }
}

pub(crate) fn layer_norm_stats<T: Element>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> TensorResult<(Tensor<T>, NormStats<T>)> {
    let d = *x.shape.last().ok_or_else(|| mismatch("layer_norm", &x.shape, &scale.shape))?;
    if scale.shape != [d] || shift.shape != [d] {
        return Err(mismatch("layer_norm", &x.shape, &scale.shape));
    }
    let stats = normalize_rows(x, d, eps);
    let out = stats
        .normalized
        .data
        .chunks(d)
        .flat_map(|row| {
            row.iter()
                .zip(&scale.data)
                .zip(&shift.data)
                .map(|((&v, &g), &b)| v * g + b)
        })
        .collect();
    Ok((Tensor::from_parts(x.shape.clone(), out), stats))
}

/// `(x - mean) / sqrt(var + eps) * scale + shift` over the last axis, biased variance.
pub fn layer_norm<T: Element>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> TensorResult<Tensor<T>> {
    layer_norm_stats(x, scale, shift, eps).map(|(out, _)| out)
}

pub(crate) fn group_norm_stats<T: Element>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> TensorResult<(Tensor<T>, NormStats<T>)> {
    let r = x.rank();
    if r < 2 || scale.shape != [x.shape[r - 2]] || shift.shape != scale.shape {
        return Err(mismatch("group_norm_heads", &x.shape, &scale.shape));
    }
    let (heads, dh) = (x.shape[r - 2], x.shape[r - 1]);
    let stats = normalize_rows(x, dh, eps);
    let mut out = stats.normalized.data.clone();
    for (g, row) in out.chunks_mut(dh).enumerate() {
        let h = g % heads;
        let (s, b) = (scale.data[h], shift.data[h]);
        for v in row {
            *v = *v * s + b;
        }
    }
    Ok((Tensor::from_parts(x.shape.clone(), out), stats))
}

/// Per-head normalization of `x[..., heads, head_dim]` over `head_dim`, followed
/// by a scalar affine per head.
pub fn group_norm_heads<T: Element>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
) -> TensorResult<Tensor<T>> {
    group_norm_stats(x, scale, shift, eps).map(|(out, _)| out)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`; also returns
/// the probabilities.
pub fn cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> TensorResult<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.shape[0] != labels.len() {
        return Err(mismatch("cross_entropy", &logits.shape, &[labels.len()]));
    }
    let classes = logits.shape[1];
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::LabelOutOfRange { label, classes });
    }
    let probs = softmax(logits)?;
    let mut total = T::zero();
    for (row, &label) in logits.data.chunks(classes).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        total = total + (lse - row[label]);
    }
    Ok((total / T::of(labels.len() as f64), probs))
}

/// Checks that `cos`/`sin` of shape `[grid..., dh]` line up with `x[..., grid..., heads, dh]`.
/// Returns `(positions, heads, dh)`.
pub(crate) fn rotary_dims<T: Element>(
    x: &Tensor<T>,
    cos: &Tensor<T>,
    sin: &Tensor<T>,
) -> TensorResult<(usize, usize, usize)> {
    let (xr, cr) = (x.rank(), cos.rank());
    let bad = || mismatch("rotary", &x.shape, &cos.shape);
    if cos.shape != sin.shape || cr < 2 || xr < cr + 1 {
        return Err(bad());
    }
    let dh = cos.shape[cr - 1];
    if x.shape[xr - 1] != dh || !dh.is_multiple_of(2) || x.shape[xr - 1 - cr..xr - 2] != cos.shape[..cr - 1] {
        return Err(bad());
    }
    Ok((cos.len() / dh, x.shape[xr - 2], dh))
}

/// `out[c] = x[c] cos[c] + half(x)[c] sin[c]` with `half(x) = (-x[m..], x[..m])`, `m = dh/2`.
/// When `adjoint` is set, applies the transpose map instead.
pub(crate) fn rotate_half_pairs<T: Element>(
    x: &Tensor<T>,
    cos: &Tensor<T>,
    sin: &Tensor<T>,
    adjoint: bool,
) -> TensorResult<Tensor<T>> {
    let (positions, heads, dh) = rotary_dims(x, cos, sin)?;
    let m = dh / 2;
    let mut out = vec![T::zero(); x.len()];
    for (block, (src, dst)) in x.data.chunks(dh).zip(out.chunks_mut(dh)).enumerate() {
        let p = (block / heads) % positions;
        let c_row = &cos.data[p * dh..(p + 1) * dh];
        let s_row = &sin.data[p * dh..(p + 1) * dh];
        for c in 0..m {
            let (lo, hi) = (src[c], src[c + m]);
            if adjoint {
                // transpose of the forward map: dx = g*cos + half^T(g*sin)
                dst[c] = lo * c_row[c] + hi * s_row[c + m];
                dst[c + m] = hi * c_row[c + m] - lo * s_row[c];
            } else {
                dst[c] = lo * c_row[c] - hi * s_row[c];
                dst[c + m] = hi * c_row[c + m] + lo * s_row[c + m];
            }
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), out))
}
