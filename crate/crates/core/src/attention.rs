//! Cross-axis attention and the softmax baseline.
//!
//! Cross-axis attention works on a square `S x S` grid of tokens and never
//! normalizes its attention scores. Per head, with rows `r`/`x` and columns
//! `i`/`s`:
//!
//! ```text
//! A[r, i, j]  = sum_e q[r, i, e] k[r, j, e]     (row-wise Q K^T)
//! O[s, x, :]  = sum_j A[x, s, j] v[s, j, :]     (batched over the swapped axis)
//! out[x, s]   = O[s, x]
//! ```
//!
//! Both stages are batched matrix products, `S^3 * head_dim` multiply-adds each.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::nn::{join, linear, Linear, Norm, ParamTree};
use crate::rope::{GridSpec, RotaryTables};
use crate::tensor::{Element, Tensor, Var};
use crate::{Error, Result};

/// Per-head key scaling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `1 - 2^(-5 - h)` for head `h`.
    #[default]
    Retnet,
    Ones,
}

pub fn head_gammas(mode: GammaMode, heads: usize) -> Vec<f64> {
    match mode {
        GammaMode::Retnet => (0..heads).map(|h| 1.0 - 2f64.powi(-5 - h as i32)).collect(),
        GammaMode::Ones => vec![1.0; heads],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub hidden: usize,
    pub heads: usize,
    /// Side length of the square patch grid.
    pub grid: usize,
    pub gamma_mode: GammaMode,
    pub use_rotary: bool,
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        let dh = self.head_dim();
        if dh == 0 || !dh.is_multiple_of(4) {
            return Err(Error::BadHeadDim(dh));
        }
        if self.grid == 0 {
            return Err(Error::Config("grid must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossAxisParams<P> {
    /// `[hidden, 3 * hidden]`, columns ordered q | k | v.
    pub qkv: Linear<P>,
    /// One scalar scale/shift per head.
    pub group_norm: Norm<P>,
    pub out: Linear<P>,
}

impl<P> ParamTree<P> for CrossAxisParams<P> {
    type Mapped<Q> = CrossAxisParams<Q>;

    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<CrossAxisParams<Q>, E> {
        Ok(CrossAxisParams {
            qkv: self.qkv.try_map(&join(prefix, "qkv"), f)?,
            group_norm: self.group_norm.try_map(&join(prefix, "group_norm"), f)?,
            out: self.out.try_map(&join(prefix, "out"), f)?,
        })
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.qkv.for_each_mut(&join(prefix, "qkv"), f);
        self.group_norm.for_each_mut(&join(prefix, "group_norm"), f);
        self.out.for_each_mut(&join(prefix, "out"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxParams<P> {
    pub qkv: Linear<P>,
    pub out: Linear<P>,
}

impl<P> ParamTree<P> for SoftmaxParams<P> {
    type Mapped<Q> = SoftmaxParams<Q>;

    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<SoftmaxParams<Q>, E> {
        Ok(SoftmaxParams {
            qkv: self.qkv.try_map(&join(prefix, "qkv"), f)?,
            out: self.out.try_map(&join(prefix, "out"), f)?,
        })
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.qkv.for_each_mut(&join(prefix, "qkv"), f);
        self.out.for_each_mut(&join(prefix, "out"), f);
    }
}

/// One affine map to `3 * hidden` channels, split into q, k, v of shape
/// `[..., heads, head_dim]`.
pub fn qkv_project<'t, T: Element>(
    x: &Var<'t, T>,
    qkv: &Linear<Var<'t, T>>,
    heads: usize,
) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
    let shape = x.shape();
    let hidden = *shape.last().ok_or(Error::Config("rank-0 input".into()))?;
    if heads == 0 || hidden % heads != 0 {
        return Err(Error::Config(format!("hidden {hidden} not divisible by {heads} heads")));
    }
    let proj = linear(x, qkv)?;
    let axis = shape.len() - 1;
    let mut head_shape = shape[..axis].to_vec();
    head_shape.extend([heads, hidden / heads]);
    let split = |i: usize| -> Result<Var<'t, T>> {
        Ok(proj.narrow(axis, i * hidden, hidden)?.reshape(&head_shape)?)
    };
    Ok((split(0)?, split(1)?, split(2)?))
}

/// Multiplies head `h` of `k[..., heads, head_dim]` by `gammas[h]`.
pub fn gamma_scale_keys<'t, T: Element>(k: &Var<'t, T>, gammas: &[f64]) -> Result<Var<'t, T>> {
    let shape = k.shape();
    let dh = *shape.last().unwrap_or(&1);
    let table = Tensor::from_fn(&[gammas.len(), dh], |i| T::of(gammas[i / dh]));
    Ok(k.mul(&k.tape().constant(table))?)
}

fn grid_dims(shape: &[usize]) -> Result<(usize, usize)> {
    let r = shape.len();
    if r < 4 {
        return Err(Error::Config(format!("expected [..., S, S, heads, head_dim], got {shape:?}")));
    }
    let (rows, cols) = (shape[r - 4], shape[r - 3]);
    if rows != cols {
        return Err(Error::NotSquareGrid { rows, cols });
    }
    Ok((r - 4, rows))
}

/// The two-stage cross-axis contraction on `[..., S, S, heads, head_dim]`
/// inputs; output has the same shape, in (row, col) order.
pub fn cross_axis_contract<'t, T: Element>(
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = q.shape();
    let (lead, _) = grid_dims(&shape)?;
    for other in [k.shape(), v.shape()] {
        if other != shape {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "cross_axis_contract",
                lhs: shape.clone(),
                rhs: other,
            }
            .into());
        }
    }
    let r = shape.len();
    // [..., row, col, head, e] -> [..., head, row, col, e]
    let mut to_heads: Vec<usize> = (0..lead).collect();
    to_heads.extend([lead + 2, lead, lead + 1, lead + 3]);
    let mut from_heads: Vec<usize> = (0..lead).collect();
    from_heads.extend([lead + 1, lead + 2, lead, lead + 3]);

    let qh = q.permute(&to_heads)?;
    let kh = k.permute(&to_heads)?;
    let vh = v.permute(&to_heads)?;
    // stage 1: [.., h, r, i, e] @ [.., h, r, e, j] -> [.., h, r, i, j]
    let scores = qh.matmul(&kh.transpose(r - 2, r - 1)?)?;
    // stage 2: [.., h, i, r, j] @ [.., h, i, j, e] -> [.., h, s, x, e]
    let mixed = scores.transpose(r - 3, r - 2)?.matmul(&vh)?;
    let out = mixed.transpose(r - 3, r - 2)?;
    Ok(out.permute(&from_heads)?)
}

/// Cross-axis attention layer: hyperparameters, fixed per-head gammas and
/// rotary tables. Weights are passed to [`forward`](Self::forward).
#[derive(Clone, Debug)]
pub struct CrossAxisAttention<T> {
    config: AttentionConfig,
    gammas: Vec<f64>,
    tables: Option<RotaryTables<T>>,
    eps: f64,
}

impl<T: Element> CrossAxisAttention<T> {
    pub fn new(config: AttentionConfig) -> Result<Self> {
        config.validate()?;
        let tables = if config.use_rotary {
            Some(RotaryTables::build(GridSpec::square(config.grid, config.head_dim())?)?)
        } else {
            None
        };
        Ok(Self {
            config,
            gammas: head_gammas(config.gamma_mode, config.heads),
            tables,
            eps: 1e-5,
        })
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn tables(&self) -> Option<&RotaryTables<T>> {
        self.tables.as_ref()
    }

    /// `x[..., S, S, hidden]`; `imprint`, when given, is added to `x` first.
    pub fn forward<'t>(
        &self,
        x: &Var<'t, T>,
        params: &CrossAxisParams<Var<'t, T>>,
        imprint: Option<&Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let r = shape.len();
        if r < 3 || shape[r - 1] != self.config.hidden {
            return Err(Error::Config(format!(
                "expected [..., S, S, {}], got {shape:?}",
                self.config.hidden
            )));
        }
        if shape[r - 3] != shape[r - 2] {
            return Err(Error::NotSquareGrid {
                rows: shape[r - 3],
                cols: shape[r - 2],
            });
        }
        let x = match imprint {
            Some(e) => x.add(e)?,
            None => *x,
        };
        let (q, k, v) = qkv_project(&x, &params.qkv, self.config.heads)?;
        let k = gamma_scale_keys(&k, &self.gammas)?;
        let (q, k) = match &self.tables {
            Some(t) => (t.apply_var(&q)?, t.apply_var(&k)?),
            None => (q, k),
        };
        let mixed = cross_axis_contract(&q, &k, &v)?;
        let normed = mixed.group_norm_heads(
            &params.group_norm.scale,
            &params.group_norm.shift,
            T::of(self.eps),
        )?;
        let merged = normed.reshape(&shape)?;
        Ok(linear(&merged, &params.out)?)
    }
}

/// Positional treatment for the softmax baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosMode {
    #[default]
    Rotary,
    /// Fixed 1D sinusoid over the flattened tokens, added to the attention input.
    Sinusoidal,
    None,
}

/// Standard `[tokens, hidden]` sine/cosine table.
pub fn sinusoidal_table<T: Element>(tokens: usize, hidden: usize) -> Tensor<T> {
    Tensor::from_fn(&[tokens, hidden], |i| {
        let (pos, c) = (i / hidden, i % hidden);
        let freq = 10000f64.powf(-((c / 2 * 2) as f64) / hidden as f64);
        let angle = pos as f64 * freq;
        T::of(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Softmax attention over the flattened `S * S` tokens of a square grid.
#[derive(Clone, Debug)]
pub struct SoftmaxAttention<T> {
    heads: usize,
    hidden: usize,
    grid: usize,
    pos_mode: PosMode,
    tables: Option<RotaryTables<T>>,
    sinusoid: Option<Arc<Tensor<T>>>,
}

impl<T: Element> SoftmaxAttention<T> {
    pub fn new(hidden: usize, heads: usize, grid: usize, pos_mode: PosMode) -> Result<Self> {
        let cfg = AttentionConfig {
            hidden,
            heads,
            grid,
            gamma_mode: GammaMode::Ones,
            use_rotary: pos_mode == PosMode::Rotary,
        };
        cfg.validate()?;
        let tables = match pos_mode {
            PosMode::Rotary => Some(RotaryTables::build(GridSpec::square(grid, cfg.head_dim())?)?),
            _ => None,
        };
        let sinusoid = match pos_mode {
            PosMode::Sinusoidal => Some(Arc::new(sinusoidal_table(grid * grid, hidden))),
            _ => None,
        };
        Ok(Self {
            heads,
            hidden,
            grid,
            pos_mode,
            tables,
            sinusoid,
        })
    }

    pub fn pos_mode(&self) -> PosMode {
        self.pos_mode
    }

    /// `x[..., N, hidden]` with `N = S * S` -> same shape.
    pub fn forward<'t>(&self, x: &Var<'t, T>, params: &SoftmaxParams<Var<'t, T>>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let r = shape.len();
        let tokens = self.grid * self.grid;
        if r < 2 || shape[r - 1] != self.hidden || shape[r - 2] != tokens {
            return Err(Error::Config(format!(
                "expected [..., {tokens}, {}], got {shape:?}",
                self.hidden
            )));
        }
        let x = match &self.sinusoid {
            Some(table) => x.add(&x.tape().constant((**table).clone()))?,
            None => *x,
        };
        let (q, k, v) = qkv_project(&x, &params.qkv, self.heads)?;
        let (q, k) = match &self.tables {
            Some(t) => {
                let dh = self.hidden / self.heads;
                let mut grid_shape = shape[..r - 2].to_vec();
                grid_shape.extend([self.grid, self.grid, self.heads, dh]);
                let head_shape = q.shape();
                let rot = |z: &Var<'t, T>| -> Result<Var<'t, T>> {
                    Ok(t.apply_var(&z.reshape(&grid_shape)?)?.reshape(&head_shape)?)
                };
                (rot(&q)?, rot(&k)?)
            }
            None => (q, k),
        };
        // [..., N, H, dh] <-> [..., H, N, dh]
        let swap = r - 2;
        let qh = q.transpose(swap, swap + 1)?;
        let kh = k.transpose(swap, swap + 1)?;
        let vh = v.transpose(swap, swap + 1)?;
        let dh = self.hidden / self.heads;
        let scores = qh
            .matmul(&kh.transpose(r - 1, r)?)?
            .scale(T::of(1.0 / (dh as f64).sqrt()))?;
        let weights = scores.softmax()?;
        let mixed = weights.matmul(&vh)?.transpose(swap, swap + 1)?;
        Ok(linear(&mixed.reshape(&shape)?, &params.out)?)
    }
}

/// Direct loop evaluation of the cross-axis index formula, for testing.
pub mod reference {
    use crate::tensor::{Element, Tensor};

    /// `out[x, s, h, :] = sum_j (sum_e q[x, s, h, e] k[x, j, h, e]) v[s, j, h, :]`
    /// on rank-4 `[S, S, heads, head_dim]` inputs. Accumulates in `f64`.
    pub fn naive_cross_axis_oracle<T: Element>(
        q: &Tensor<T>,
        k: &Tensor<T>,
        v: &Tensor<T>,
    ) -> Tensor<T> {
        let shape = q.shape();
        assert_eq!(shape.len(), 4, "oracle takes [S, S, heads, head_dim]");
        assert_eq!(shape[0], shape[1], "square grid");
        assert!(k.shape() == shape && v.shape() == shape);
        let (s_len, heads, dh) = (shape[0], shape[2], shape[3]);
        let mut out = vec![0.0f64; q.len()];
        for x in 0..s_len {
            for s in 0..s_len {
                for h in 0..heads {
                    for j in 0..s_len {
                        let mut a = 0.0;
                        for e in 0..dh {
                            a += q.at(&[x, s, h, e]).as_f64() * k.at(&[x, j, h, e]).as_f64();
                        }
                        for c in 0..dh {
                            out[((x * s_len + s) * heads + h) * dh + c] +=
                                a * v.at(&[s, j, h, c]).as_f64();
                        }
                    }
                }
            }
        }
        Tensor::new(shape, out.into_iter().map(T::of).collect()).expect("same shape")
    }
}

#[cfg(test)]
mod tests {
    use super::reference::naive_cross_axis_oracle;
    use super::*;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn contract(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Result<Tensor<f64>> {
        let tape = Tape::new();
        let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
        Ok(cross_axis_contract(&q, &k, &v)?.value())
    }

    #[test]
    fn gammas_follow_retnet_scheme() {
        let g = head_gammas(GammaMode::Retnet, 8);
        assert_eq!(g[0], 0.96875);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert_eq!(head_gammas(GammaMode::Ones, 3), vec![1.0; 3]);
    }

    #[test]
    fn gamma_scaling_per_head() {
        let tape = Tape::new();
        let k = tape.constant(Tensor::<f64>::ones(&[2, 2, 3, 4]));
        let out = gamma_scale_keys(&k, &[1.0, 0.0, 0.5]).unwrap().value();
        for (i, &v) in out.data().iter().enumerate() {
            let h = (i / 4) % 3;
            assert_eq!(v, [1.0, 0.0, 0.5][h]);
        }
    }

    #[test]
    fn single_cell_contract_is_dot_times_v() {
        let q = Tensor::new(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(&[1, 1, 1, 4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let v = Tensor::new(&[1, 1, 1, 4], vec![1.0, -1.0, 0.25, 2.0]).unwrap();
        // q.k = 0.5 - 2 + 6 = 4.5
        let want = [4.5, -4.5, 1.125, 9.0];
        assert_eq!(contract(&q, &k, &v).unwrap().data(), &want);
        assert_eq!(naive_cross_axis_oracle(&q, &k, &v).data(), &want);
    }

    #[test]
    fn zero_keys_annihilate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random(&[3, 3, 2, 4], &mut rng);
        let v = random(&[3, 3, 2, 4], &mut rng);
        let out = contract(&q, &Tensor::zeros(&[3, 3, 2, 4]), &v).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn contract_matches_oracle_with_batch_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in 1..=4 {
            let (q, k, v) = (
                random(&[2, s, s, 2, 4], &mut rng),
                random(&[2, s, s, 2, 4], &mut rng),
                random(&[2, s, s, 2, 4], &mut rng),
            );
            let out = contract(&q, &k, &v).unwrap();
            let per = s * s * 8;
            for b in 0..2 {
                let slice = |t: &Tensor<f64>| {
                    Tensor::new(&[s, s, 2, 4], t.data()[b * per..(b + 1) * per].to_vec()).unwrap()
                };
                let want = naive_cross_axis_oracle(&slice(&q), &slice(&k), &slice(&v));
                assert!(slice(&out).max_abs_diff(&want).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_square_grids() {
        let z = Tensor::<f64>::zeros(&[2, 3, 1, 4]);
        assert!(matches!(
            contract(&z, &z, &z),
            Err(Error::NotSquareGrid { rows: 2, cols: 3 })
        ));
    }

    fn cross_params(tape: &Tape<f64>, d: usize, h: usize, f: impl Fn(usize) -> f64) -> CrossAxisParams<Var<'_, f64>> {
        let mut n = 0usize;
        let mut make = |shape: &[usize]| {
            let t = Tensor::from_fn(shape, |i| f(n * 1000 + i));
            n += 1;
            tape.var(t)
        };
        CrossAxisParams {
            qkv: Linear { weight: make(&[d, 3 * d]), bias: make(&[3 * d]) },
            group_norm: Norm { scale: make(&[h]), shift: make(&[h]) },
            out: Linear { weight: make(&[d, d]), bias: make(&[d]) },
        }
    }

    #[test]
    fn zero_parameters_give_output_bias() {
        let cfg = AttentionConfig { hidden: 8, heads: 2, grid: 2, gamma_mode: GammaMode::Retnet, use_rotary: true };
        let attn = CrossAxisAttention::<f64>::new(cfg).unwrap();
        let tape = Tape::new();
        let params = cross_params(&tape, 8, 2, |_| 0.0);
        let x = tape.constant(Tensor::from_fn(&[2, 2, 8], |i| i as f64));
        let out = attn.forward(&x, &params, None).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_imprint_equals_no_imprint() {
        let cfg = AttentionConfig { hidden: 8, heads: 2, grid: 3, gamma_mode: GammaMode::Retnet, use_rotary: true };
        let attn = CrossAxisAttention::<f64>::new(cfg).unwrap();
        let tape = Tape::new();
        let params = cross_params(&tape, 8, 2, |i| ((i * 37) % 11) as f64 * 0.1 - 0.5);
        let x = tape.constant(Tensor::from_fn(&[3, 3, 8], |i| (i as f64 * 0.3).sin()));
        let zero = tape.constant(Tensor::zeros(&[3, 3, 8]));
        let a = attn.forward(&x, &params, None).unwrap().value();
        let b = attn.forward(&x, &params, Some(&zero)).unwrap().value();
        assert_eq!(a, b);
    }

    #[test]
    fn qkv_identity_projection_splits_heads() {
        let tape = Tape::new();
        let d = 4;
        let w = Tensor::from_fn(&[d, 3 * d], |i| if i / (3 * d) == (i % (3 * d)) % d { 1.0 } else { 0.0 });
        let qkv = Linear { weight: tape.constant(w), bias: tape.constant(Tensor::zeros(&[3 * d])) };
        let xv = Tensor::<f64>::from_fn(&[2, 2, d], |i| i as f64 + 1.0);
        let (q, k, v) = qkv_project(&tape.constant(xv.clone()), &qkv, 1).unwrap();
        let want = xv.reshape(&[2, 2, 1, d]).unwrap();
        assert_eq!(q.value(), want);
        assert_eq!(k.value(), want);
        assert_eq!(v.value(), want);
    }

    #[test]
    fn softmax_attention_single_token_and_identical_keys() {
        let tape = Tape::new();
        let d = 4;
        let eye = |n: usize, m: usize| Tensor::from_fn(&[n, m], move |i| if i / m == i % m % n { 1.0 } else { 0.0 });
        // q = k = 0 (identical keys), v = x
        let mut w = Tensor::<f64>::zeros(&[d, 3 * d]);
        for i in 0..d {
            w.data_mut()[i * 3 * d + 2 * d + i] = 1.0;
        }
        let params = SoftmaxParams {
            qkv: Linear { weight: tape.constant(w), bias: tape.constant(Tensor::zeros(&[3 * d])) },
            out: Linear { weight: tape.constant(eye(d, d)), bias: tape.constant(Tensor::zeros(&[d])) },
        };
        let attn = SoftmaxAttention::<f64>::new(d, 1, 2, PosMode::None).unwrap();
        let x = Tensor::from_fn(&[4, d], |i| i as f64);
        let out = attn.forward(&tape.constant(x.clone()), &params).unwrap().value();
        for c in 0..d {
            let mean = (0..4).map(|n| x.at(&[n, c])).sum::<f64>() / 4.0;
            for n in 0..4 {
                assert!((out.at(&[n, c]) - mean).abs() < 1e-12);
            }
        }

        let one = SoftmaxAttention::<f64>::new(d, 1, 1, PosMode::Rotary).unwrap();
        let x1 = Tensor::from_fn(&[1, d], |i| i as f64 - 1.5);
        let out = one.forward(&tape.constant(x1.clone()), &params).unwrap().value();
        assert_eq!(out, x1);
    }

    #[test]
    fn contraction_mac_count() {
        let z = Tensor::<f64>::full(&[4, 4, 2, 4], 0.5);
        crate::tensor::reset_mac_count();
        contract(&z, &z, &z).unwrap();
        // S^3 * d per stage with S = 4, d = 8
        assert_eq!(crate::tensor::mac_count(), 2 * 4 * 4 * 4 * 8);
    }

    #[test]
    fn full_operator_gradient_check() {
        use crate::nn::ParamTree;
        use crate::tensor::gradcheck::{grad_check_many, DEFAULT_EPS};
        let cfg = AttentionConfig { hidden: 8, heads: 2, grid: 4, gamma_mode: GammaMode::Retnet, use_rotary: true };
        let attn = CrossAxisAttention::<f64>::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let template = {
            let tape = Tape::new();
            cross_params(&tape, 8, 2, |_| 0.0).map("", |_, v| v.value())
        };
        let mut inputs = vec![random(&[4, 4, 8], &mut rng)];
        template.map("", |_, t| inputs.push(random(t.shape(), &mut rng).map(|v| 0.5 * v)));
        let err = grad_check_many(
            |vs| {
                let p = CrossAxisParams {
                    qkv: Linear { weight: vs[1], bias: vs[2] },
                    group_norm: Norm { scale: vs[3], shift: vs[4] },
                    out: Linear { weight: vs[5], bias: vs[6] },
                };
                let y = attn.forward(&vs[0], &p, None).map_err(|e| match e {
                    Error::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
                let w = vs[0].tape().constant(Tensor::from_fn(&y.shape(), |i| (i as f64 * 0.37).cos()));
                y.mul(&w)?.sum()
            },
            &inputs,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
