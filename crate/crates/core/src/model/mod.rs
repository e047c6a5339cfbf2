//! The cross-axis classifier and its softmax-attention baseline.
//!
//! Images `[batch, channels, H, W]` are cut into `p x p` patches, embedded onto
//! an `S x S` grid, passed through pre-norm blocks and mean-pooled into a linear
//! head. In the cross-axis model every block may re-add a scaled copy of the
//! initial embedding (plus a learned class vector) right before attention.

mod config;

pub use config::{imprint_schedule, CatConfig, ImprintMode, ModelKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{CrossAxisAttention, CrossAxisParams, SoftmaxAttention, SoftmaxParams};
use crate::nn::{join, linear, Linear, Norm, ParamTree};
use crate::tensor::{Element, Gradients, Tape, Tensor, TensorResult, Var};
use crate::{Error, Result};

/// Standard deviation of every randomly initialized tensor.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Ffn<P> {
    pub input: Linear<P>,
    pub output: Linear<P>,
}

impl<P> ParamTree<P> for Ffn<P> {
    type Mapped<Q> = Ffn<Q>;

    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<Ffn<Q>, E> {
        Ok(Ffn {
            input: self.input.try_map(&join(prefix, "in"), f)?,
            output: self.output.try_map(&join(prefix, "out"), f)?,
        })
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.input.for_each_mut(&join(prefix, "in"), f);
        self.output.for_each_mut(&join(prefix, "out"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttentionParams<P> {
    Cross(CrossAxisParams<P>),
    Softmax(SoftmaxParams<P>),
}

impl<P> ParamTree<P> for AttentionParams<P> {
    type Mapped<Q> = AttentionParams<Q>;

    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<AttentionParams<Q>, E> {
        Ok(match self {
            AttentionParams::Cross(p) => AttentionParams::Cross(p.try_map(prefix, f)?),
            AttentionParams::Softmax(p) => AttentionParams::Softmax(p.try_map(prefix, f)?),
        })
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        match self {
            AttentionParams::Cross(p) => p.for_each_mut(prefix, f),
            AttentionParams::Softmax(p) => p.for_each_mut(prefix, f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<P> {
    pub in_norm: Norm<P>,
    pub attn: AttentionParams<P>,
    pub out_norm: Norm<P>,
    pub ffn: Ffn<P>,
}

impl<P> ParamTree<P> for LayerParams<P> {
    type Mapped<Q> = LayerParams<Q>;

    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<LayerParams<Q>, E> {
        Ok(LayerParams {
            in_norm: self.in_norm.try_map(&join(prefix, "in_norm"), f)?,
            attn: self.attn.try_map(&join(prefix, "attn"), f)?,
            out_norm: self.out_norm.try_map(&join(prefix, "out_norm"), f)?,
            ffn: self.ffn.try_map(&join(prefix, "ffn"), f)?,
        })
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.in_norm.for_each_mut(&join(prefix, "in_norm"), f);
        self.attn.for_each_mut(&join(prefix, "attn"), f);
        self.out_norm.for_each_mut(&join(prefix, "out_norm"), f);
        self.ffn.for_each_mut(&join(prefix, "ffn"), f);
    }
}

/// Every learned tensor of a model. The class vector exists only in the
/// cross-axis model, where it rides along with the imprint.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    /// `[channels * p * p, hidden]`, rows in (channel, patch row, patch col) order.
    pub embed_kernel: P,
    pub embed_bias: P,
    pub class_token: Option<P>,
    pub layers: Vec<LayerParams<P>>,
    pub head: Linear<P>,
}

impl<P> ParamTree<P> for ModelParams<P> {
    type Mapped<Q> = ModelParams<Q>;

    fn try_map<'a, Q, E>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &'a P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<ModelParams<Q>, E> {
        Ok(ModelParams {
            embed_kernel: f(&join(prefix, "embed.kernel"), &self.embed_kernel)?,
            embed_bias: f(&join(prefix, "embed.bias"), &self.embed_bias)?,
            class_token: match &self.class_token {
                Some(t) => Some(f(&join(prefix, "class_token"), t)?),
                None => None,
            },
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&join(prefix, &format!("layer{i}")), f))
                .collect::<std::result::Result<_, _>>()?,
            head: self.head.try_map(&join(prefix, "head"), f)?,
        })
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        f(&join(prefix, "embed.kernel"), &mut self.embed_kernel);
        f(&join(prefix, "embed.bias"), &mut self.embed_bias);
        if let Some(t) = &mut self.class_token {
            f(&join(prefix, "class_token"), t);
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.for_each_mut(&join(prefix, &format!("layer{i}")), f);
        }
        self.head.for_each_mut(&join(prefix, "head"), f);
    }
}

/// Initial value family of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Random,
    Zero,
    One,
}

/// Builds the parameter tree for `config`, calling `make` once per tensor in
/// naming order.
pub fn build_params<P>(config: &CatConfig, mut make: impl FnMut(&[usize], InitKind) -> P) -> ModelParams<P> {
    let (d, h, f) = (config.hidden, config.heads, config.ffn_hidden());
    let lin = |i: usize, o: usize, make: &mut dyn FnMut(&[usize], InitKind) -> P| Linear {
        weight: make(&[i, o], InitKind::Random),
        bias: make(&[o], InitKind::Zero),
    };
    let norm = |n: usize, make: &mut dyn FnMut(&[usize], InitKind) -> P| Norm {
        scale: make(&[n], InitKind::One),
        shift: make(&[n], InitKind::Zero),
    };
    let cross = config.model_kind == ModelKind::Cat;
    let embed_kernel = make(&[config.patch_features(), d], InitKind::Random);
    let embed_bias = make(&[d], InitKind::Zero);
    let class_token = cross.then(|| make(&[d], InitKind::Random));
    let layers = (0..config.layers)
        .map(|_| {
            let in_norm = norm(d, &mut make);
            let qkv = lin(d, 3 * d, &mut make);
            let attn = if cross {
                let group_norm = norm(h, &mut make);
                AttentionParams::Cross(CrossAxisParams {
                    qkv,
                    group_norm,
                    out: lin(d, d, &mut make),
                })
            } else {
                AttentionParams::Softmax(SoftmaxParams {
                    qkv,
                    out: lin(d, d, &mut make),
                })
            };
            LayerParams {
                in_norm,
                attn,
                out_norm: norm(d, &mut make),
                ffn: Ffn {
                    input: lin(d, f, &mut make),
                    output: lin(f, d, &mut make),
                },
            }
        })
        .collect();
    let head = lin(d, config.num_classes, &mut make);
    ModelParams {
        embed_kernel,
        embed_bias,
        class_token,
        layers,
        head,
    }
}

/// Seeded initialization: truncated normal (cut at two standard deviations)
/// for weights and the class vector, zero biases and shifts, unit scales.
pub fn init_params<T: Element>(config: &CatConfig, seed: u64) -> ModelParams<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    build_params(config, |shape, kind| match kind {
        InitKind::Zero => Tensor::zeros(shape),
        InitKind::One => Tensor::ones(shape),
        InitKind::Random => Tensor::from_fn(shape, |_| loop {
            let v: f64 = normal.sample(&mut rng);
            if v.abs() <= 2.0 * INIT_STD {
                break T::of(v);
            }
        }),
    })
}

/// Parameter names and shapes for `config`, in naming order.
pub fn param_shapes(config: &CatConfig) -> Vec<(String, Vec<usize>)> {
    build_params(config, |shape, _| shape.to_vec())
        .named("")
        .into_iter()
        .map(|(n, s)| (n, s.clone()))
        .collect()
}

/// Closed-form parameter count.
pub fn param_count(config: &CatConfig) -> u64 {
    let (d, h, f, c) = (
        config.hidden as u64,
        config.heads as u64,
        config.ffn_hidden() as u64,
        config.num_classes as u64,
    );
    let cross = config.model_kind == ModelKind::Cat;
    let embed = config.patch_features() as u64 * d + d;
    let class_token = if cross { d } else { 0 };
    let norms = 2 * 2 * d + if cross { 2 * h } else { 0 };
    let attention = (3 * d * d + 3 * d) + (d * d + d);
    let ffn = (d * f + f) + (f * d + d);
    let head = d * c + c;
    embed + class_token + config.layers as u64 * (norms + attention + ffn) + head
}

/// `[batch, channels, H, W]` -> `[batch, S, S, channels * p * p]`.
pub fn extract_patches<T: Element>(images: &Tensor<T>, config: &CatConfig) -> Result<Tensor<T>> {
    let (ch, size, p) = (config.channels, config.image_size, config.patch_size);
    let shape = images.shape();
    if shape.len() != 4 || shape[1..] != [ch, size, size] {
        return Err(Error::BadImageSize {
            expected: vec![ch, size, size],
            found: shape.to_vec(),
        });
    }
    let (batch, s) = (shape[0], size / p);
    let feat = config.patch_features();
    let src = images.data();
    let mut out = Vec::with_capacity(batch * s * s * feat);
    for b in 0..batch {
        for gy in 0..s {
            for gx in 0..s {
                for c in 0..ch {
                    for py in 0..p {
                        let row = ((b * ch + c) * size + gy * p + py) * size + gx * p;
                        out.extend_from_slice(&src[row..row + p]);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(&[batch, s, s, feat], out)?)
}

/// Non-overlapping patch embedding onto the `S x S` grid.
pub fn patch_embed<'t, T: Element>(
    images: &Tensor<T>,
    kernel: &Var<'t, T>,
    bias: &Var<'t, T>,
    config: &CatConfig,
) -> Result<Var<'t, T>> {
    let patches = kernel.tape().constant(extract_patches(images, config)?);
    Ok(linear(
        &patches,
        &Linear {
            weight: *kernel,
            bias: *bias,
        },
    )?)
}

fn feed_forward<'t, T: Element>(x: &Var<'t, T>, ffn: &Ffn<Var<'t, T>>) -> TensorResult<Var<'t, T>> {
    linear(&linear(x, &ffn.input)?.gelu()?, &ffn.output)
}

/// One pre-norm block: `x + attn(norm(x))`, then `x + ffn(norm(x))`.
pub fn cat_block<'t, T: Element>(
    x: &Var<'t, T>,
    layer: &LayerParams<Var<'t, T>>,
    attention: &CrossAxisAttention<T>,
    imprint: Option<&Var<'t, T>>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let AttentionParams::Cross(attn) = &layer.attn else {
        return Err(Error::Config("cross-axis block given softmax parameters".into()));
    };
    let eps_t = T::of(eps);
    let normed = x.layer_norm(&layer.in_norm.scale, &layer.in_norm.shift, eps_t)?;
    let x1 = attention.forward(&normed, attn, imprint)?.add(x)?;
    let normed = x1.layer_norm(&layer.out_norm.scale, &layer.out_norm.shift, eps_t)?;
    Ok(feed_forward(&normed, &layer.ffn)?.add(&x1)?)
}

fn vit_block<'t, T: Element>(
    x: &Var<'t, T>,
    layer: &LayerParams<Var<'t, T>>,
    attention: &SoftmaxAttention<T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let AttentionParams::Softmax(attn) = &layer.attn else {
        return Err(Error::Config("softmax block given cross-axis parameters".into()));
    };
    let eps_t = T::of(eps);
    let normed = x.layer_norm(&layer.in_norm.scale, &layer.in_norm.shift, eps_t)?;
    let x1 = attention.forward(&normed, attn)?.add(x)?;
    let normed = x1.layer_norm(&layer.out_norm.scale, &layer.out_norm.shift, eps_t)?;
    Ok(feed_forward(&normed, &layer.ffn)?.add(&x1)?)
}

#[derive(Clone, Debug)]
enum Mixer<T> {
    Cross(CrossAxisAttention<T>),
    Softmax(SoftmaxAttention<T>),
}

/// A configured model with its stored parameters.
#[derive(Clone, Debug)]
pub struct CatModel<T> {
    config: CatConfig,
    params: ModelParams<Tensor<T>>,
    mixer: Mixer<T>,
}

impl<T: Element> CatModel<T> {
    pub fn new(config: CatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Self::from_params(config, params)
    }

    /// Wraps existing parameters after checking every name and shape.
    pub fn from_params(config: CatConfig, params: ModelParams<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        let found = params.named("");
        if expected.len() != found.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                found.len()
            )));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(&found) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::ShapeMismatch {
                    name: got_name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let mixer = match config.model_kind {
            ModelKind::Cat => Mixer::Cross(CrossAxisAttention::new(config.attention())?.with_eps(config.norm_eps)),
            ModelKind::VitBaseline => Mixer::Softmax(SoftmaxAttention::new(
                config.hidden,
                config.heads,
                config.grid(),
                config.pos_mode,
            )?),
        };
        Ok(Self { config, params, mixer })
    }

    pub fn config(&self) -> &CatConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<Tensor<T>> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<Tensor<T>> {
        self.params
    }

    pub fn param_count(&self) -> u64 {
        param_count(&self.config)
    }

    /// Registers every parameter as a tracked leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> ModelParams<Var<'t, T>> {
        self.params.map("", |_, t| tape.var(t.clone()))
    }

    /// Logits `[batch, classes]` for `images[batch, channels, H, W]`.
    pub fn forward<'t>(&self, params: &ModelParams<Var<'t, T>>, images: &Tensor<T>) -> Result<Var<'t, T>> {
        let cfg = &self.config;
        let embed = patch_embed(images, &params.embed_kernel, &params.embed_bias, cfg)?;
        let batch = images.shape()[0];
        let (s, d) = (cfg.grid(), cfg.hidden);
        let mut x = embed;
        match &self.mixer {
            Mixer::Cross(attention) => {
                let carried = match &params.class_token {
                    Some(token) => embed.add(token)?,
                    None => embed,
                };
                for (l, layer) in params.layers.iter().enumerate() {
                    let w = cfg.imprint_weight(l);
                    let imprint = if w != 0.0 { Some(carried.scale(T::of(w))?) } else { None };
                    x = cat_block(&x, layer, attention, imprint.as_ref(), cfg.norm_eps)?;
                }
            }
            Mixer::Softmax(attention) => {
                x = x.reshape(&[batch, s * s, d])?;
                for layer in &params.layers {
                    x = vit_block(&x, layer, attention, cfg.norm_eps)?;
                }
            }
        }
        let pooled = x.reshape(&[batch, s * s, d])?.mean_axis(1)?;
        Ok(linear(&pooled, &params.head)?)
    }

    /// Inference without gradient tracking. Accepts one image `[channels, H, W]`
    /// (returns `[classes]`) or a batch (returns `[batch, classes]`).
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let single = images.rank() == 3;
        let batch = if single {
            let mut shape = vec![1];
            shape.extend_from_slice(images.shape());
            images.reshape(&shape)?
        } else {
            images.clone()
        };
        let tape = Tape::new();
        let params = self.params.map("", |_, t| tape.constant(t.clone()));
        let out = self.forward(&params, &batch)?.value();
        if single {
            Ok(out.reshape(&[self.config.num_classes])?)
        } else {
            Ok(out)
        }
    }
}

/// Collects the gradient of every bound parameter, zeros where none flowed.
pub fn gradients_of<'t, T: Element>(
    bound: &ModelParams<Var<'t, T>>,
    grads: &Gradients<T>,
) -> TensorResult<ModelParams<Tensor<T>>> {
    bound.try_map("", &mut |_, v| grads.wrt(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check_many, DEFAULT_EPS};

    fn image(cfg: &CatConfig, batch: usize, seed: f64) -> Tensor<f64> {
        Tensor::from_fn(&[batch, cfg.channels, cfg.image_size, cfg.image_size], |i| {
            ((i as f64 + 1.0) * seed).sin() * 0.5 + 0.5
        })
    }

    #[test]
    fn toy_parameter_count_matches_hand_count() {
        let cfg = CatConfig {
            ffn_ratio: 4,
            ..CatConfig::toy()
        };
        // embed 192*32+32, class 32, per layer 12712, head 32*10+10
        assert_eq!(param_count(&cfg), 6176 + 32 + 2 * 12712 + 330);
        assert_eq!(param_count(&cfg), 31962);
        let counted: usize = param_shapes(&cfg).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(counted as u64, param_count(&cfg));
        let vit = CatConfig {
            model_kind: ModelKind::VitBaseline,
            ..cfg.clone()
        };
        let counted: usize = param_shapes(&vit).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(counted as u64, param_count(&vit));
        let deeper = CatConfig { layers: 4, ..cfg.clone() };
        assert_eq!(param_count(&deeper) - param_count(&cfg), 2 * 12712);
    }

    #[test]
    fn full_size_parameter_count() {
        let n = param_count(&CatConfig::paper());
        assert!((n as f64 / 1e6 - 32.7).abs() < 0.1, "{n}");
    }

    #[test]
    fn names_follow_convention() {
        let names: Vec<String> = param_shapes(&CatConfig::toy()).into_iter().map(|(n, _)| n).collect();
        assert_eq!(&names[..3], ["embed.kernel", "embed.bias", "class_token"]);
        assert!(names.contains(&"layer1.attn.group_norm.scale".to_string()));
        assert!(names.contains(&"layer0.ffn.in.weight".to_string()));
        assert_eq!(names.last().unwrap(), "head.bias");
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = CatConfig::toy();
        let a = init_params::<f32>(&cfg, 7);
        assert_eq!(a, init_params::<f32>(&cfg, 7));
        assert_ne!(a, init_params::<f32>(&cfg, 8));
        for (name, t) in a.named("") {
            if name.ends_with("norm.scale") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            }
            if name.ends_with("bias") || name.ends_with("shift") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
            if name.ends_with("weight") || name.ends_with("kernel") {
                assert!(t.data().iter().all(|&v| v.abs() <= 0.04), "{name}");
            }
        }
    }

    #[test]
    fn patches_match_loop_oracle() {
        let cfg = CatConfig {
            image_size: 16,
            patch_size: 8,
            ..CatConfig::toy()
        };
        let img = image(&cfg, 1, 0.37);
        let patches = extract_patches(&img, &cfg).unwrap();
        assert_eq!(patches.shape(), &[1, 2, 2, 192]);
        for gy in 0..2 {
            for gx in 0..2 {
                for c in 0..3 {
                    for py in 0..8 {
                        for px in 0..8 {
                            let f = (c * 8 + py) * 8 + px;
                            assert_eq!(patches.at(&[0, gy, gx, f]), img.at(&[0, c, gy * 8 + py, gx * 8 + px]));
                        }
                    }
                }
            }
        }
        let wrong = Tensor::<f64>::zeros(&[1, 3, 8, 8]);
        assert!(matches!(extract_patches(&wrong, &cfg), Err(Error::BadImageSize { .. })));
    }

    #[test]
    fn zero_image_embeds_to_bias_and_single_patch_grid() {
        let cfg = CatConfig {
            image_size: 8,
            ..CatConfig::toy()
        };
        let mut params = init_params::<f64>(&cfg, 0);
        params.embed_bias = Tensor::from_fn(&[32], |i| i as f64);
        let tape = Tape::new();
        let e = patch_embed(
            &Tensor::zeros(&[1, 3, 8, 8]),
            &tape.var(params.embed_kernel.clone()),
            &tape.var(params.embed_bias.clone()),
            &cfg,
        )
        .unwrap()
        .value();
        assert_eq!(e.shape(), &[1, 1, 1, 32]);
        assert_eq!(e.data(), params.embed_bias.data());
    }

    #[test]
    fn zero_weights_reduce_to_head_bias() {
        let cfg = CatConfig::toy();
        let mut params = init_params::<f64>(&cfg, 1);
        params.for_each_mut("", &mut |_, t| *t = Tensor::zeros(t.shape()));
        params.head.bias = Tensor::from_fn(&[10], |i| i as f64 * 0.1);
        let model = CatModel::from_params(cfg.clone(), params).unwrap();
        let logits = model.logits(&image(&cfg, 1, 0.1).reshape(&[3, 32, 32]).unwrap()).unwrap();
        assert_eq!(logits.shape(), &[10]);
        assert_eq!(logits, model.params().head.bias);
    }

    #[test]
    fn all_zero_parameters_give_uniform_loss() {
        let cfg = CatConfig::toy();
        let mut params = init_params::<f64>(&cfg, 1);
        params.for_each_mut("", &mut |_, t| *t = Tensor::zeros(t.shape()));
        let model = CatModel::from_params(cfg.clone(), params).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let loss = model.forward(&bound, &image(&cfg, 2, 0.3)).unwrap().cross_entropy(&[3, 7]).unwrap();
        assert!((loss.value().item().unwrap() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn forward_is_deterministic_and_kinds_differ() {
        let cfg = CatConfig::toy();
        let img = image(&cfg, 2, 0.21);
        let a = CatModel::<f64>::new(cfg.clone(), 3).unwrap().logits(&img).unwrap();
        let b = CatModel::<f64>::new(cfg.clone(), 3).unwrap().logits(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[2, 10]);
        let vit = CatConfig {
            model_kind: ModelKind::VitBaseline,
            ..cfg
        };
        let c = CatModel::<f64>::new(vit, 3).unwrap().logits(&img).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn imprint_off_matches_bias_only_imprint_on_blank_image() {
        let cfg = CatConfig::toy();
        let mut params = init_params::<f64>(&cfg, 4);
        params.class_token = Some(Tensor::zeros(&[cfg.hidden]));
        params.embed_bias = Tensor::zeros(&[cfg.hidden]);
        let on = CatModel::from_params(cfg.clone(), params.clone()).unwrap();
        let off = CatModel::from_params(
            CatConfig {
                imprint_mode: ImprintMode::Off,
                ..cfg.clone()
            },
            params,
        )
        .unwrap();
        let blank = Tensor::zeros(&[1, 3, 32, 32]);
        let diff = on.logits(&blank).unwrap().max_abs_diff(&off.logits(&blank).unwrap()).unwrap();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn full_model_gradient_check() {
        let cfg = CatConfig {
            image_size: 16,
            patch_size: 8,
            hidden: 16,
            heads: 2,
            layers: 2,
            ffn_ratio: 2,
            ..CatConfig::default()
        };
        let model = CatModel::<f64>::new(cfg.clone(), 11).unwrap();
        // Larger weights than the init so every path carries signal.
        let template = model.params().map("", |_, t| t.map(|v| v * 20.0));
        let inputs: Vec<Tensor<f64>> = template.named("").into_iter().map(|(_, t)| t.clone()).collect();
        let img = image(&cfg, 1, 0.53);
        let err = grad_check_many(
            |vs| {
                let mut it = vs.iter().copied();
                let bound = template.map("", |_, _| it.next().unwrap());
                let logits = model.forward(&bound, &img).map_err(|e| match e {
                    Error::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
                logits.cross_entropy(&[3])
            },
            &inputs,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
