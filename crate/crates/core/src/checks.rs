//! Finite-difference gradient suites shared by the CLI and the test targets.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, CrossAxisAttention, CrossAxisParams, GammaMode};
use crate::model::{CatConfig, CatModel};
use crate::nn::{Linear, Norm, ParamTree};
use crate::rope::{GridSpec, RotaryTables};
use crate::tensor::gradcheck::{grad_check_many, DEFAULT_EPS};
use crate::tensor::{Tensor, TensorError, TensorResult, Var};
use crate::Error;

/// Worst relative error of one checked function.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: &'static str,
    pub error: f64,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Sum of `y` against a fixed non-uniform weight so every output matters.
fn scalarize<'t>(y: &Var<'t, f64>) -> TensorResult<Var<'t, f64>> {
    let w = Tensor::from_fn(&y.shape(), |i| ((i as f64 + 1.0) * 0.731).sin() + 0.1);
    y.mul(&y.tape().constant(w))?.sum()
}

fn lift(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => panic!("unexpected error in gradient check: {other}"),
    }
}

type Case = (&'static str, Vec<Vec<usize>>, for<'t> fn(&[Var<'t, f64>]) -> TensorResult<Var<'t, f64>>);

/// Every differentiable tensor op on random inputs of at most 64 elements.
pub fn op_gradient_suite(seed: u64) -> Vec<GradCase> {
    let cases: Vec<Case> = vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |v| scalarize(&v[0].add(&v[1])?)),
        ("add_suffix", vec![vec![3, 4], vec![4]], |v| scalarize(&v[0].add(&v[1])?)),
        ("sub", vec![vec![2, 5], vec![5]], |v| scalarize(&v[0].sub(&v[1])?)),
        ("mul", vec![vec![3, 4], vec![3, 4]], |v| scalarize(&v[0].mul(&v[1])?)),
        ("mul_suffix", vec![vec![2, 3, 4], vec![3, 4]], |v| scalarize(&v[0].mul(&v[1])?)),
        ("scale", vec![vec![6]], |v| scalarize(&v[0].scale(-1.7)?)),
        ("matmul", vec![vec![3, 4], vec![4, 5]], |v| scalarize(&v[0].matmul(&v[1])?)),
        ("matmul_batched", vec![vec![2, 2, 3], vec![2, 3, 4]], |v| {
            scalarize(&v[0].matmul(&v[1])?)
        }),
        ("transpose", vec![vec![2, 3, 4]], |v| scalarize(&v[0].transpose(0, 2)?)),
        ("permute", vec![vec![2, 3, 4]], |v| scalarize(&v[0].permute(&[1, 2, 0])?)),
        ("reshape", vec![vec![2, 6]], |v| scalarize(&v[0].reshape(&[3, 4])?)),
        ("narrow", vec![vec![3, 6]], |v| scalarize(&v[0].narrow(1, 2, 3)?)),
        ("mean_axis", vec![vec![3, 4, 2]], |v| scalarize(&v[0].mean_axis(1)?)),
        ("gelu", vec![vec![16]], |v| scalarize(&v[0].scale(2.0)?.gelu()?)),
        ("softmax", vec![vec![3, 5]], |v| scalarize(&v[0].scale(2.0)?.softmax()?)),
        ("layer_norm", vec![vec![4, 8], vec![8], vec![8]], |v| {
            scalarize(&v[0].layer_norm(&v[1], &v[2], 1e-5)?)
        }),
        ("group_norm_heads", vec![vec![3, 2, 8], vec![2], vec![2]], |v| {
            scalarize(&v[0].group_norm_heads(&v[1], &v[2], 1e-5)?)
        }),
        ("cross_entropy", vec![vec![4, 6]], |v| v[0].scale(3.0)?.cross_entropy(&[0, 5, 2, 2])),
        ("rotary", vec![vec![2, 2, 2, 8]], |v| {
            let t = RotaryTables::<f64>::build(GridSpec::square(2, 8).expect("grid")).expect("tables");
            let (cos, sin) = (Arc::new(t.cos().clone()), Arc::new(t.sin().clone()));
            scalarize(&v[0].rotate_half(&cos, &sin)?)
        }),
        ("sum_of_squares", vec![vec![7]], |v| v[0].mul(&v[0])?.sum()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases
        .into_iter()
        .map(|(name, shapes, f)| {
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
            let error = grad_check_many(f, &inputs, DEFAULT_EPS).expect("gradient check runs");
            GradCase { name, error }
        })
        .collect()
}

/// Cross-axis attention on a 4x4 grid, hidden 8, two heads, through every
/// parameter and the input.
pub fn attention_gradient_check(seed: u64) -> GradCase {
    let cfg = AttentionConfig {
        hidden: 8,
        heads: 2,
        grid: 4,
        gamma_mode: GammaMode::Retnet,
        use_rotary: true,
    };
    let attn = CrossAxisAttention::<f64>::new(cfg).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: [&[usize]; 7] = [&[4, 4, 8], &[8, 24], &[24], &[2], &[2], &[8, 8], &[8]];
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
    let error = grad_check_many(
        |v| {
            let p = CrossAxisParams {
                qkv: Linear { weight: v[1], bias: v[2] },
                group_norm: Norm { scale: v[3], shift: v[4] },
                out: Linear { weight: v[5], bias: v[6] },
            };
            scalarize(&attn.forward(&v[0], &p, None).map_err(lift)?)
        },
        &inputs,
        DEFAULT_EPS,
    )
    .expect("gradient check runs");
    GradCase {
        name: "cross_axis_attention",
        error,
    }
}

/// The toy configuration of the full-model check: 16x16 images, patch 8,
/// hidden 16, two heads, two layers.
pub fn gradcheck_model_config() -> CatConfig {
    CatConfig {
        image_size: 16,
        patch_size: 8,
        hidden: 16,
        heads: 2,
        layers: 2,
        ffn_ratio: 2,
        ..CatConfig::default()
    }
}

/// Cross entropy of the whole model against every parameter. Weights are
/// scaled up from the init so each path carries a measurable gradient.
pub fn model_gradient_check(config: &CatConfig, seed: u64) -> GradCase {
    let model = CatModel::<f64>::new(config.clone(), seed).expect("valid config");
    let template = model.params().map("", |_, t| t.map(|v| v * 20.0));
    let inputs: Vec<Tensor<f64>> = template.named("").into_iter().map(|(_, t)| t.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let size = config.image_size;
    let image = Tensor::from_fn(&[2, config.channels, size, size], |_| rng.random_range(0.0..1.0));
    let labels = [1 % config.num_classes, 3 % config.num_classes];
    let error = grad_check_many(
        |v| {
            let mut it = v.iter().copied();
            let bound = template.map("", |_, _| it.next().expect("one var per parameter"));
            model.forward(&bound, &image).map_err(lift)?.cross_entropy(&labels)
        },
        &inputs,
        DEFAULT_EPS,
    )
    .expect("gradient check runs");
    GradCase {
        name: match config.model_kind {
            crate::model::ModelKind::Cat => "cat_model",
            crate::model::ModelKind::VitBaseline => "vit_model",
        },
        error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_is_tight() {
        for case in op_gradient_suite(3) {
            assert!(case.error < 1e-6, "{case:?}");
        }
    }

    #[test]
    fn attention_and_model() {
        assert!(attention_gradient_check(1).error < 1e-4);
        assert!(model_gradient_check(&gradcheck_model_config(), 2).error < 1e-4);
        let vit = CatConfig {
            model_kind: crate::model::ModelKind::VitBaseline,
            ..gradcheck_model_config()
        };
        assert!(model_gradient_check(&vit, 2).error < 1e-4);
    }
}
