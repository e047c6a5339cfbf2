//! Central-difference gradient checking in `f64`.

use super::{Tape, Tensor, TensorResult, Var};

/// Step used by the test suites.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Largest `|analytic - numeric| / max(1, |numeric|)` over every coordinate of
/// every input, where `numeric` is the central difference of `eval`.
///
/// `eval` receives the full input list with one coordinate perturbed.
pub fn max_relative_error(
    analytic: &[Tensor<f64>],
    inputs: &[Tensor<f64>],
    eps: f64,
    mut eval: impl FnMut(&[Tensor<f64>]) -> TensorResult<f64>,
) -> TensorResult<f64> {
    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Checks a scalar function of several inputs against its tape gradient.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> TensorResult<f64>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> TensorResult<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let loss = f(&vars)?;
    let grads = tape.backward(&loss)?;
    let analytic = vars
        .iter()
        .map(|v| grads.wrt(v))
        .collect::<TensorResult<Vec<_>>>()?;
    max_relative_error(&analytic, inputs, eps, |xs| {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&vars)?.value().item()
    })
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> TensorResult<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> TensorResult<Var<'t, f64>>,
{
    grad_check_many(|v| f(v[0]), std::slice::from_ref(x), eps)
}
