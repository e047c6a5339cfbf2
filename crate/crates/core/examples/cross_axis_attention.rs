//! Runs one cross-axis attention layer on a random grid, checks the raw
//! contraction against the direct index loop and counts its multiply-adds.
//!
//! `cargo run --release --example cross_axis_attention -- [grid] [hidden] [heads]`

use cat_core::attention::reference::naive_cross_axis_oracle;
use cat_core::attention::{cross_axis_contract, AttentionConfig, CrossAxisAttention, CrossAxisParams, GammaMode};
use cat_core::flops::{flops_cross_axis_attention, Convention};
use cat_core::nn::{Linear, Norm};
use cat_core::tensor::{mac_count, reset_mac_count, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cat_core::Result<()> {
    let arg = |i: usize, default: usize| std::env::args().nth(i).map_or(default, |s| s.parse().expect("integer"));
    let (grid, hidden, heads) = (arg(1, 8), arg(2, 32), arg(3, 4));
    let config = AttentionConfig {
        hidden,
        heads,
        grid,
        gamma_mode: GammaMode::Retnet,
        use_rotary: true,
    };
    let attn = CrossAxisAttention::<f64>::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random = |shape: &[usize], scale: f64| Tensor::<f64>::from_fn(shape, |_| rng.random_range(-scale..scale));

    let tape = Tape::new();
    let params = CrossAxisParams {
        qkv: Linear {
            weight: tape.constant(random(&[hidden, 3 * hidden], 0.2)),
            bias: tape.constant(Tensor::zeros(&[3 * hidden])),
        },
        group_norm: Norm {
            scale: tape.constant(Tensor::ones(&[heads])),
            shift: tape.constant(Tensor::zeros(&[heads])),
        },
        out: Linear {
            weight: tape.constant(random(&[hidden, hidden], 0.2)),
            bias: tape.constant(Tensor::zeros(&[hidden])),
        },
    };
    let x = tape.constant(random(&[grid, grid, hidden], 1.0));
    let y = attn.forward(&x, &params, None)?;
    println!("layer output {:?}, head decays {:?}", y.shape(), attn.gammas());

    let shape = [grid, grid, heads, hidden / heads];
    let (q, k, v) = (random(&shape, 1.0), random(&shape, 1.0), random(&shape, 1.0));
    reset_mac_count();
    let fast = cross_axis_contract(&tape.constant(q.clone()), &tape.constant(k.clone()), &tape.constant(v.clone()))?.value();
    let counted = mac_count();
    let slow = naive_cross_axis_oracle(&q, &k, &v);
    println!("contraction vs index loop: max abs diff {:.2e}", fast.max_abs_diff(&slow)?);
    let analytic = flops_cross_axis_attention(grid as u64, hidden as u64, Convention::Macs);
    println!(
        "multiply-adds: counted {counted}, analytic {} (stage 1 {}, stage 2 {})",
        analytic.contraction(),
        analytic.stage1,
        analytic.stage2
    );
    Ok(())
}
