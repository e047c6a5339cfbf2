use cat_core::attention::reference::naive_cross_axis_oracle;
use cat_core::attention::cross_axis_contract;
use cat_core::rope::{axial_angles, GridSpec, RotaryTables};
use cat_core::tensor::{ops, Tape, Tensor};
use cat_core::train::cosine_lr;
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |data| Tensor::new(&shape, data).unwrap())
}

fn contract(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    cross_axis_contract(&tape.constant(q.clone()), &tape.constant(k.clone()), &tape.constant(v.clone()))
        .unwrap()
        .value()
}

fn grid_qkv() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    (1usize..=4, 1usize..=2, prop::sample::select(vec![4usize, 8])).prop_flat_map(|(s, h, dh)| {
        let shape = vec![s, s, h, dh];
        (tensor(shape.clone()), tensor(shape.clone()), tensor(shape))
    })
}

fn naive_matmul(a: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
    let (r, sa, sb) = (a.rank(), a.shape(), b.shape());
    let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
    let batch: usize = sa[..r - 2].iter().product();
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        for i in 0..m {
            for j in 0..n {
                out[(bi * m + i) * n + j] = (0..k)
                    .map(|e| a.data()[(bi * m + i) * k + e] as f64 * b.data()[(bi * k + e) * n + j] as f64)
                    .sum();
            }
        }
    }
    out
}

fn per_head_norms(x: &Tensor<f64>, dh: usize) -> Vec<f64> {
    x.data().chunks(dh).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_triple_loop(b0 in 1usize..=4, b1 in 1usize..=4, m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed in any::<u64>()) {
        let mut state = seed;
        let mut next = move || { state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((state >> 33) as f32 / (1u64 << 31) as f32) * 2.0 - 1.0 };
        let a = Tensor::from_fn(&[b0, b1, m, k], |_| next());
        let b = Tensor::from_fn(&[b0, b1, k, n], |_| next());
        let got = a.matmul(&b).unwrap();
        for (g, w) in got.data().iter().zip(naive_matmul(&a, &b)) {
            prop_assert!((*g as f64 - w).abs() <= 1e-6 * w.abs().max(1.0));
        }
    }

    #[test]
    fn transpose_is_an_involution(x in tensor(vec![2, 3, 4, 5]), a in 0usize..4, b in 0usize..4) {
        prop_assume!(a != b);
        prop_assert_eq!(x.transpose(a, b).unwrap().transpose(a, b).unwrap(), x);
    }

    #[test]
    fn softmax_rows_sum_to_one(x in tensor(vec![4, 7])) {
        let p = ops::softmax(&x.map(|v| v * 30.0)).unwrap();
        for row in p.data().chunks(7) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_centres(x in tensor(vec![3, 8])) {
        let y = ops::layer_norm(&x, &Tensor::ones(&[8]), &Tensor::zeros(&[8]), 1e-5).unwrap();
        for row in y.data().chunks(8) {
            prop_assert!((row.iter().sum::<f64>() / 8.0).abs() < 1e-6);
        }
    }

    #[test]
    fn contraction_matches_oracle((q, k, v) in grid_qkv()) {
        let diff = contract(&q, &k, &v).max_abs_diff(&naive_cross_axis_oracle(&q, &k, &v)).unwrap();
        prop_assert!(diff < 1e-10);
    }

    #[test]
    fn contraction_is_bilinear((q, k, v) in grid_qkv(), alpha in -3.0f64..3.0) {
        let base = contract(&q, &k, &v);
        let scaled_q = contract(&q.map(|x| x * alpha), &k, &v);
        let scaled_v = contract(&q, &k, &v.map(|x| x * alpha));
        let want = base.map(|x| x * alpha);
        prop_assert!(scaled_q.max_abs_diff(&want).unwrap() < 1e-6);
        prop_assert!(scaled_v.max_abs_diff(&want).unwrap() < 1e-6);
        let doubled = contract(&q, &k, &ops::add(&v, &v).unwrap());
        prop_assert!(doubled.max_abs_diff(&base.map(|x| 2.0 * x)).unwrap() < 1e-6);
        let oracle = naive_cross_axis_oracle(&q, &k, &v.map(|x| x * alpha));
        prop_assert!(oracle.max_abs_diff(&want).unwrap() < 1e-6);
    }

    #[test]
    fn contraction_on_transposed_grid((q, k, v) in grid_qkv()) {
        let t = |x: &Tensor<f64>| x.transpose(0, 1).unwrap();
        let (qt, kt, vt) = (t(&q), t(&k), t(&v));
        let diff = contract(&qt, &kt, &vt).max_abs_diff(&naive_cross_axis_oracle(&qt, &kt, &vt)).unwrap();
        prop_assert!(diff < 1e-10);
    }

    #[test]
    fn rotary_preserves_norms_and_is_linear(rows in 1usize..=6, cols in 1usize..=6, seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let dh = 8;
        let tables = RotaryTables::<f64>::build(GridSpec::new(rows, cols, dh).unwrap()).unwrap();
        let x = Tensor::from_fn(&[rows, cols, 2, dh], |i| ((i as u64 * 7919 + seed) as f64 * 0.37).sin());
        let y = Tensor::from_fn(&[rows, cols, 2, dh], |i| ((i as u64 * 104729 + seed) as f64 * 0.11).cos());
        let rx = tables.apply(&x).unwrap();
        for (n0, n1) in per_head_norms(&x, dh).iter().zip(per_head_norms(&rx, dh)) {
            prop_assert!((n0 - n1).abs() <= 1e-5 * n0.max(1e-12));
        }
        let combo = ops::add(&x.map(|v| v * a), &y.map(|v| v * b)).unwrap();
        let lhs = tables.apply(&combo).unwrap();
        let rhs = ops::add(&rx.map(|v| v * a), &tables.apply(&y).unwrap().map(|v| v * b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
    }

    #[test]
    fn cosine_schedule_is_bounded_and_monotone(total in 1usize..500, base in 1e-5f64..1.0, frac in 0.0f64..0.99) {
        let min = base * frac;
        let mut prev = f64::INFINITY;
        for t in 0..=total {
            let lr = cosine_lr(t, total, base, min);
            prop_assert!(lr >= min - 1e-15 && lr <= base + 1e-15);
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }
}

#[test]
fn rotary_inner_products_depend_only_on_offset() {
    let (n, dh) = (8, 8);
    let tables = RotaryTables::<f64>::build(GridSpec::square(n, dh).unwrap()).unwrap();
    let q: Vec<f64> = (0..dh).map(|c| (c as f64 * 1.3).sin() + 0.2).collect();
    let k: Vec<f64> = (0..dh).map(|c| (c as f64 * 0.7).cos() - 0.1).collect();
    let place = |v: &[f64]| Tensor::from_fn(&[n, n, 1, dh], |i| v[i % dh]);
    let (rq, rk) = (tables.apply(&place(&q)).unwrap(), tables.apply(&place(&k)).unwrap());
    let dot = |x: usize, y: usize, x2: usize, y2: usize| -> f64 {
        (0..dh).map(|c| rq.at(&[x, y, 0, c]) * rk.at(&[x2, y2, 0, c])).sum()
    };
    // axis 0: same column, rows differ; axis 1: same row, columns differ
    for axis in 0..2 {
        let mut by_offset: Vec<Option<f64>> = vec![None; 2 * n - 1];
        for fixed in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let v = if axis == 0 { dot(i, fixed, j, fixed) } else { dot(fixed, i, fixed, j) };
                    let slot = &mut by_offset[i + n - 1 - j];
                    match slot {
                        Some(w) => assert!((v - *w).abs() < 1e-5, "axis {axis} offset {}", i as i64 - j as i64),
                        None => *slot = Some(v),
                    }
                }
            }
        }
    }
}

#[test]
fn base_coordinates_span_minus_pi_to_pi() {
    for n in [2usize, 7, 28, 64] {
        let a = axial_angles(&GridSpec::square(n, 4).unwrap()).unwrap();
        // channel 0 has frequency 1 and follows the row
        assert_eq!(a.at(&[0, 0, 0]), -std::f64::consts::PI);
        for x in 0..n {
            let u = a.at(&[x, 0, 0]);
            assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&u));
        }
    }
}
