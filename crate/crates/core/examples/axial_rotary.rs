//! Prints the axial rotary angles of a small grid and shows that rotated
//! inner products depend only on the offset along an axis.
//!
//! `cargo run --example axial_rotary -- [side] [head_dim]`

use cat_core::rope::{axial_angles, decay_frequencies, GridSpec, RotaryTables};
use cat_core::tensor::Tensor;

fn main() -> cat_core::Result<()> {
    let arg = |i: usize, default: usize| std::env::args().nth(i).map_or(default, |s| s.parse().expect("integer"));
    let (side, dh) = (arg(1, 4), arg(2, 8));
    let grid = GridSpec::square(side, dh)?;
    println!("frequencies {:?}", decay_frequencies(dh)?);
    let angles = axial_angles(&grid)?;
    for x in 0..side {
        let row: Vec<String> = (0..side).map(|y| format!("{:+.3}/{:+.3}", angles.at(&[x, y, 0]), angles.at(&[x, y, 1]))).collect();
        println!("row {x}: {}", row.join("  "));
    }

    let tables = RotaryTables::<f64>::build(grid)?;
    let q: Vec<f64> = (0..dh).map(|c| (c as f64 + 1.0).sin()).collect();
    let k: Vec<f64> = (0..dh).map(|c| (c as f64 * 0.5).cos()).collect();
    let place = |v: &[f64]| Tensor::from_fn(&[side, side, 1, dh], |i| v[i % dh]);
    let (rq, rk) = (tables.apply(&place(&q))?, tables.apply(&place(&k))?);
    let dot = |a: [usize; 2], b: [usize; 2]| -> f64 { (0..dh).map(|c| rq.at(&[a[0], a[1], 0, c]) * rk.at(&[b[0], b[1], 0, c])).sum() };
    println!("column offset 1 along each row:");
    for x in 0..side {
        println!("  row {x}: {:.6}", dot([x, 1], [x, 0]));
    }
    Ok(())
}
