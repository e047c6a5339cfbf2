//! Multi-scale rotary axial embeddings for a 2D patch grid.
//!
//! Each grid axis is mapped onto a fixed angular range, `(2 i - n) / n * pi`,
//! so the embedding has the same span for every grid size. Channel pairs
//! alternate between the row axis (even channels) and the column axis (odd
//! channels), and the per-pair frequency decays across depth as
//! `10000^(-2 s / m)` with `m = head_dim / 2`. The frequency vector is two copies
//! of that half-depth curve, so channel `c` and `c + head_dim / 2` always share
//! an axis and a frequency and can be rotated together as a plane.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use crate::tensor::{Element, Tensor, Var};
use crate::{Error, Result};

/// Geometry of a patch grid plus the per-head channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    /// Height in patches.
    pub rows: usize,
    /// Width in patches.
    pub cols: usize,
    pub head_dim: usize,
    /// Scale the shorter axis by `min/max` on non-square grids.
    pub aspect_correction: bool,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, head_dim: usize) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(4) {
            return Err(Error::BadHeadDim(head_dim));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("empty grid {rows}x{cols}")));
        }
        Ok(Self {
            rows,
            cols,
            head_dim,
            aspect_correction: true,
        })
    }

    pub fn square(side: usize, head_dim: usize) -> Result<Self> {
        Self::new(side, side, head_dim)
    }

    pub fn with_aspect_correction(mut self, on: bool) -> Self {
        self.aspect_correction = on;
        self
    }

    pub fn positions(&self) -> usize {
        self.rows * self.cols
    }
}

/// Per-channel frequencies: a half-depth decay curve, concatenated twice.
pub fn decay_frequencies(head_dim: usize) -> Result<Vec<f64>> {
    if head_dim == 0 || !head_dim.is_multiple_of(4) {
        return Err(Error::BadHeadDim(head_dim));
    }
    let m = head_dim / 2;
    let half: Vec<f64> = (0..m)
        .map(|j| 10000f64.powf(-2.0 * (j / 2) as f64 / m as f64))
        .collect();
    Ok(half.iter().chain(&half).copied().collect())
}

/// Maps index `i` of an axis of length `n` into `[-pi, pi)`.
pub fn axis_coordinate(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 - n as f64) / n as f64 * PI
}

/// Rotation angles `[rows, cols, head_dim]`: even channels follow the row
/// coordinate, odd channels the column coordinate.
pub fn axial_angles(grid: &GridSpec) -> Result<Tensor<f64>> {
    let freqs = decay_frequencies(grid.head_dim)?;
    let (rows, cols, dh) = (grid.rows, grid.cols, grid.head_dim);
    let (row_aspect, col_aspect) = if grid.aspect_correction && rows != cols {
        let aspect = rows.min(cols) as f64 / rows.max(cols) as f64;
        if rows < cols {
            (aspect, 1.0)
        } else {
            (1.0, aspect)
        }
    } else {
        (1.0, 1.0)
    };
    let mut data = Vec::with_capacity(rows * cols * dh);
    for x in 0..rows {
        let u = axis_coordinate(x, rows) * row_aspect;
        for y in 0..cols {
            let v = axis_coordinate(y, cols) * col_aspect;
            data.extend(
                freqs
                    .iter()
                    .enumerate()
                    .map(|(c, f)| f * if c % 2 == 0 { u } else { v }),
            );
        }
    }
    Ok(Tensor::new(&[rows, cols, dh], data)?)
}

/// Precomputed `cos`/`sin` of [`axial_angles`], shared by every layer.
#[derive(Clone, Debug)]
pub struct RotaryTables<T> {
    grid: GridSpec,
    cos: Arc<Tensor<T>>,
    sin: Arc<Tensor<T>>,
}

impl<T: Element> RotaryTables<T> {
    pub fn build(grid: GridSpec) -> Result<Self> {
        let angles = axial_angles(&grid)?;
        Ok(Self {
            grid,
            cos: Arc::new(angles.map(f64::cos).cast()),
            sin: Arc::new(angles.map(f64::sin).cast()),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cos(&self) -> &Tensor<T> {
        &self.cos
    }

    pub fn sin(&self) -> &Tensor<T> {
        &self.sin
    }

    /// Rotates `x[..., rows, cols, heads, head_dim]`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(crate::tensor::ops::rotate_half_pairs(x, &self.cos, &self.sin, false)?)
    }

    /// Differentiable form of [`apply`](Self::apply).
    pub fn apply_var<'t>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.rotate_half(&self.cos, &self.sin)?)
    }

    /// Writes `row,col,channel,cos,sin` lines with a header.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "row,col,channel,cos,sin")?;
        let dh = self.grid.head_dim;
        for (i, (c, s)) in self.cos.data().iter().zip(self.sin.data()).enumerate() {
            let (pos, ch) = (i / dh, i % dh);
            let (row, col) = (pos / self.grid.cols, pos % self.grid.cols);
            writeln!(out, "{row},{col},{ch},{c},{s}")?;
        }
        Ok(())
    }
}

pub fn build_tables<T: Element>(grid: GridSpec) -> Result<RotaryTables<T>> {
    RotaryTables::build(grid)
}

/// Rotate-half application: `out[c] = x[c] cos[c] + half(x)[c] sin[c]` where
/// `half(x)[c]` is `-x[c + m]` below `m = head_dim / 2` and `x[c - m]` above.
pub fn apply_rotary<T: Element>(x: &Tensor<T>, tables: &RotaryTables<T>) -> Result<Tensor<T>> {
    tables.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequencies_for_head_dim_8() {
        let f = decay_frequencies(8).unwrap();
        let want = [1.0, 1.0, 0.01, 0.01, 1.0, 1.0, 0.01, 0.01];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{f:?}");
        }
        for dh in [4, 12, 64, 128] {
            let f = decay_frequencies(dh).unwrap();
            assert_eq!(f[0], 1.0);
            for j in 0..dh / 2 {
                assert_eq!(f[j], f[j + dh / 2]);
            }
        }
        assert!(matches!(decay_frequencies(6), Err(Error::BadHeadDim(6))));
        assert!(matches!(decay_frequencies(0), Err(Error::BadHeadDim(0))));
    }

    #[test]
    fn angles_on_a_2x2_grid() {
        let a = axial_angles(&GridSpec::square(2, 8).unwrap()).unwrap();
        assert_eq!(a.at(&[0, 0, 0]), -PI);
        assert_eq!(a.at(&[0, 1, 0]), -PI);
        assert_eq!(a.at(&[1, 0, 0]), 0.0);
        // odd channel 1 follows the column
        assert_eq!(a.at(&[1, 0, 1]), -PI);
        assert_eq!(a.at(&[1, 1, 1]), 0.0);
    }

    #[test]
    fn square_grid_axis_separation() {
        let grid = GridSpec::square(5, 8).unwrap();
        let a = axial_angles(&grid).unwrap();
        for x in 0..5 {
            for y in 0..5 {
                for c in 0..8 {
                    let other = if c % 2 == 0 { a.at(&[x, 0, c]) } else { a.at(&[0, y, c]) };
                    assert_eq!(a.at(&[x, y, c]), other);
                }
            }
        }
    }

    #[test]
    fn aspect_correction_scales_the_short_axis() {
        let grid = GridSpec::new(2, 4, 4).unwrap();
        let a = axial_angles(&grid).unwrap();
        assert_eq!(a.at(&[0, 0, 0]), -PI * 0.5);
        assert_eq!(a.at(&[0, 0, 1]), -PI);
        let plain = axial_angles(&grid.with_aspect_correction(false)).unwrap();
        assert_eq!(plain.at(&[0, 0, 0]), -PI);
    }

    #[test]
    fn table_values() {
        let t = RotaryTables::<f64>::build(GridSpec::square(2, 8).unwrap()).unwrap();
        assert_eq!(t.cos().at(&[0, 0, 0]), -1.0);
        assert!(t.sin().at(&[0, 0, 0]).abs() < 1e-15);
        // centre row of a 2x2 grid has zero angle on row channels
        assert_eq!(t.cos().at(&[1, 0, 0]), 1.0);
        assert_eq!(t.sin().at(&[1, 0, 0]), 0.0);
        for (c, s) in t.cos().data().iter().zip(t.sin().data()) {
            assert!((c * c + s * s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_rotates_the_pair() {
        // single position, one head, dh = 4, angle pi/2 on every channel
        let cos = Arc::new(Tensor::<f64>::full(&[1, 1, 4], 0.0));
        let sin = Arc::new(Tensor::<f64>::full(&[1, 1, 4], 1.0));
        let x = Tensor::new(&[1, 1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = crate::tensor::ops::rotate_half_pairs(&x, &cos, &sin, false).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_angles_are_identity() {
        let tables = RotaryTables::<f64> {
            grid: GridSpec::square(2, 4).unwrap(),
            cos: Arc::new(Tensor::ones(&[2, 2, 4])),
            sin: Arc::new(Tensor::zeros(&[2, 2, 4])),
        };
        let x = Tensor::from_fn(&[2, 2, 3, 4], |i| i as f64 - 7.0);
        assert_eq!(tables.apply(&x).unwrap(), x);
        assert!(tables.apply(&Tensor::zeros(&[2, 2, 3, 8])).is_err());
    }

    #[test]
    fn csv_dump() {
        let t = RotaryTables::<f64>::build(GridSpec::new(1, 2, 4).unwrap()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert_eq!(lines[0], "row,col,channel,cos,sin");
        assert!(lines[1].starts_with("0,0,0,"));
        assert!(lines[8].starts_with("0,1,3,"));
    }
}
