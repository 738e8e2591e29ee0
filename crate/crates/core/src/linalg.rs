//! Small dense matrices over any [`Real`].

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix storage size");
        Self { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> Mat<f64> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.value()).collect(),
        }
    }

    /// Sub-block `[r0, r0+nr) × [c0, c0+nc)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Mat<T> {
        let mut data = Vec::with_capacity(nr * nc);
        for r in r0..r0 + nr {
            data.extend_from_slice(&self.data[r * self.cols + c0..r * self.cols + c0 + nc]);
        }
        Mat::from_vec(nr, nc, data)
    }

    pub fn transpose(&self) -> Mat<T> {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Mat::from_vec(self.cols, self.rows, data)
    }

    /// `self · v` with `zero` as accumulator seed.
    pub fn matvec(&self, zero: T, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| zero.add_dot(self.row(r), v)).collect()
    }

    /// Accumulates `self · v` into `out`.
    pub fn matvec_add(&self, out: &mut [T], v: &[T]) {
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = o.add_dot(self.row(r), v);
        }
    }

    pub fn matmul(&self, zero: T, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, other.rows, "matmul shapes");
        let ot = other.transpose();
        let mut data = Vec::with_capacity(self.rows * other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                data.push(zero.add_dot(self.row(r), ot.row(c)));
            }
        }
        Mat::from_vec(self.rows, other.cols, data)
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v = *v * s;
        }
    }

    /// Horizontal concatenation.
    pub fn hcat(blocks: &[&Mat<T>]) -> Mat<T> {
        let rows = blocks[0].rows;
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for b in blocks {
                assert_eq!(b.rows, rows, "hcat row mismatch");
                data.extend_from_slice(b.row(r));
            }
        }
        Mat::from_vec(rows, cols, data)
    }

    /// Solves `self · X = rhs` by Gaussian elimination with partial pivoting.
    /// Pivots are chosen on values, so the recorded operations are the ones a
    /// plain-`f64` solve would perform.
    pub fn solve(&self, rhs: &Mat<T>) -> Result<Mat<T>> {
        let n = self.rows;
        if self.cols != n || rhs.rows != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: rhs.rows,
                context: "linear solve",
            });
        }
        let m = rhs.cols;
        let mut a = self.clone();
        let mut b = rhs.clone();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| {
                    a.get(i, col)
                        .value()
                        .abs()
                        .total_cmp(&a.get(j, col).value().abs())
                })
                .expect("non-empty pivot range");
            if a.get(pivot, col).value() == 0.0 {
                return Err(Error::InvalidArgument("singular matrix in solve".into()));
            }
            if pivot != col {
                for c in 0..n {
                    a.data.swap(pivot * n + c, col * n + c);
                }
                for c in 0..m {
                    b.data.swap(pivot * m + c, col * m + c);
                }
            }
            let inv = a.get(col, col).recip();
            for r in col + 1..n {
                let factor = a.get(r, col) * inv;
                if factor.value() == 0.0 {
                    continue;
                }
                for c in col + 1..n {
                    let v = a.get(r, c) - factor * a.get(col, c);
                    a.set(r, c, v);
                }
                for c in 0..m {
                    let v = b.get(r, c) - factor * b.get(col, c);
                    b.set(r, c, v);
                }
            }
        }
        for c in 0..m {
            for r in (0..n).rev() {
                let mut acc = b.get(r, c);
                for k in r + 1..n {
                    acc = acc - a.get(r, k) * b.get(k, c);
                }
                b.set(r, c, acc / a.get(r, r));
            }
        }
        Ok(b)
    }
}

/// Leading singular triplet `(σ, u, v)` of `m` by the power method on `mᵀm`.
///
/// The Gram matrix is first squared repeatedly, which raises the eigenvalue
/// ratio to the `2^k`-th power; plain iterations then polish `v` until it moves
/// by at most `tol` (sup norm) or `max_iter` is reached. Accurate singular
/// vectors matter because callers differentiate `uᵀ m v`.
///
/// Returns `σ = 0` with zero vectors for an all-zero matrix.
pub fn leading_singular(m: &Mat<f64>, max_iter: usize, tol: f64) -> (f64, Vec<f64>, Vec<f64>) {
    const SQUARINGS: usize = 24;
    let mut g = m.transpose().matmul(0.0, m);
    for _ in 0..SQUARINGS {
        let peak = g.data.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if peak == 0.0 || !peak.is_finite() {
            break;
        }
        g.scale(1.0 / peak);
        g = g.matmul(0.0, &g);
    }
    let t = g.transpose();
    let best = (0..t.rows)
        .max_by(|&a, &b| {
            let na: f64 = t.row(a).iter().map(|x| x * x).sum();
            let nb: f64 = t.row(b).iter().map(|x| x * x).sum();
            na.total_cmp(&nb)
        })
        .unwrap_or(0);
    let mut v: Vec<f64> = if t.rows > 0 && t.row(best).iter().any(|x| *x != 0.0) {
        t.row(best).to_vec()
    } else {
        (0..m.cols).map(|i| 1.0 + 0.01 * i as f64).collect()
    };
    normalize(&mut v);
    for _ in 0..max_iter {
        let u = m.matvec(0.0, &v);
        let mut w = m.transpose().matvec(0.0, &u);
        if normalize(&mut w) == 0.0 {
            return (0.0, vec![0.0; m.rows], vec![0.0; m.cols]);
        }
        let moved = w.iter().zip(&v).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        v = w;
        if moved <= tol {
            break;
        }
    }
    let mut u = m.matvec(0.0, &v);
    let s = normalize(&mut u);
    if s == 0.0 {
        return (0.0, vec![0.0; m.rows], vec![0.0; m.cols]);
    }
    (s, u, v)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}
