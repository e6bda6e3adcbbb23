//! Symmetric banded storage and Cholesky factorization for the smoother's
//! normal equations.

use nalgebra::{DMatrix, DVector};

/// Lower band of a symmetric `n x n` matrix with `bw` sub-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to `(i, j)` and, implicitly, `(j, i)`.
    ///
    /// # Panics
    /// If the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// Adds `J^T J`, with column `c` of `jac` mapped to row/column `index[c]`.
    /// All-zero columns are skipped.
    pub fn add_gram(&mut self, index: &[usize], jac: &DMatrix<f64>) {
        let rows = jac.nrows();
        let data = jac.as_slice();
        let col = |c: usize| &data[c * rows..(c + 1) * rows];
        let nz: Vec<usize> = (0..jac.ncols()).filter(|&c| col(c).iter().any(|v| *v != 0.0)).collect();
        for (x, &a) in nz.iter().enumerate() {
            let ca = col(a);
            for &b in &nz[..=x] {
                let s: f64 = ca.iter().zip(col(b)).map(|(p, q)| p * q).sum();
                self.add(index[a], index[b], s);
            }
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.data[self.slot(i, i)])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Cholesky factor `L` (same band), or `None` if a pivot is not positive.
    pub fn cholesky(&self) -> Option<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            for j in k0..=i {
                let kmin = k0.max(j.saturating_sub(bw));
                // Row r holds L[r][r - d] at offset d.
                let len = j - kmin;
                let ri = &l[i * w + (i - j) + 1..i * w + (i - j) + 1 + len];
                let rj = &l[j * w + 1..j * w + 1 + len];
                let s = self.data[i * w + (i - j)] - dot(ri, rj);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Some(BandCholesky { n, bw, l })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut y = b.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for (d, yk) in y.as_slice()[lo..i].iter().rev().enumerate() {
                s -= self.l[i * w + d + 1] * yk;
            }
            y[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        y
    }

    /// Columns `cols` of `A^-1`, restricted to rows `cols` (a marginal covariance block).
    pub fn inverse_block(&self, cols: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(cols.len(), cols.len());
        for (c, &col) in cols.iter().enumerate() {
            let mut e = DVector::zeros(self.n);
            e[col] = 1.0;
            let x = self.solve(&e);
            for (r, &row) in cols.iter().enumerate() {
                out[(r, c)] = x[row];
            }
        }
        (&out + out.transpose()) * 0.5
    }

    /// Ratio of the largest to smallest squared pivot, a cheap conditioning estimate.
    pub fn condition_estimate(&self) -> f64 {
        let w = self.bw + 1;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..self.n {
            let d = self.l[i * w] * self.l[i * w];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if self.n == 0 {
            1.0
        } else {
            hi / lo
        }
    }
}
