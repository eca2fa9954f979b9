//! Symmetric positive-definite banded matrices with an in-place Cholesky
//! factorization. This is the direct solver behind the deconvolution
//! quadratic subproblem; the operator `HᵀH + ρDᵀD` is banded with bandwidth
//! equal to the kernel support, so factor and solve cost `O(n·bw²)` and
//! `O(n·bw)`.

use crate::error::{Error, Result};

/// Lower-triangle band storage: column `j` holds entries `(j + d, j)` for
/// `d in 0..=bw` at `data[j·(bw + 1) + d]`.
#[derive(Debug, Clone)]
pub(crate) struct SymBand {
    pub n: usize,
    pub bw: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        assert!(n > 0);
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.bw && i < self.n);
        j * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to entry `(i, j)` of the lower triangle, `i >= j`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    #[cfg(test)]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i >= j { (j, i) } else { (i, j) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.data[lo * (self.bw + 1) + (hi - lo)]
        }
    }

    /// Factors `A = L·Lᵀ` in place. Fails if the matrix is not numerically
    /// positive definite.
    pub fn cholesky(mut self) -> Result<BandFactor> {
        let (n, bw, stride) = (self.n, self.bw, self.bw + 1);
        for j in 0..n {
            let k_lo = j.saturating_sub(bw);
            let mut s = self.data[j * stride];
            for k in k_lo..j {
                let l_jk = self.data[k * stride + (j - k)];
                s -= l_jk * l_jk;
            }
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Domain(format!(
                    "banded Cholesky: matrix not positive definite at column {j} (pivot {s})"
                )));
            }
            let l_jj = s.sqrt();
            self.data[j * stride] = l_jj;
            let d_max = bw.min(n - 1 - j);
            for d in 1..=d_max {
                let i = j + d;
                let mut s = self.data[j * stride + d];
                for k in i.saturating_sub(bw)..j {
                    s -= self.data[k * stride + (i - k)] * self.data[k * stride + (j - k)];
                }
                self.data[j * stride + d] = s / l_jj;
            }
        }
        Ok(BandFactor {
            n,
            bw,
            data: self.data,
        })
    }
}

/// Cholesky factor `L` in the same band layout; solves `L·Lᵀ·x = b`.
#[derive(Debug, Clone)]
pub(crate) struct BandFactor {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandFactor {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let (n, bw, stride) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[k * stride + (i - k)] * x[k];
            }
            x[i] = s / self.data[i * stride];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            let k_hi = (i + bw).min(n - 1);
            for k in (i + 1)..=k_hi {
                s -= self.data[i * stride + (k - i)] * x[k];
            }
            x[i] = s / self.data[i * stride];
        }
    }
}
