//! Symmetric band matrices, their Cholesky factors and Gaussian sampling in
//! precision form.
//!
//! Only the lower band is stored. Row `i` owns `bandwidth + 1` contiguous
//! slots holding `K[i, i - bandwidth ..= i]`; slots that would fall left of
//! column 0 are kept as zero padding. This keeps the inner products of the
//! row-oriented Cholesky and both triangular solves on contiguous memory.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative pivot tolerance: a pivot below this times the largest diagonal
/// entry is treated as a loss of positive definiteness.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BandSymmetricMatrix {
    dim: usize,
    bandwidth: usize,
    bands: Vec<f64>,
}

impl BandSymmetricMatrix {
    /// Zero matrix of the given size. Requires `dim >= 1` and `bandwidth < dim`.
    pub fn zeros(dim: usize, bandwidth: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if bandwidth >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim - 1,
                got: bandwidth,
            });
        }
        Ok(Self {
            dim,
            bandwidth,
            bands: vec![0.0; dim * (bandwidth + 1)],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim, 0)?;
        m.bands.iter_mut().for_each(|v| *v = 1.0);
        Ok(m)
    }

    /// Build from a closure evaluated on the lower band (`i >= j`, `i - j <= bandwidth`).
    pub fn from_fn(
        dim: usize,
        bandwidth: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut m = Self::zeros(dim, bandwidth)?;
        for i in 0..dim {
            for j in i.saturating_sub(bandwidth)..=i {
                let idx = m.index(i, j);
                m.bands[idx] = f(i, j);
            }
        }
        Ok(m)
    }

    /// Take the band of a dense symmetric matrix; entries outside the band are ignored.
    pub fn from_dense(dense: &DMatrix<f64>, bandwidth: usize) -> Result<Self> {
        if dense.nrows() != dense.ncols() {
            return Err(Error::DimensionMismatch {
                expected: dense.nrows(),
                got: dense.ncols(),
            });
        }
        Self::from_fn(dense.nrows(), bandwidth, |i, j| dense[(i, j)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.bandwidth);
        i * (self.bandwidth + 1) + self.bandwidth - (i - j)
    }

    /// Entry `(i, j)` of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bandwidth {
            0.0
        } else {
            self.bands[self.index(i, j)]
        }
    }

    /// Add `value` to entries `(i, j)` and `(j, i)`. Panics outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bandwidth, "entry ({i}, {j}) outside band");
        let idx = self.index(i, j);
        self.bands[idx] += value;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bandwidth, "entry ({i}, {j}) outside band");
        let idx = self.index(i, j);
        self.bands[idx] = value;
    }

    /// Lower band of row `i`, i.e. `K[i, i - bandwidth ..= i]` with zero padding.
    #[inline]
    pub fn row_band(&self, i: usize) -> &[f64] {
        let w = self.bandwidth + 1;
        &self.bands[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn row_band_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.bandwidth + 1;
        &mut self.bands[i * w..(i + 1) * w]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        let bw = self.bandwidth;
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = self.row_band(i);
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                let v = row[bw - (i - j)];
                out[i] += v * x[j];
                out[j] += v * x[i];
            }
            out[i] += row[bw] * x[i];
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.bands.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn max_diagonal(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row_band(i)[self.bandwidth])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        BandCholesky::new(self)
    }
}

/// Lower-triangular band factor `L` with `L Lᵀ = K`, same bandwidth and layout as `K`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    dim: usize,
    bandwidth: usize,
    factor: Vec<f64>,
}

impl BandCholesky {
    pub fn new(k: &BandSymmetricMatrix) -> Result<Self> {
        let dim = k.dim;
        let bw = k.bandwidth;
        let w = bw + 1;
        let tol = PIVOT_TOLERANCE * k.max_diagonal().max(0.0);
        let mut l = k.bands.clone();

        for i in 0..dim {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // columns shared by rows i and j inside both bands
                let start = lo.max(j.saturating_sub(bw));
                let len = j - start;
                let ri = i * w + bw - (i - start);
                let rj = j * w + bw - (j - start);
                let mut s = l[i * w + bw - (i - j)];
                for (a, b) in l[ri..ri + len].iter().zip(&l[rj..rj + len]) {
                    s -= a * b;
                }
                if i == j {
                    if !(s > tol) {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + bw - (i - j)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self {
            dim,
            bandwidth: bw,
            factor: l,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Entry `L[i, j]` (zero above the diagonal or outside the band).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j > self.bandwidth {
            0.0
        } else {
            self.factor[i * (self.bandwidth + 1) + self.bandwidth - (i - j)]
        }
    }

    #[inline]
    fn diag(&self, i: usize) -> f64 {
        self.factor[i * (self.bandwidth + 1) + self.bandwidth]
    }

    /// `log |K| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    pub fn to_dense_lower(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// Solve `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) -> Result<()> {
        check_len(self.dim, b.len())?;
        let bw = self.bandwidth;
        let w = bw + 1;
        for i in 0..self.dim {
            let lo = i.saturating_sub(bw);
            let row = &self.factor[i * w + bw - (i - lo)..i * w + bw];
            let mut s = b[i];
            for (a, y) in row.iter().zip(&b[lo..i]) {
                s -= a * y;
            }
            b[i] = s / self.diag(i);
        }
        Ok(())
    }

    /// Solve `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) -> Result<()> {
        check_len(self.dim, y.len())?;
        let bw = self.bandwidth;
        let w = bw + 1;
        for i in (0..self.dim).rev() {
            let xi = y[i] / self.diag(i);
            y[i] = xi;
            let lo = i.saturating_sub(bw);
            let row = &self.factor[i * w + bw - (i - lo)..i * w + bw];
            for (a, t) in row.iter().zip(&mut y[lo..i]) {
                *t -= a * xi;
            }
        }
        Ok(())
    }

    /// `K⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x)?;
        self.backward_in_place(&mut x)?;
        Ok(x)
    }

    /// `mean + L⁻ᵀ z`: a draw from `N(mean, K⁻¹)` when `z` is standard normal.
    pub fn draw_with_normals(&self, mean: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, mean.len())?;
        let mut u = z.to_vec();
        self.backward_in_place(&mut u)?;
        for (u, m) in u.iter_mut().zip(mean) {
            *u += m;
        }
        Ok(u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let z = standard_normals(self.dim, rng);
        self.draw_with_normals(mean, &z)
    }

    /// Draw from `N(K⁻¹ b, K⁻¹)` with a single backward sweep; returns `(draw, K⁻¹ b)`.
    pub fn sample_canonical<R: Rng + ?Sized>(
        &self,
        b: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut y = b.to_vec();
        self.forward_in_place(&mut y)?;
        let mut mean = y.clone();
        self.backward_in_place(&mut mean)?;
        for v in y.iter_mut() {
            *v += rng.sample::<f64, _>(StandardNormal);
        }
        self.backward_in_place(&mut y)?;
        Ok((y, mean))
    }
}

pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub fn band_cholesky(k: &BandSymmetricMatrix) -> Result<BandCholesky> {
    k.cholesky()
}

pub fn solve_band(k: &BandSymmetricMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_len(k.dim(), b.len())?;
    k.cholesky()?.solve(b)
}

/// One exact draw from `N(mean, K⁻¹)`.
pub fn precision_sample<R: Rng + ?Sized>(
    k: &BandSymmetricMatrix,
    mean: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_len(k.dim(), mean.len())?;
    k.cholesky()?.sample(mean, rng)
}

/// First-difference operator `H` over `horizon` blocks of size `block_dim`:
/// identity blocks on the diagonal, negative identity blocks just below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifferenceOperator {
    pub block_dim: usize,
    pub horizon: usize,
}

impl DifferenceOperator {
    pub fn new(block_dim: usize, horizon: usize) -> Result<Self> {
        if block_dim == 0 || horizon == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        Ok(Self { block_dim, horizon })
    }

    pub fn dim(&self) -> usize {
        self.block_dim * self.horizon
    }

    /// Bandwidth of `HᵀH`; zero when there is a single period.
    pub fn gram_bandwidth(&self) -> usize {
        if self.horizon > 1 {
            self.block_dim
        } else {
            0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.block_dim;
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                1.0
            } else if i >= k && j == i - k {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// `HᵀH`: `2 I` diagonal blocks except the last (`I`), `-I` off the block diagonal.
    pub fn gram(&self) -> BandSymmetricMatrix {
        let mut g = BandSymmetricMatrix::zeros(self.dim(), self.gram_bandwidth())
            .expect("valid operator has positive dimension");
        add_difference_gram(&mut g, self.block_dim, self.horizon, 1.0);
        g
    }
}

/// Add `scale * HᵀH` to a band matrix whose bandwidth is at least `block_dim`
/// (or any bandwidth when `horizon == 1`).
pub(crate) fn add_difference_gram(
    m: &mut BandSymmetricMatrix,
    block_dim: usize,
    horizon: usize,
    scale: f64,
) {
    let k = block_dim;
    for t in 0..horizon {
        let d = if t + 1 < horizon { 2.0 } else { 1.0 };
        for a in 0..k {
            let i = t * k + a;
            m.add(i, i, d * scale);
            if t + 1 < horizon {
                m.add(i + k, i, -scale);
            }
        }
    }
}

pub fn gram_of_difference(op: DifferenceOperator) -> BandSymmetricMatrix {
    op.gram()
}
