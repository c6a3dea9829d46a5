//! Stochastic volatility: log-variance paths through the seven-component
//! normal mixture approximation of `log χ²₁`, and the conditionals of the
//! random-walk variance and the initial log-variance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::band::{add_difference_gram, BandSymmetricMatrix};
use crate::error::{Error, Result};
use crate::priors::{sample_inv_gamma, sample_normal, HyperParams};

/// Added to squared residuals before taking logs.
pub const LOG_SQUARE_OFFSET: f64 = 1e-4;

/// Mean of `log χ²₁`.
pub const LOG_CHI2_MEAN: f64 = -1.2704;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityState {
    pub h: Vec<f64>,
    pub h0: f64,
    pub sigma2_h: f64,
}

impl VolatilityState {
    pub fn flat(t: usize, level: f64, sigma2_h: f64) -> Self {
        Self {
            h: vec![level; t],
            h0: level,
            sigma2_h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTable {
    components: [MixtureComponent; 7],
    log_weights: [f64; 7],
    offset: f64,
}

const KSC_WEIGHTS: [f64; 7] = [0.00730, 0.10556, 0.00002, 0.04395, 0.34001, 0.24566, 0.25750];
const KSC_MEANS: [f64; 7] = [
    -10.12999, -3.97281, -8.56686, 2.77786, 0.61942, 1.79518, -1.08819,
];
const KSC_VARIANCES: [f64; 7] = [5.79596, 2.61369, 5.17950, 0.16735, 0.64009, 0.34023, 1.26261];

impl MixtureTable {
    /// The seven-component table of Kim, Shephard and Chib (1998), recentred
    /// so that it approximates `log ε²` for standard normal `ε`.
    pub fn log_chi2() -> Self {
        let components = std::array::from_fn(|j| MixtureComponent {
            weight: KSC_WEIGHTS[j],
            mean: KSC_MEANS[j] + LOG_CHI2_MEAN,
            variance: KSC_VARIANCES[j],
        });
        Self::new(components).expect("embedded mixture constants are valid")
    }

    /// Validates weights and the first two moments against `log χ²₁`.
    pub fn new(components: [MixtureComponent; 7]) -> Result<Self> {
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0) || !(c.variance > 0.0))
            || (wsum - 1.0).abs() > 1e-6
        {
            return Err(Error::InvalidParameters(
                "mixture weights must be positive and sum to one".into(),
            ));
        }
        let (mean, var) = moments(&components);
        if (mean - LOG_CHI2_MEAN).abs() > 0.05
            || (var - std::f64::consts::PI.powi(2) / 2.0).abs() > 0.1
        {
            return Err(Error::InvalidParameters(format!(
                "mixture moments ({mean}, {var}) do not match log chi-square"
            )));
        }
        Ok(Self {
            components,
            log_weights: std::array::from_fn(|j| components[j].weight.ln()),
            offset: LOG_SQUARE_OFFSET,
        })
    }

    /// Replace the constant added to squared residuals before taking logs.
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn log_squared_residuals(&self, residuals: &[f64]) -> Vec<f64> {
        residuals
            .iter()
            .map(|e| (e * e + self.offset).ln())
            .collect()
    }

    pub fn components(&self) -> &[MixtureComponent; 7] {
        &self.components
    }

    pub fn moments(&self) -> (f64, f64) {
        moments(&self.components)
    }
}

impl Default for MixtureTable {
    fn default() -> Self {
        Self::log_chi2()
    }
}

fn moments(c: &[MixtureComponent; 7]) -> (f64, f64) {
    let mean: f64 = c.iter().map(|c| c.weight * c.mean).sum();
    let second: f64 = c.iter().map(|c| c.weight * (c.variance + c.mean * c.mean)).sum();
    (mean, second - mean * mean)
}

/// Draw each period's mixture component from its discrete conditional given `h`.
pub fn sample_components<R: Rng + ?Sized>(
    ystar: &[f64],
    h: &[f64],
    table: &MixtureTable,
    rng: &mut R,
) -> Vec<usize> {
    let comps = table.components();
    let mut logp = [0.0; 7];
    ystar
        .iter()
        .zip(h)
        .map(|(y, h)| {
            let d = y - h;
            for j in 0..7 {
                let c = &comps[j];
                logp[j] = table.log_weights[j]
                    - 0.5 * c.variance.ln()
                    - 0.5 * (d - c.mean).powi(2) / c.variance;
            }
            let top = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut cum = [0.0; 7];
            let mut acc = 0.0;
            for j in 0..7 {
                acc += (logp[j] - top).exp();
                cum[j] = acc;
            }
            let u = rng.random::<f64>() * acc;
            cum.iter().position(|c| u < *c).unwrap_or(6)
        })
        .collect()
}

/// Precision and canonical mean vector of `h | components, h0, σ²_h`.
pub fn volatility_precision(
    ystar: &[f64],
    components: &[usize],
    h0: f64,
    sigma2_h: f64,
    table: &MixtureTable,
) -> Result<(BandSymmetricMatrix, Vec<f64>)> {
    let t = ystar.len();
    if components.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            got: components.len(),
        });
    }
    let mut k = BandSymmetricMatrix::zeros(t, usize::from(t > 1))?;
    add_difference_gram(&mut k, 1, t, 1.0 / sigma2_h);
    let comps = table.components();
    let mut rhs = vec![0.0; t];
    for (s, ((y, &j), r)) in ystar.iter().zip(components).zip(rhs.iter_mut()).enumerate() {
        let c = &comps[j];
        k.add(s, s, 1.0 / c.variance);
        *r = (y - c.mean) / c.variance;
    }
    rhs[0] += h0 / sigma2_h;
    Ok((k, rhs))
}

/// New log-variance path given the structural residuals of one equation.
pub fn sample_volatility_path<R: Rng + ?Sized>(
    residuals: &[f64],
    state: &VolatilityState,
    table: &MixtureTable,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if residuals.len() != state.h.len() {
        return Err(Error::DimensionMismatch {
            expected: state.h.len(),
            got: residuals.len(),
        });
    }
    let ystar = table.log_squared_residuals(residuals);
    let comps = sample_components(&ystar, &state.h, table, rng);
    let (k, rhs) = volatility_precision(&ystar, &comps, state.h0, state.sigma2_h, table)?;
    Ok(k.cholesky()?.sample_canonical(&rhs, rng)?.0)
}

/// Draw `(h0, h)` jointly given the mixture components, integrating nothing
/// out but avoiding the slow mixing of alternating `h | h0` and `h0 | h` when
/// `σ²_h` is tiny.
pub fn sample_volatility_path_with_h0<R: Rng + ?Sized>(
    residuals: &[f64],
    state: &VolatilityState,
    hp: &HyperParams,
    table: &MixtureTable,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let t = state.h.len();
    if residuals.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            got: residuals.len(),
        });
    }
    let ystar = table.log_squared_residuals(residuals);
    let comps = sample_components(&ystar, &state.h, table, rng);
    let inv_s2 = 1.0 / state.sigma2_h;
    let mut k = BandSymmetricMatrix::zeros(t + 1, 1)?;
    add_difference_gram(&mut k, 1, t + 1, inv_s2);
    k.add(0, 0, 1.0 / hp.v_h0 - inv_s2);
    let mut rhs = vec![0.0; t + 1];
    rhs[0] = hp.a_h0 / hp.v_h0;
    let c = table.components();
    for (s, (y, &j)) in ystar.iter().zip(&comps).enumerate() {
        k.add(s + 1, s + 1, 1.0 / c[j].variance);
        rhs[s + 1] = (y - c[j].mean) / c[j].variance;
    }
    let mut draw = k.cholesky()?.sample_canonical(&rhs, rng)?.0;
    let h0 = draw.remove(0);
    Ok((h0, draw))
}

/// Shape and scale of the inverse-gamma conditional of `σ²_h`.
pub fn sigma2_h_conditional(h: &[f64], h0: f64, hp: &HyperParams) -> (f64, f64) {
    let mut prev = h0;
    let mut ss = 0.0;
    for &x in h {
        ss += (x - prev).powi(2);
        prev = x;
    }
    (hp.nu_h + h.len() as f64 / 2.0, hp.s_h + 0.5 * ss)
}

pub fn sample_sigma2_h<R: Rng + ?Sized>(
    h: &[f64],
    h0: f64,
    hp: &HyperParams,
    rng: &mut R,
) -> Result<f64> {
    let (shape, scale) = sigma2_h_conditional(h, h0, hp);
    sample_inv_gamma(shape, scale, rng)
}

/// Mean and variance of the normal conditional of `h0`.
pub fn h0_conditional(h1: f64, hp: &HyperParams, sigma2_h: f64) -> (f64, f64) {
    let prec = 1.0 / hp.v_h0 + 1.0 / sigma2_h;
    ((hp.a_h0 / hp.v_h0 + h1 / sigma2_h) / prec, 1.0 / prec)
}

pub fn sample_h0<R: Rng + ?Sized>(h1: f64, hp: &HyperParams, sigma2_h: f64, rng: &mut R) -> f64 {
    let (mean, var) = h0_conditional(h1, hp, sigma2_h);
    sample_normal(mean, var, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_moments() {
        let (m, v) = MixtureTable::log_chi2().moments();
        assert!((m - LOG_CHI2_MEAN).abs() < 0.05);
        assert!((v - std::f64::consts::PI.powi(2) / 2.0).abs() < 0.1);
    }

    #[test]
    fn corrupted_table_rejected() {
        let mut c = *MixtureTable::log_chi2().components();
        c[4].mean += 1.0;
        assert!(MixtureTable::new(c).is_err());
        let mut c = *MixtureTable::log_chi2().components();
        c[0].weight = 0.5;
        assert!(MixtureTable::new(c).is_err());
    }

    #[test]
    fn offset_guards_zero_residual() {
        let y = MixtureTable::log_chi2().log_squared_residuals(&[0.0, 1.0]);
        assert_eq!(y[0], LOG_SQUARE_OFFSET.ln());
        assert!((y[1] - (1.0 + LOG_SQUARE_OFFSET).ln()).abs() < 1e-15);
    }

    #[test]
    fn precision_matches_dense() {
        let table = MixtureTable::log_chi2();
        let ystar = [0.3, -1.0, 2.0, 0.1];
        let comps = [0, 3, 6, 4];
        let (s2, h0) = (0.2, 0.7);
        let (k, rhs) = volatility_precision(&ystar, &comps, h0, s2, &table).unwrap();
        let h = crate::band::DifferenceOperator::new(1, 4).unwrap().to_dense();
        let c = table.components();
        let dense = h.transpose() * &h / s2
            + DMatrix::from_diagonal(&DVector::from_fn(4, |i, _| 1.0 / c[comps[i]].variance));
        assert!((k.to_dense() - dense).abs().max() < 1e-10);
        let expect0 = h0 / s2 + (ystar[0] - c[0].mean) / c[0].variance;
        assert!((rhs[0] - expect0).abs() < 1e-12);
    }

    #[test]
    fn path_draw_matches_dense_conditional() {
        // fixed components: compare h moments to the dense Gaussian conditional
        let table = MixtureTable::log_chi2();
        let ystar = [0.5, -0.4, 1.2];
        let comps = [4, 5, 6];
        let (s2, h0) = (0.3, 0.1);
        let (k, rhs) = volatility_precision(&ystar, &comps, h0, s2, &table).unwrap();
        let dense_k = k.to_dense();
        let cov = dense_k.clone().try_inverse().unwrap();
        let mean = &cov * DVector::from_column_slice(&rhs);
        let chol = k.cholesky().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut m = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let (d, _) = chol.sample_canonical(&rhs, &mut rng).unwrap();
            for i in 0..3 {
                m[i] += d[i];
                sq[i] += d[i] * d[i];
            }
        }
        for i in 0..3 {
            let mi = m[i] / n as f64;
            let vi = sq[i] / n as f64 - mi * mi;
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((mi - mean[i]).abs() < 4.0 * se, "mean {i}");
            assert!((vi / cov[(i, i)] - 1.0).abs() < 0.03, "var {i}");
        }
    }

    #[test]
    fn recovers_constant_volatility() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = 2000;
        let sd = (1.5f64).exp().sqrt();
        let resid: Vec<f64> = (0..t).map(|_| sample_normal(0.0, sd * sd, &mut rng)).collect();
        let table = MixtureTable::log_chi2();
        let hp = HyperParams::default();
        let mut state = VolatilityState::flat(t, 0.0, 1e-6);
        let mut acc = vec![0.0; t];
        let (burn, keep) = (200, 800);
        for it in 0..burn + keep {
            let (h0, h) =
                sample_volatility_path_with_h0(&resid, &state, &hp, &table, &mut rng).unwrap();
            state.h0 = h0;
            state.h = h;
            if it >= burn {
                for (a, h) in acc.iter_mut().zip(&state.h) {
                    *a += h / keep as f64;
                }
            }
        }
        let worst = acc.iter().map(|h| (h - 1.5).abs()).fold(0.0, f64::max);
        assert!(worst < 0.15, "{worst}");
    }

    #[test]
    fn joint_draw_shapes() {
        // prior on (h0, h) plus the mixture observation terms, built densely
        let hp = HyperParams::default();
        let table = MixtureTable::log_chi2();
        let state = VolatilityState {
            h: vec![0.2, -0.1, 0.4],
            h0: 0.0,
            sigma2_h: 0.3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h0, h) =
            sample_volatility_path_with_h0(&[0.1, 2.0, -1.0], &state, &hp, &table, &mut rng)
                .unwrap();
        assert!(h0.is_finite() && h.len() == 3);
    }

    #[test]
    fn sigma2_h_conditional_arithmetic() {
        let hp = HyperParams::default();
        let (shape, scale) = sigma2_h_conditional(&[2.3], 0.3, &hp);
        assert_eq!(shape, hp.nu_h + 0.5);
        assert!((scale - (hp.s_h + 2.0)).abs() < 1e-12);
        let (shape, scale) = sigma2_h_conditional(&[1.0; 10], 1.0, &hp);
        assert_eq!((shape, scale), (hp.nu_h + 5.0, hp.s_h));
    }

    #[test]
    fn sigma2_h_flat_path_mean() {
        let hp = HyperParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let m = (0..n)
            .map(|_| sample_sigma2_h(&[1.0; 10], 1.0, &hp, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((m / (hp.s_h / (hp.nu_h + 4.0)) - 1.0).abs() < 0.02);
    }

    #[test]
    fn h0_conditional_values() {
        let hp = HyperParams::default();
        let (m, v) = h0_conditional(5.0, &hp, 10.0);
        assert!((m - 2.5).abs() < 1e-12 && (v - 5.0).abs() < 1e-12);
        let flat = HyperParams {
            v_h0: 1e12,
            ..HyperParams::default()
        };
        let (m, _) = h0_conditional(5.0, &flat, 0.1);
        assert!((m - 5.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_h0(5.0, &hp, 10.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean / 2.5 - 1.0).abs() < 0.02);
        assert!((var / 5.0 - 1.0).abs() < 0.02);
    }
}
