//! Prior hyperparameters, the Minnesota covariance and the samplers and
//! log-densities of the prior families.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Trials allowed per GIG draw before giving up.
pub const GIG_MAX_TRIALS: usize = 1_000_000;

/// Fixed prior constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub kappa3: f64,
    pub kappa4: f64,
    /// Gamma shape of κ₁.
    pub c11: f64,
    /// Gamma rate of κ₁.
    pub c21: f64,
    /// Gamma shape of κ₂.
    pub c12: f64,
    /// Gamma rate of κ₂.
    pub c22: f64,
    /// Inverse-gamma shape and scale of the log-volatility innovation variance.
    pub nu_h: f64,
    pub s_h: f64,
    /// Prior variance of the signed scale roots of lag and impact coefficients.
    pub s_theta_var: f64,
    /// Prior variance of the signed scale root of the intercept.
    pub s_theta_int: f64,
    pub a_pbeta: f64,
    pub b_pbeta: f64,
    pub a_palpha: f64,
    pub b_palpha: f64,
    pub a_h0: f64,
    pub v_h0: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            kappa3: 1.0,
            kappa4: 100.0,
            c11: 1.0,
            c21: 1.0 / 0.04,
            c12: 1.0,
            c22: 1.0 / (0.04 * 0.04),
            nu_h: 5.0,
            s_h: 0.4,
            s_theta_var: 0.01 * 0.01,
            s_theta_int: 0.1 * 0.1,
            a_pbeta: 0.5,
            b_pbeta: 0.5,
            a_palpha: 0.5,
            b_palpha: 0.5,
            a_h0: 0.0,
            v_h0: 10.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa3", self.kappa3),
            ("kappa4", self.kappa4),
            ("c11", self.c11),
            ("c21", self.c21),
            ("c12", self.c12),
            ("c22", self.c22),
            ("nu_h", self.nu_h),
            ("s_h", self.s_h),
            ("s_theta_var", self.s_theta_var),
            ("s_theta_int", self.s_theta_int),
            ("a_pbeta", self.a_pbeta),
            ("b_pbeta", self.b_pbeta),
            ("a_palpha", self.a_palpha),
            ("b_palpha", self.b_palpha),
            ("v_h0", self.v_h0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.a_h0.is_finite() {
            return Err(Error::Config("a_h0 must be finite".into()));
        }
        Ok(())
    }
}

/// Prior variances of the initial coefficients, one block per equation.
///
/// Block `i` (0-based) has length `n p + i + 1`: the intercept, then the lag
/// coefficients ordered lag-major (all variables at lag 1, then lag 2, ...),
/// then the `i` contemporaneous impact coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MinnesotaCov {
    pub blocks: Vec<Vec<f64>>,
    pub s2: Vec<f64>,
}

/// Position of the coefficient on lag `lag` (1-based) of variable `var` inside an equation block.
#[inline]
pub fn lag_index(n: usize, lag: usize, var: usize) -> usize {
    1 + (lag - 1) * n + var
}

pub fn minnesota_covariance(
    kappa1: f64,
    kappa2: f64,
    hp: &HyperParams,
    s2: &[f64],
    n: usize,
    p: usize,
) -> Result<MinnesotaCov> {
    if s2.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s2.len(),
        });
    }
    if !(kappa1 > 0.0 && kappa2 > 0.0) || s2.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameters(
            "Minnesota covariance needs positive shrinkage and residual variances".into(),
        ));
    }
    let blocks = (0..n)
        .map(|i| {
            let mut v = vec![0.0; n * p + i + 1];
            v[0] = hp.kappa4 * s2[i];
            for l in 1..=p {
                let l2 = (l * l) as f64;
                for j in 0..n {
                    v[lag_index(n, l, j)] = if j == i {
                        kappa1 / l2
                    } else {
                        kappa2 * s2[i] / (l2 * s2[j])
                    };
                }
            }
            for j in 0..i {
                v[1 + n * p + j] = hp.kappa3 * s2[i] / s2[j];
            }
            v
        })
        .collect();
    Ok(MinnesotaCov {
        blocks,
        s2: s2.to_vec(),
    })
}

/// OLS residual variances from regressing each variable on an intercept and
/// `ar_lags` lags of every variable, using observations `ar_lags+1..=T`.
pub fn residual_variances(data: &DMatrix<f64>, ar_lags: usize) -> Result<Vec<f64>> {
    let (t, n) = data.shape();
    let k = 1 + n * ar_lags;
    if t <= ar_lags || t - ar_lags <= k {
        return Err(Error::InsufficientData(format!(
            "{t} observations cannot support a regression with {k} regressors after {ar_lags} lags"
        )));
    }
    let t_eff = t - ar_lags;
    let x = DMatrix::from_fn(t_eff, k, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / n + 1;
            let var = (c - 1) % n;
            data[(r + ar_lags - lag, var)]
        }
    });
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max) {
        return Err(Error::SingularDesign(
            "lagged regressors are collinear".into(),
        ));
    }
    let q = qr.q();
    let mut out = Vec::with_capacity(n);
    for var in 0..n {
        let y = DVector::from_fn(t_eff, |r, _| data[(r + ar_lags, var)]);
        let coef = r
            .solve_upper_triangular(&(q.transpose() * &y))
            .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
        let resid = &y - &x * coef;
        let s2 = resid.norm_squared() / (t_eff - k) as f64;
        if !(s2 > 0.0) {
            return Err(Error::SingularDesign(format!(
                "variable {var} is fitted exactly by its lags"
            )));
        }
        out.push(s2);
    }
    Ok(out)
}

/// Draw from the generalized inverse Gaussian law with density proportional
/// to `x^(lambda-1) exp(-(a x + b / x) / 2)`.
pub fn sample_gig<R: Rng + ?Sized>(lambda: f64, a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(lambda.is_finite() && a.is_finite() && b.is_finite()) || !(a > 0.0) || b < 0.0 {
        return Err(Error::InvalidParameters(format!(
            "GIG(lambda={lambda}, a={a}, b={b})"
        )));
    }
    if b == 0.0 {
        if lambda > 0.0 {
            return gamma_draw(lambda, 2.0 / a, rng);
        }
        return Err(Error::InvalidParameters(format!(
            "GIG with b=0 needs lambda>0, got lambda={lambda}"
        )));
    }
    let omega = (a * b).sqrt();
    let scale = (b / a).sqrt();
    if omega < 1e-10 && lambda != 0.0 {
        // limiting gamma / inverse-gamma laws
        return if lambda > 0.0 {
            gamma_draw(lambda, 2.0 / a, rng)
        } else {
            Ok(b / (2.0 * gamma_draw(-lambda, 1.0, rng)?))
        };
    }
    let abs_lambda = lambda.abs();
    let x = if abs_lambda > 2.0 || omega > 3.0 {
        gig_rou_shift(abs_lambda, omega, rng)?
    } else if abs_lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        gig_rou_noshift(abs_lambda, omega, rng)?
    } else {
        gig_concave(abs_lambda, omega, rng)?
    };
    // GIG(-λ) is the reciprocal of GIG(λ) in the standardized form
    let x = if lambda < 0.0 { 1.0 / x } else { x };
    Ok(scale * x)
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, scale)
        .map_err(|e| Error::InvalidParameters(format!("gamma({shape}, {scale}): {e}")))?;
    Ok(g.sample(rng))
}

/// Mode of the standardized density `x^(λ-1) exp(-ω (x + 1/x) / 2)`.
fn gig_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        (((lambda - 1.0).powi(2) + omega * omega).sqrt() + (lambda - 1.0)) / omega
    } else {
        omega / (((1.0 - lambda).powi(2) + omega * omega).sqrt() + (1.0 - lambda))
    }
}

/// Ratio of uniforms around the mode of the standardized density.
fn gig_rou_shift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> Result<f64> {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);

    // extremes of (x - xm) sqrt(f(x)) are roots of a cubic
    let ca = -(2.0 * (lambda + 1.0) / omega + xm);
    let cb = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let cc = xm;
    let p = cb - ca * ca / 3.0;
    let q = 2.0 * ca.powi(3) / 27.0 - ca * cb / 3.0 + cc;
    let phi = (-q / (2.0 * (-p.powi(3) / 27.0).sqrt())).clamp(-1.0, 1.0).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (phi / 3.0).cos() - ca / 3.0;
    let y2 = fak * (phi / 3.0 + 4.0 / 3.0 * std::f64::consts::PI).cos() - ca / 3.0;
    let u_plus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let u_minus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();

    for _ in 0..GIG_MAX_TRIALS {
        let u = u_minus + rng.random::<f64>() * (u_plus - u_minus);
        let v: f64 = rng.random();
        let x = u / v + xm;
        if x <= 0.0 || !x.is_finite() {
            continue;
        }
        if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return Ok(x);
        }
    }
    Err(Error::RejectionLimit(GIG_MAX_TRIALS))
}

/// Ratio of uniforms without shifting, efficient for moderate `λ` and `ω`.
fn gig_rou_noshift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> Result<f64> {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lambda + 1.0) + ((lambda + 1.0).powi(2) + omega * omega).sqrt()) / omega;
    let um = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();

    for _ in 0..GIG_MAX_TRIALS {
        let u = um * rng.random::<f64>();
        let v: f64 = rng.random();
        let x = u / v;
        if x <= 0.0 || !x.is_finite() {
            continue;
        }
        if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return Ok(x);
        }
    }
    Err(Error::RejectionLimit(GIG_MAX_TRIALS))
}

/// Rejection from a three-piece hat, for `0 <= λ < 1` and small `ω`
/// where the density is log-concave-free and heavy near zero.
fn gig_concave<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> Result<f64> {
    let xm = gig_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let a0 = k0 * x0;
    let (k1, a1, k2, a2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        a1 = 0.0;
        k2 = x0.powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        a1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        k2 = (2.0 / omega).powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-1.0f64).exp() / omega;
    }
    let total = a0 + a1 + a2;
    let tail_start = x0.max(2.0 / omega);

    for _ in 0..GIG_MAX_TRIALS {
        let mut v = total * rng.random::<f64>();
        let (x, hx);
        if v <= a0 {
            x = x0 * v / a0;
            hx = k0;
        } else {
            v -= a0;
            if v <= a1 {
                if lambda == 0.0 {
                    x = omega * (omega.exp() * v).exp();
                    hx = k1 / x;
                } else {
                    x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                    hx = k1 * x.powf(lambda - 1.0);
                }
            } else {
                v -= a1;
                x = -2.0 / omega
                    * ((-omega / 2.0 * tail_start).exp() - omega / (2.0 * k2) * v).ln();
                hx = k2 * (-omega / 2.0 * x).exp();
            }
        }
        if !(x > 0.0 && x.is_finite()) {
            continue;
        }
        let u = rng.random::<f64>() * hx;
        if u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            return Ok(x);
        }
    }
    Err(Error::RejectionLimit(GIG_MAX_TRIALS))
}

/// Parameters `(λ, a, b)` of the κ₁ and κ₂ full conditionals given the initial coefficients.
///
/// `theta0` concatenates the equation blocks laid out as in [`MinnesotaCov`].
pub fn kappa_conditionals(
    theta0: &[f64],
    hp: &HyperParams,
    s2: &[f64],
    n: usize,
    p: usize,
) -> Result<[(f64, f64, f64); 2]> {
    let expected: usize = (0..n).map(|i| n * p + i + 1).sum();
    if theta0.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: theta0.len(),
        });
    }
    if s2.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s2.len(),
        });
    }
    let mut own = 0.0;
    let mut cross = 0.0;
    let mut offset = 0;
    for i in 0..n {
        for l in 1..=p {
            let l2 = (l * l) as f64;
            for j in 0..n {
                let th = theta0[offset + lag_index(n, l, j)];
                if j == i {
                    own += th * th * l2;
                } else {
                    cross += th * th * l2 * s2[j] / s2[i];
                }
            }
        }
        offset += n * p + i + 1;
    }
    let np = (n * p) as f64;
    Ok([
        (hp.c11 - np / 2.0, 2.0 * hp.c21, own),
        (hp.c12 - (n as f64 - 1.0) * np / 2.0, 2.0 * hp.c22, cross),
    ])
}

pub fn sample_kappa<R: Rng + ?Sized>(
    theta0: &[f64],
    hp: &HyperParams,
    s2: &[f64],
    n: usize,
    p: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let [k1, k2] = kappa_conditionals(theta0, hp, s2, n, p)?;
    let kappa1 = sample_gig(k1.0, k1.1, k1.2, rng)?;
    let kappa2 = sample_gig(k2.0, k2.1, k2.2, rng)?;
    Ok((kappa1, kappa2))
}

/// Inverse-gamma draw with density proportional to `x^(-shape-1) exp(-scale / x)`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    Ok(scale / gamma_draw(shape, 1.0, rng)?)
}

pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let d = Beta::new(a, b)
        .map_err(|e| Error::InvalidParameters(format!("beta({a}, {b}): {e}")))?;
    Ok(d.sample(rng))
}

pub fn sample_normal<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
}

pub fn logpdf_normal(x: f64, mean: f64, var: f64) -> f64 {
    if !(var > 0.0) {
        return f64::NEG_INFINITY;
    }
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// Gamma density with the given shape and rate.
pub fn logpdf_gamma(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) || !(shape > 0.0 && rate > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn logpdf_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    if !(x > 0.0) || !(shape > 0.0 && scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn logpdf_beta(x: f64, a: f64, b: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) || !(a > 0.0 && b > 0.0) {
        return f64::NEG_INFINITY;
    }
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

/// Unnormalized GIG log-density.
pub fn log_kernel_gig(x: f64, lambda: f64, a: f64, b: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    (lambda - 1.0) * x.ln() - 0.5 * (a * x + b / x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// CDF of a positive density by trapezoid integration on a log grid.
    fn log_grid_cdf(log_kernel: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        let m = 40_001;
        let us: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
        let lw: Vec<f64> = us.iter().map(|u| log_kernel(u.exp()) + u).collect();
        let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|v| (v - top).exp()).collect();
        let mut cdf = vec![0.0; m];
        for i in 1..m {
            cdf[i] = cdf[i - 1] + 0.5 * (w[i] + w[i - 1]) * (us[i] - us[i - 1]);
        }
        let z = cdf[m - 1];
        cdf.iter_mut().for_each(|c| *c /= z);
        (us, cdf)
    }

    fn ks_distance(mut draws: Vec<f64>, grid: &(Vec<f64>, Vec<f64>)) -> f64 {
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (us, cdf) = grid;
        let n = draws.len() as f64;
        let mut worst: f64 = 0.0;
        let mut g = 0;
        for (k, x) in draws.iter().enumerate() {
            let u = x.ln();
            while g + 1 < us.len() && us[g + 1] < u {
                g += 1;
            }
            let f = if u <= us[0] {
                0.0
            } else if g + 1 >= us.len() {
                1.0
            } else {
                let w = (u - us[g]) / (us[g + 1] - us[g]);
                cdf[g] + w * (cdf[g + 1] - cdf[g])
            };
            worst = worst.max((f - k as f64 / n).abs()).max((f - (k + 1) as f64 / n).abs());
        }
        worst
    }

    fn quadrature_mean(log_kernel: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let m = 40_001;
        let h = (hi - lo) / (m - 1) as f64;
        let (mut z, mut m1) = (0.0, 0.0);
        for i in 0..m {
            let u = lo + h * i as f64;
            let w = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
            let d = (log_kernel(u.exp()) + u).exp();
            z += w * d;
            m1 += w * d * u.exp();
        }
        m1 / z
    }

    #[test]
    fn defaults_valid() {
        let hp = HyperParams::default();
        hp.validate().unwrap();
        assert!((hp.s_h / (hp.nu_h - 1.0) - 0.1).abs() < 1e-12);
        let mut bad = hp.clone();
        bad.v_h0 = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn minnesota_entries() {
        let hp = HyperParams::default();
        let m = minnesota_covariance(0.04, 0.0016, &hp, &[2.0, 8.0], 2, 2).unwrap();
        assert_eq!(m.blocks[0].len(), 5);
        assert_eq!(m.blocks[1].len(), 6);
        assert!((m.blocks[0][lag_index(2, 2, 0)] - 0.01).abs() < 1e-15);
        let eq = minnesota_covariance(0.04, 0.0016, &hp, &[3.0, 3.0], 2, 1).unwrap();
        assert!((eq.blocks[0][lag_index(2, 1, 1)] - 0.0016).abs() < 1e-15);
        // impact of variable 0 in equation 1: κ₃ s²₁/s²₀ with s²₁ = 2, s²₀ = 8
        let m = minnesota_covariance(0.04, 0.0016, &hp, &[8.0, 2.0], 2, 1).unwrap();
        assert!((m.blocks[1][3] - 0.25).abs() < 1e-15);
        assert!((m.blocks[1][0] - 200.0).abs() < 1e-12);
    }

    #[test]
    fn minnesota_homogeneous_in_kappa1() {
        let hp = HyperParams::default();
        let s2 = [1.5, 0.7, 3.0];
        let a = minnesota_covariance(0.04, 0.002, &hp, &s2, 3, 2).unwrap();
        let b = minnesota_covariance(0.12, 0.002, &hp, &s2, 3, 2).unwrap();
        for i in 0..3 {
            for (idx, (x, y)) in a.blocks[i].iter().zip(&b.blocks[i]).enumerate() {
                let own = (1..=2).any(|l| lag_index(3, l, i) == idx);
                if own {
                    assert!((y - 3.0 * x).abs() < 1e-15);
                } else {
                    assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn residual_variance_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = DMatrix::from_fn(10_000, 2, |_, _| sample_normal(0.0, 4.0, &mut rng));
        for s2 in residual_variances(&data, 4).unwrap() {
            assert!((s2 / 4.0 - 1.0).abs() < 0.05, "{s2}");
        }
    }

    #[test]
    fn residual_variance_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut y = DMatrix::zeros(20_000, 1);
        for t in 1..20_000 {
            y[(t, 0)] = 0.6 * y[(t - 1, 0)] + sample_normal(0.0, 1.0, &mut rng);
        }
        let s2 = residual_variances(&y, 4).unwrap()[0];
        assert!((s2 - 1.0).abs() < 0.05, "{s2}");
    }

    #[test]
    fn residual_variance_errors() {
        let data = DMatrix::from_fn(50, 2, |t, j| if j == 0 { 1.0 } else { (t as f64).sin() });
        assert!(matches!(
            residual_variances(&data, 4),
            Err(Error::SingularDesign(_))
        ));
        let short = DMatrix::from_element(8, 2, 1.0);
        assert!(matches!(
            residual_variances(&short, 4),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn gig_gamma_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_gig(3.0, 4.0, 0.0, &mut rng).unwrap()).sum::<f64>()
            / n as f64;
        assert!((mean / 1.5 - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn gig_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_gig(-1.0, 1.0, 0.0, &mut rng).is_err());
        assert!(sample_gig(1.0, 0.0, 1.0, &mut rng).is_err());
        assert!(sample_gig(1.0, 1.0, -1.0, &mut rng).is_err());
        assert!(sample_gig(f64::NAN, 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn gig_mean_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_gig(-0.5, 1.0, 1.0, &mut rng).unwrap()).sum::<f64>()
            / n as f64;
        let oracle = quadrature_mean(|x| log_kernel_gig(x, -0.5, 1.0, 1.0), -25.0, 6.0);
        // for λ = -1/2 the Bessel ratio gives mean exactly 1 when a = b = 1
        assert!((oracle - 1.0).abs() < 1e-6, "{oracle}");
        assert!((mean / oracle - 1.0).abs() < 0.02, "{mean} vs {oracle}");
    }

    #[test]
    fn gig_ks_across_regimes() {
        // covers the three internal algorithms and the reciprocal branch
        let cases = [
            (2.5, 3.0, 0.7),
            (0.3, 0.05, 0.05),
            (0.0, 0.01, 0.5),
            (0.8, 1.0, 1.0),
            (-3.0, 2.0, 5.0),
            (12.0, 0.5, 40.0),
            (-0.4, 0.02, 0.02),
        ];
        for (k, &(lambda, a, b)) in cases.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
            let draws: Vec<f64> =
                (0..100_000).map(|_| sample_gig(lambda, a, b, &mut rng).unwrap()).collect();
            let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min).ln() - 8.0;
            let hi = draws.iter().cloned().fold(0.0, f64::max).ln() + 8.0;
            let grid = log_grid_cdf(|x| log_kernel_gig(x, lambda, a, b), lo, hi);
            let d = ks_distance(draws, &grid);
            assert!(d < 0.01, "GIG({lambda}, {a}, {b}) KS {d}");
        }
    }

    #[test]
    fn kappa_sum_of_squares() {
        let hp = HyperParams::default();
        // n=2, p=1: block 0 = [c, own, cross], block 1 = [c, cross, own, impact]
        let theta0 = [0.0, 0.5, 0.0, 0.0, 0.0, 0.5, 0.0];
        let [k1, k2] = kappa_conditionals(&theta0, &hp, &[1.0, 1.0], 2, 1).unwrap();
        assert!((k1.2 - 0.5).abs() < 1e-15);
        assert_eq!(k2.2, 0.0);
        assert!((k1.0 - (hp.c11 - 1.0)).abs() < 1e-15);
        assert!((k1.1 - 2.0 * hp.c21).abs() < 1e-15);
    }

    #[test]
    fn kappa_zero_theta_with_negative_shape_is_rejected() {
        let hp = HyperParams::default();
        let theta0 = vec![0.0; 7];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // λ for κ₁ is c11 - np/2 = 0 with n=2, p=1
        assert!(matches!(
            sample_kappa(&theta0, &hp, &[1.0, 1.0], 2, 1, &mut rng),
            Err(Error::InvalidParameters(_))
        ));
        let mut hp2 = hp.clone();
        hp2.c11 = 3.0;
        hp2.c12 = 3.0;
        let (k1, k2) = sample_kappa(&theta0, &hp2, &[1.0, 1.0], 2, 1, &mut rng).unwrap();
        assert!(k1 > 0.0 && k2 > 0.0);
    }

    #[test]
    fn kappa_conditional_ks() {
        let hp = HyperParams::default();
        let n = 3;
        let p = 2;
        let len: usize = (0..n).map(|i| n * p + i + 1).sum();
        let theta0: Vec<f64> = (0..len).map(|i| 0.05 * ((i as f64) * 0.7).sin()).collect();
        let s2 = [1.0, 2.0, 0.5];
        let [k1, _] = kappa_conditionals(&theta0, &hp, &s2, n, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_kappa(&theta0, &hp, &s2, n, p, &mut rng).unwrap().0)
            .collect();
        let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min).ln() - 8.0;
        let hi = draws.iter().cloned().fold(0.0, f64::max).ln() + 8.0;
        let grid = log_grid_cdf(|x| log_kernel_gig(x, k1.0, k1.1, k1.2), lo, hi);
        assert!(ks_distance(draws, &grid) < 0.01);
    }

    #[test]
    fn logpdf_values() {
        assert!((logpdf_normal(0.0, 0.0, 1.0) + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        // arcsine density 1/(π√(x(1-x))) at one half
        assert!((logpdf_beta(0.5, 0.5, 0.5) - (2.0 / std::f64::consts::PI).ln()).abs() < 1e-12);
        assert_eq!(logpdf_gamma(-1.0, 2.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(logpdf_inv_gamma(0.0, 2.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(logpdf_beta(1.0, 2.0, 2.0), f64::NEG_INFINITY);
        // exponential(1) density at 1
        assert!((logpdf_gamma(1.0, 1.0, 1.0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn inv_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (shape, scale) = (5.0, 0.4);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_inv_gamma(shape, scale, &mut rng).unwrap()).sum::<f64>()
            / n as f64;
        assert!((mean / (scale / (shape - 1.0)) - 1.0).abs() < 0.02);
    }
}
