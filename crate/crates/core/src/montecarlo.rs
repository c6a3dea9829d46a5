//! Synthetic hybrid TVP-VAR data and the indicator recovery study.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::draws::{run_mcmc, McmcConfig};
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::priors::{lag_index, residual_variances, HyperParams};
use crate::rng::{child_seed, substream, Domain};
use crate::sampler::{
    build_layouts, simulate_observations, EquationState, IndicatorPair, ModelState, PriorSetup,
    SamplerSettings,
};
use crate::sv::VolatilityState;

pub const MAX_EXPLOSIVE_RETRIES: usize = 50;
pub const EXPLOSIVE_BOUND: f64 = 1e8;
/// Periods simulated with constant coefficients before the presample is taken.
pub const DGP_BURN_IN: usize = 50;

const INTERCEPT_STATE_SD: f64 = 0.1;
const COEFFICIENT_STATE_SD: f64 = 0.01;
const SIGMA2_H: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub periods: usize,
    pub p: usize,
    /// `(β time-varying, α time-varying)` per equation; equation 1's α flag is ignored.
    pub pattern: Vec<(bool, bool)>,
    pub seed: u64,
    /// Log-volatility innovation variance; zero holds every h at h0.
    #[serde(default = "default_sigma2_h")]
    pub sigma2_h: f64,
}

fn default_sigma2_h() -> f64 {
    SIGMA2_H
}

impl DgpSpec {
    pub fn new(n: usize, periods: usize, p: usize, seed: u64) -> Self {
        Self {
            n,
            periods,
            p,
            pattern: default_pattern(n),
            seed,
            sigma2_h: SIGMA2_H,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.periods == 0 {
            return Err(Error::Config("n, p and T must be positive".into()));
        }
        if self.pattern.len() != self.n {
            return Err(Error::Config(format!(
                "pattern has {} entries for {} equations",
                self.pattern.len(),
                self.n
            )));
        }
        if !(self.sigma2_h >= 0.0 && self.sigma2_h.is_finite()) {
            return Err(Error::Config(format!("invalid volatility variance {}", self.sigma2_h)));
        }
        Ok(())
    }

    pub fn indicators(&self) -> Vec<IndicatorPair> {
        self.pattern
            .iter()
            .enumerate()
            .map(|(i, &(b, a))| IndicatorPair::new(b, (i > 0).then_some(a)))
            .collect()
    }
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self::new(12, 400, 2, 0)
    }
}

/// `(0,0), (0,1), (1,0), (1,1)` repeated to length `n`.
pub fn default_pattern(n: usize) -> Vec<(bool, bool)> {
    const CYCLE: [(bool, bool); 4] = [(false, false), (false, true), (true, false), (true, true)];
    (0..n).map(|i| CYCLE[i % 4]).collect()
}

/// Parse a pattern such as `00,01,10,11`.
pub fn parse_pattern(text: &str) -> Result<Vec<(bool, bool)>> {
    let bit = |c: char| match c {
        '0' => Ok(false),
        '1' => Ok(true),
        _ => Err(Error::Config(format!("bad pattern entry in `{text}`"))),
    };
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            let cs: Vec<char> = s.chars().collect();
            if cs.len() != 2 {
                return Err(Error::Config(format!("pattern entry `{s}` needs two digits")));
            }
            Ok((bit(cs[0])?, bit(cs[1])?))
        })
        .collect()
}

/// Initial coefficients of every equation: intercept, lag blocks, then impacts.
pub fn draw_initial_coefficients<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut c = vec![0.0; n * p + 1 + i];
            c[0] = rng.random_range(-10.0..10.0);
            for j in 0..n {
                c[lag_index(n, 1, j)] = if j == i {
                    rng.random_range(0.0..0.5)
                } else {
                    rng.random_range(-0.2..0.2)
                };
            }
            for l in 2..=p {
                let sd = 0.1 / l as f64;
                for j in 0..n {
                    c[lag_index(n, l, j)] = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            for v in &mut c[n * p + 1..] {
                *v = rng.random_range(-0.5..0.5);
            }
            c
        })
        .collect()
}

fn draw_truth<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> ModelState {
    let (n, p, t) = (spec.n, spec.p, spec.periods);
    let k_beta = n * p + 1;
    let coefs = draw_initial_coefficients(n, p, rng);
    let equations = coefs
        .into_iter()
        .zip(spec.indicators())
        .map(|(theta0, indicators)| {
            let k = theta0.len();
            let scale_roots: Vec<f64> = (0..k)
                .map(|j| if j == 0 { INTERCEPT_STATE_SD } else { COEFFICIENT_STATE_SD })
                .collect();
            let active = indicators.active_columns(k_beta, k);
            let mut theta_tilde = vec![0.0; t * k];
            for j in active {
                let mut level = 0.0;
                for s in 0..t {
                    level += rng.sample::<f64, _>(StandardNormal);
                    theta_tilde[s * k + j] = level;
                }
            }
            let h0 = rng.random_range(-2.0..2.0);
            let mut h = Vec::with_capacity(t);
            let mut level = h0;
            for _ in 0..t {
                level += spec.sigma2_h.sqrt() * rng.sample::<f64, _>(StandardNormal);
                h.push(level);
            }
            EquationState {
                indicators,
                theta_tilde,
                theta0,
                scale_roots,
                vol: VolatilityState {
                    h,
                    h0,
                    sigma2_h: spec.sigma2_h,
                },
                p_beta: 0.5,
                p_alpha: indicators.alpha.map(|_| 0.5),
            }
        })
        .collect();
    ModelState {
        equations,
        kappa1: 0.0,
        kappa2: 0.0,
    }
}

/// Simulate `p + T` observations with the first `p` rows as presample.
///
/// The presample is the tail of a burn-in run that uses the initial
/// coefficients and initial log-volatilities.
pub fn generate_dgp(spec: &DgpSpec) -> Result<(Dataset, ModelState)> {
    spec.validate()?;
    for attempt in 0..MAX_EXPLOSIVE_RETRIES {
        let mut rng = substream(spec.seed, Domain::Dgp, attempt as u64);
        let truth = draw_truth(spec, &mut rng);
        let mut warm = truth.clone();
        for e in &mut warm.equations {
            e.indicators = IndicatorPair::new(false, e.indicators.alpha.map(|_| false));
            e.vol.h = vec![e.vol.h0; DGP_BURN_IN];
        }
        let start = DMatrix::zeros(spec.p, spec.n);
        let burn = simulate_observations(&warm, &start, &mut rng)?;
        let presample = burn.rows(burn.nrows() - spec.p, spec.p).into_owned();
        let y = simulate_observations(&truth, &presample, &mut rng)?;
        if burn.iter().chain(y.iter()).all(|v| v.is_finite() && v.abs() <= EXPLOSIVE_BOUND) {
            if attempt > 0 {
                log::debug!("dgp seed {} needed {} redraws", spec.seed, attempt);
            }
            return Ok((Dataset::from_values(y), truth));
        }
    }
    Err(Error::ExplosiveSimulation(MAX_EXPLOSIVE_RETRIES))
}

/// Estimation settings used inside each replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub hp: HyperParams,
    pub ar_lags: usize,
    pub mcmc: McmcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub equation: usize,
    pub true_beta: bool,
    pub true_alpha: Option<bool>,
    /// Share of successful replications whose posterior mode of the indicator is one.
    pub freq_beta: f64,
    pub freq_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryTable {
    pub rows: Vec<RecoveryRow>,
    pub replications: usize,
    pub failed: usize,
}

/// Majority vote over retained draws; a tie counts as zero.
pub fn posterior_mode(share_of_ones: f64) -> bool {
    share_of_ones > 0.5
}

/// Posterior indicator modes for one simulated dataset.
pub fn estimate_modes(
    data: &Dataset,
    p: usize,
    cfg: &RecoveryConfig,
    seed: u64,
) -> Result<Vec<IndicatorPair>> {
    let s2 = residual_variances(&data.values, cfg.ar_lags)?;
    let priors = PriorSetup::new(cfg.hp.clone(), s2, p)?;
    let layouts = build_layouts(&data.values, p)?;
    let mcmc = McmcConfig {
        seed,
        store_theta_tilde: false,
        ..cfg.mcmc.clone()
    };
    let draws = run_mcmc(
        &layouts,
        &priors,
        &SamplerSettings::default(),
        &mcmc,
        &Executor::sequential(),
        None,
    )?;
    Ok(draws
        .indicator_means()?
        .into_iter()
        .map(|(b, a)| IndicatorPair::new(posterior_mode(b), a.map(posterior_mode)))
        .collect())
}

/// Generate, estimate and tabulate `replications` datasets.
pub fn recovery_study(
    spec: &DgpSpec,
    replications: usize,
    cfg: &RecoveryConfig,
    exec: &Executor,
) -> Result<RecoveryTable> {
    spec.validate()?;
    if replications == 0 {
        return Err(Error::Config("at least one replication is required".into()));
    }
    let outcomes = exec.map(replications, |r| {
        let rep_spec = DgpSpec {
            seed: child_seed(spec.seed, Domain::Replication, r as u64),
            ..spec.clone()
        };
        let (data, _) = generate_dgp(&rep_spec)?;
        estimate_modes(&data, spec.p, cfg, child_seed(rep_spec.seed, Domain::Sweep, 0))
    });
    let mut ones = vec![(0usize, 0usize); spec.n];
    let mut ok = 0;
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(modes) => {
                ok += 1;
                for (c, m) in ones.iter_mut().zip(&modes) {
                    c.0 += usize::from(m.beta);
                    c.1 += usize::from(m.alpha == Some(true));
                }
            }
            Err(e) => log::warn!("replication {r} failed: {e}"),
        }
    }
    let failed = replications - ok;
    let share = |k: usize| if ok == 0 { f64::NAN } else { k as f64 / ok as f64 };
    let rows = spec
        .indicators()
        .into_iter()
        .zip(ones)
        .enumerate()
        .map(|(i, (truth, (b, a)))| RecoveryRow {
            equation: i + 1,
            true_beta: truth.beta,
            true_alpha: truth.alpha,
            freq_beta: share(b),
            freq_alpha: truth.alpha.map(|_| share(a)),
        })
        .collect();
    Ok(RecoveryTable {
        rows,
        replications,
        failed,
    })
}

impl RecoveryTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "equation",
            "true_gamma_beta",
            "true_gamma_alpha",
            "freq_gamma_beta",
            "freq_gamma_alpha",
        ])?;
        let opt_bit = |v: Option<bool>| v.map_or("-".to_string(), |b| u8::from(b).to_string());
        for row in &self.rows {
            w.write_record([
                row.equation.to_string(),
                u8::from(row.true_beta).to_string(),
                opt_bit(row.true_alpha),
                format!("{:.4}", row.freq_beta),
                row.freq_alpha.map_or("-".to_string(), |f| format!("{f:.4}")),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::residuals;
    use crate::sampler::EquationLayout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal, Uniform};

    fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let m = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = DgpSpec::new(4, 60, 2, 9);
        let (a, ta) = generate_dgp(&spec).unwrap();
        let (b, tb) = generate_dgp(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a.values.shape(), (62, 4));
        let (c, _) = generate_dgp(&DgpSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn pattern_parsing_and_default() {
        assert_eq!(
            parse_pattern("00,01 10,11").unwrap(),
            default_pattern(4)
        );
        assert!(parse_pattern("0,1").is_err());
        assert!(parse_pattern("02").is_err());
        let p = default_pattern(12);
        assert_eq!(p[7], (true, true));
        assert_eq!(p[8], (false, false));
        let spec = DgpSpec::default();
        assert_eq!(spec.indicators()[0].alpha, None);
        assert_eq!(spec.indicators()[1].alpha, Some(true));
    }

    #[test]
    fn coefficient_draws_match_their_laws() {
        let (n, p) = (3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws: Vec<Vec<Vec<f64>>> =
            (0..10_000).map(|_| draw_initial_coefficients(n, p, &mut rng)).collect();
        let pick = |i: usize, j: usize| draws.iter().map(|d| d[i][j]).collect::<Vec<_>>();
        let u = |a: f64, b: f64| Uniform::new(a, b).unwrap();
        let checks: Vec<(Vec<f64>, Box<dyn Fn(f64) -> f64>)> = vec![
            (pick(1, 0), Box::new(move |x| u(-10.0, 10.0).cdf(x))),
            (pick(1, lag_index(n, 1, 1)), Box::new(move |x| u(0.0, 0.5).cdf(x))),
            (pick(1, lag_index(n, 1, 2)), Box::new(move |x| u(-0.2, 0.2).cdf(x))),
            (
                pick(0, lag_index(n, 3, 0)),
                Box::new(|x| Normal::new(0.0, 0.1 / 3.0).unwrap().cdf(x)),
            ),
            (pick(2, n * p + 2), Box::new(move |x| u(-0.5, 0.5).cdf(x))),
        ];
        for (xs, cdf) in checks {
            assert!(ks_distance(xs, cdf) < 0.02);
        }
        let diag_mean = pick(2, lag_index(n, 1, 2)).iter().sum::<f64>() / 10_000.0;
        assert!((diag_mean - 0.25).abs() < 0.005);
    }

    #[test]
    fn zero_volatility_variance_holds_h_at_h0() {
        let spec = DgpSpec {
            sigma2_h: 0.0,
            ..DgpSpec::new(3, 50, 1, 8)
        };
        let (_, truth) = generate_dgp(&spec).unwrap();
        for e in &truth.equations {
            assert!(e.vol.h.iter().all(|&h| h == e.vol.h0));
        }
        assert!(generate_dgp(&DgpSpec { sigma2_h: -1.0, ..spec }).is_err());
    }

    #[test]
    fn coefficient_increments_have_state_variance() {
        let spec = DgpSpec {
            pattern: vec![(true, true); 3],
            ..DgpSpec::new(3, 2000, 1, 5)
        };
        let (_, truth) = generate_dgp(&spec).unwrap();
        let e = &truth.equations[2];
        let k = e.theta0.len();
        let mut incr = Vec::new();
        for j in 1..k {
            for t in 1..spec.periods {
                let d = e.scale_roots[j] * (e.theta_tilde[t * k + j] - e.theta_tilde[(t - 1) * k + j]);
                incr.push(d);
            }
        }
        let var = incr.iter().map(|d| d * d).sum::<f64>() / incr.len() as f64;
        assert!((var / 1e-4 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn constant_blocks_stay_constant() {
        let (_, truth) = generate_dgp(&DgpSpec::new(4, 50, 1, 2)).unwrap();
        let e = &truth.equations[0];
        assert!(e.theta_tilde.iter().all(|v| *v == 0.0));
        let e = &truth.equations[1];
        let k = e.theta0.len();
        for t in 0..50 {
            assert!(e.theta_tilde[t * k..t * k + 5].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn true_states_reproduce_innovation_variance() {
        let spec = DgpSpec::new(4, 800, 2, 3);
        let (data, truth) = generate_dgp(&spec).unwrap();
        let layouts: Vec<EquationLayout> = build_layouts(&data.values, 2).unwrap();
        let mut total = 0.0;
        for (l, e) in layouts.iter().zip(&truth.equations) {
            let r = residuals(l, e);
            total += r.iter().zip(&e.vol.h).map(|(v, h)| v * v * (-h).exp()).sum::<f64>();
        }
        let scaled = total / (4 * spec.periods) as f64;
        assert!((scaled - 1.0).abs() < 0.1, "{scaled}");
    }

    #[test]
    fn ties_go_to_zero() {
        assert!(!posterior_mode(0.5));
        assert!(posterior_mode(0.5001));
    }

    #[test]
    fn small_study_runs() {
        let spec = DgpSpec::new(2, 80, 1, 1);
        let cfg = RecoveryConfig {
            hp: HyperParams::default(),
            ar_lags: 1,
            mcmc: McmcConfig {
                burn_in: 20,
                draws: 30,
                ..McmcConfig::default()
            },
        };
        let t = recovery_study(&spec, 2, &cfg, &Executor::sequential()).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.failed, 0);
        assert!(t.rows[0].freq_alpha.is_none());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        t.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("1,0,-,"));
    }
}
