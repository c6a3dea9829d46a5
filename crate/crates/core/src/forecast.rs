//! Recursive out-of-sample forecasting and forecast evaluation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::compare::GammaConfig;
use crate::data::Dataset;
use crate::draws::{run_mcmc, McmcConfig};
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::priors::{residual_variances, HyperParams};
use crate::rng::{child_seed, substream, Domain};
use crate::sampler::{build_layouts, coefficient, ModelState, PriorSetup, SamplerSettings};
use crate::sv::MixtureTable;

pub const EXPLOSIVE_FORECAST_BOUND: f64 = 1e8;
/// Log-volatility innovation variance of the homoscedastic benchmark.
pub const HOMOSCEDASTIC_SIGMA2_H: f64 = 1e-10;

/// Gaussian predictive component of one variable at one step ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub mean: f64,
    pub var: f64,
}

/// One simulated future path with the reduced-form conditional at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictivePath {
    /// `m × n`, row `s` holds the simulated `y_{T+s+1}`.
    pub path: DMatrix<f64>,
    /// `components[s][i]` is the law of `y_{i,T+s+1}` given the path up to `T+s`.
    pub components: Vec<Vec<Component>>,
}

/// Simulate `m` steps ahead from the final-period state of `model`.
///
/// Time-varying coefficients and log-volatilities evolve as random walks
/// unless `hold_states` is set. `history` supplies at least `p` trailing
/// rows. Returns `None` when the simulated path leaves the explosive bound.
pub fn predictive_simulate<R: Rng + ?Sized>(
    model: &ModelState,
    history: &DMatrix<f64>,
    p: usize,
    m: usize,
    hold_states: bool,
    rng: &mut R,
) -> Result<Option<PredictivePath>> {
    let n = model.equations.len();
    if history.ncols() != n || history.nrows() < p {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: history.ncols(),
        });
    }
    let k_beta = n * p + 1;
    let periods = model.equations[0].vol.h.len();
    if periods == 0 {
        return Err(Error::InsufficientData("state paths are empty".into()));
    }

    // Current coefficients, scale roots and active ranges per equation.
    let mut coefs: Vec<Vec<f64>> = model
        .equations
        .iter()
        .map(|e| (0..e.theta0.len()).map(|j| coefficient(e, k_beta, periods - 1, j)).collect())
        .collect();
    let mut h: Vec<f64> = model.equations.iter().map(|e| e.vol.h[periods - 1]).collect();

    let mut lags: Vec<Vec<f64>> = (0..p)
        .map(|l| history.row(history.nrows() - 1 - l).iter().copied().collect())
        .collect();
    let mut path = DMatrix::zeros(m, n);
    let mut components = Vec::with_capacity(m);
    let mut a_inv = DMatrix::<f64>::identity(n, n);
    let mut c = vec![0.0; n];

    for s in 0..m {
        if !hold_states {
            for (e, coef) in model.equations.iter().zip(coefs.iter_mut()) {
                for j in e.indicators.active_columns(k_beta, coef.len()) {
                    coef[j] += e.scale_roots[j] * rng.sample::<f64, _>(StandardNormal);
                }
            }
            for (e, hi) in model.equations.iter().zip(h.iter_mut()) {
                *hi += e.vol.sigma2_h.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for (i, coef) in coefs.iter().enumerate() {
            let mut v = coef[0];
            for (l, lag) in lags.iter().enumerate() {
                let base = 1 + l * n;
                v += coef[base..base + n]
                    .iter()
                    .zip(lag)
                    .map(|(b, y)| b * y)
                    .sum::<f64>();
            }
            c[i] = v;
        }
        // A has unit diagonal and A[i][j] = α_{i,j} below it; invert by columns.
        a_inv.fill(0.0);
        for col in 0..n {
            a_inv[(col, col)] = 1.0;
            for i in col + 1..n {
                let alpha = &coefs[i][k_beta..];
                let mut v = 0.0;
                for j in col..i {
                    v -= alpha[j] * a_inv[(j, col)];
                }
                a_inv[(i, col)] = v;
            }
        }
        let vars: Vec<f64> = h.iter().map(|v| v.exp()).collect();
        let mut step = Vec::with_capacity(n);
        let shocks: Vec<f64> = vars
            .iter()
            .map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut mean = 0.0;
            let mut var = 0.0;
            let mut draw = 0.0;
            for j in 0..=i {
                let g = a_inv[(i, j)];
                mean += g * c[j];
                var += g * g * vars[j];
                draw += g * shocks[j];
            }
            step.push(Component { mean, var });
            y[i] = mean + draw;
        }
        if y.iter().any(|v| !v.is_finite() || v.abs() > EXPLOSIVE_FORECAST_BOUND) {
            return Ok(None);
        }
        for (i, v) in y.iter().enumerate() {
            path[(s, i)] = *v;
        }
        components.push(step);
        if p > 0 {
            lags.rotate_right(1);
            lags[0] = y;
        }
    }
    Ok(Some(PredictivePath { path, components }))
}

fn log_normal_pdf(y: f64, c: Component) -> f64 {
    -0.5 * (2.0 * PI * c.var).ln() - 0.5 * (y - c.mean).powi(2) / c.var
}

/// Log of the equal-weight Gaussian mixture density at `y`.
///
/// Terms are summed in sorted order so the result does not depend on the
/// order of the components.
pub fn log_predictive_density(components: &[Component], y: f64) -> f64 {
    if components.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mut terms: Vec<f64> = components.iter().map(|c| log_normal_pdf(y, *c)).collect();
    terms.sort_by(f64::total_cmp);
    let max = terms[terms.len() - 1];
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln() - (terms.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Number of observations in the estimation window.
    pub origin: usize,
    pub horizon: usize,
    /// 0-based variable index.
    pub variable: usize,
    pub point: f64,
    pub log_score: f64,
    pub realized: f64,
}

/// Per `(variable, horizon)` values.
pub type Cells = BTreeMap<(usize, usize), f64>;

fn group(records: &[ForecastRecord], f: impl Fn(&ForecastRecord) -> f64) -> BTreeMap<(usize, usize), Vec<f64>> {
    let mut g: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        g.entry((r.variable, r.horizon)).or_default().push(f(r));
    }
    g
}

fn check_cells(
    g: &BTreeMap<(usize, usize), Vec<f64>>,
    variables: usize,
    horizons: &[usize],
) -> Result<()> {
    for variable in 0..variables {
        for &horizon in horizons {
            if g.get(&(variable, horizon)).is_none_or(Vec::is_empty) {
                return Err(Error::EmptyCell { variable, horizon });
            }
        }
    }
    Ok(())
}

/// Root mean squared forecast error per cell.
pub fn rmsfe(records: &[ForecastRecord], variables: usize, horizons: &[usize]) -> Result<Cells> {
    let g = group(records, |r| (r.realized - r.point).powi(2));
    check_cells(&g, variables, horizons)?;
    Ok(g.into_iter()
        .map(|(k, v)| (k, (v.iter().sum::<f64>() / v.len() as f64).sqrt()))
        .collect())
}

/// Average log predictive likelihood per cell.
pub fn alpl(records: &[ForecastRecord], variables: usize, horizons: &[usize]) -> Result<Cells> {
    let g = group(records, |r| r.log_score);
    check_cells(&g, variables, horizons)?;
    Ok(g.into_iter()
        .map(|((var, hor), v)| {
            if v.contains(&f64::NEG_INFINITY) {
                log::warn!("variable {var} horizon {hor}: zero predictive density at a realized value");
            }
            ((var, hor), v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gain {
    pub rmsfe: f64,
    pub alpl: f64,
}

/// `100 (1 - RMSFE_M / RMSFE_B)` and `100 (ALPL_M - ALPL_B)` per cell.
pub fn percentage_gains(
    rmsfe_model: &Cells,
    alpl_model: &Cells,
    rmsfe_bench: &Cells,
    alpl_bench: &Cells,
) -> Result<BTreeMap<(usize, usize), Gain>> {
    let mut out = BTreeMap::new();
    for (&(variable, horizon), &rb) in rmsfe_bench {
        let missing = Error::EmptyCell { variable, horizon };
        let key = (variable, horizon);
        let rm = *rmsfe_model.get(&key).ok_or(missing)?;
        let (am, ab) = match (alpl_model.get(&key), alpl_bench.get(&key)) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::EmptyCell { variable, horizon }),
        };
        if rb == 0.0 {
            return Err(Error::BenchmarkZero { variable, horizon });
        }
        out.insert(
            key,
            Gain {
                rmsfe: 100.0 * (1.0 - rm / rb),
                alpl: 100.0 * (am - ab),
            },
        );
    }
    Ok(out)
}

/// Long-run variance with rectangular truncation at lag `m - 1`.
pub fn long_run_variance(d: &[f64], m: usize) -> f64 {
    let n = d.len();
    let mean = d.iter().sum::<f64>() / n as f64;
    let gamma = |k: usize| -> f64 {
        (k..n).map(|t| (d[t] - mean) * (d[t - k] - mean)).sum::<f64>() / n as f64
    };
    gamma(0) + 2.0 * (1..m.min(n)).map(gamma).sum::<f64>()
}

pub const DM_MIN_OBS: usize = 10;

/// Diebold-Mariano statistic and two-sided normal p-value for loss differentials.
pub fn dm_test(d: &[f64], m: usize) -> Result<(f64, f64)> {
    if d.len() < DM_MIN_OBS {
        return Err(Error::InsufficientData(format!(
            "{} loss differentials, need at least {DM_MIN_OBS}",
            d.len()
        )));
    }
    if d.iter().all(|v| *v == 0.0) {
        return Ok((0.0, 1.0));
    }
    let lrv = long_run_variance(d, m.max(1));
    if !(lrv > 0.0) || !lrv.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let stat = mean / (lrv / n).sqrt();
    let z = Normal::standard();
    Ok((stat, 2.0 * z.sf(stat.abs())))
}

/// Which restricted version of the model is estimated at each origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub label: String,
    pub clamp_gamma: Option<GammaConfig>,
    pub clamp_sigma2_h: Option<f64>,
}

impl ForecastModel {
    pub fn hybrid() -> Self {
        Self {
            label: "hybrid".into(),
            clamp_gamma: None,
            clamp_sigma2_h: None,
        }
    }

    /// Constant coefficients and (numerically) constant volatility.
    pub fn homoscedastic(n: usize) -> Self {
        Self {
            label: "homoscedastic".into(),
            clamp_gamma: Some(GammaConfig::uniform(n, false, false)),
            clamp_sigma2_h: Some(HOMOSCEDASTIC_SIGMA2_H),
        }
    }

    /// `hybrid`, `homoscedastic`, a `HYB-(b,a)` preset or an explicit slot string.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        match text {
            "hybrid" => Ok(Self::hybrid()),
            "homoscedastic" => Ok(Self::homoscedastic(n)),
            _ => Ok(Self {
                label: text.to_string(),
                clamp_gamma: Some(GammaConfig::parse(text, n)?),
                clamp_sigma2_h: None,
            }),
        }
    }

    pub fn settings(&self) -> SamplerSettings {
        SamplerSettings {
            table: MixtureTable::default(),
            clamp_gamma: self.clamp_gamma.as_ref().map(|c| c.pairs.clone()),
            clamp_sigma2_h: self.clamp_sigma2_h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    /// Observations in the first estimation window.
    pub start: usize,
    pub horizons: Vec<usize>,
    pub p: usize,
    pub ar_lags: usize,
    pub hp: HyperParams,
    pub mcmc: McmcConfig,
    pub hold_states: bool,
    pub seed: u64,
}

impl ForecastConfig {
    pub fn new(start: usize, p: usize) -> Self {
        Self {
            start,
            horizons: vec![1, 4],
            p,
            ar_lags: 4,
            hp: HyperParams::default(),
            mcmc: McmcConfig {
                burn_in: 500,
                draws: 2_000,
                ..McmcConfig::default()
            },
            hold_states: false,
            seed: 0,
        }
    }

    pub fn validate(&self, periods: usize) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config("horizons must be at least 1".into()));
        }
        if self.start <= self.p + 1 {
            return Err(Error::Config(format!(
                "evaluation start {} must exceed the lag order plus one",
                self.start
            )));
        }
        if self.start >= periods {
            return Err(Error::InsufficientData(format!(
                "evaluation start {} leaves no out-of-sample periods in {periods}",
                self.start
            )));
        }
        self.mcmc.validate()
    }

    fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(1)
    }
}

/// Estimate on the first `origin` rows and score forecasts of later rows.
pub fn forecast_origin(
    data: &DMatrix<f64>,
    origin: usize,
    model: &ForecastModel,
    cfg: &ForecastConfig,
) -> Result<Vec<ForecastRecord>> {
    let n = data.ncols();
    let window = data.rows(0, origin).into_owned();
    let s2 = residual_variances(&window, cfg.ar_lags)?;
    let priors = PriorSetup::new(cfg.hp.clone(), s2, cfg.p)?;
    let layouts = build_layouts(&window, cfg.p)?;
    let origin_seed = child_seed(cfg.seed, Domain::Origin, origin as u64);
    let mcmc = McmcConfig {
        seed: origin_seed,
        store_theta_tilde: false,
        ..cfg.mcmc.clone()
    };
    let draws = run_mcmc(
        &layouts,
        &priors,
        &model.settings(),
        &mcmc,
        &Executor::sequential(),
        None,
    )?;
    let horizon_max = cfg.max_horizon().min(data.nrows() - origin);
    let mut rng = substream(origin_seed, Domain::Predictive, 0);
    let mut sims = Vec::with_capacity(draws.len());
    let mut excluded = 0;
    for r in 0..draws.len() {
        let state = draws.model_state(r);
        match predictive_simulate(&state, &window, cfg.p, horizon_max, cfg.hold_states, &mut rng)? {
            Some(s) => sims.push(s),
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        log::warn!("origin {origin}: {excluded} explosive predictive draws excluded");
    }
    if sims.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let mut out = Vec::new();
    for &m in &cfg.horizons {
        if origin + m > data.nrows() {
            continue;
        }
        for i in 0..n {
            let point = sims.iter().map(|s| s.path[(m - 1, i)]).sum::<f64>() / sims.len() as f64;
            let comps: Vec<Component> = sims.iter().map(|s| s.components[m - 1][i]).collect();
            let realized = data[(origin + m - 1, i)];
            out.push(ForecastRecord {
                origin,
                horizon: m,
                variable: i,
                point,
                log_score: log_predictive_density(&comps, realized),
                realized,
            });
        }
    }
    Ok(out)
}

/// Expanding-window forecasts from every origin `start..T`.
///
/// Origins whose estimation fails are logged and skipped; the second value
/// counts them.
pub fn recursive_exercise(
    data: &Dataset,
    model: &ForecastModel,
    cfg: &ForecastConfig,
    exec: &Executor,
) -> Result<(Vec<ForecastRecord>, usize)> {
    let t = data.periods();
    cfg.validate(t)?;
    let origins: Vec<usize> = (cfg.start..t).collect();
    let results = exec.map(origins.len(), |k| forecast_origin(&data.values, origins[k], model, cfg));
    let mut records = Vec::new();
    let mut failed = 0;
    for (origin, r) in origins.iter().zip(results) {
        match r {
            Ok(mut rs) => records.append(&mut rs),
            Err(e) => {
                failed += 1;
                log::warn!("{}: origin {origin} skipped: {e}", model.label);
            }
        }
    }
    Ok((records, failed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variable: String,
    pub horizon: usize,
    pub rmsfe_model: f64,
    pub rmsfe_benchmark: f64,
    pub rmsfe_gain: f64,
    pub alpl_model: f64,
    pub alpl_benchmark: f64,
    pub alpl_gain: f64,
    pub dm_point_stat: Option<f64>,
    pub dm_point_p: Option<f64>,
    pub dm_density_stat: Option<f64>,
    pub dm_density_p: Option<f64>,
}

type RecordKey = (usize, usize, usize);

fn index(records: &[ForecastRecord]) -> BTreeMap<RecordKey, &ForecastRecord> {
    records
        .iter()
        .map(|r| ((r.variable, r.horizon, r.origin), r))
        .collect()
}

fn dm_or_none(d: &[f64], m: usize, what: &str) -> (Option<f64>, Option<f64>) {
    match dm_test(d, m) {
        Ok((s, p)) => (Some(s), Some(p)),
        Err(e) => {
            log::warn!("{what}: DM test unavailable: {e}");
            (None, None)
        }
    }
}

/// Gains and Diebold-Mariano tests of `model` against `benchmark` over the
/// origins both have records for.
pub fn summarize(
    model: &[ForecastRecord],
    benchmark: &[ForecastRecord],
    names: &[String],
    horizons: &[usize],
) -> Result<Vec<SummaryRow>> {
    let (im, ib) = (index(model), index(benchmark));
    let common: Vec<RecordKey> = im.keys().filter(|k| ib.contains_key(*k)).copied().collect();
    let pick = |idx: &BTreeMap<RecordKey, &ForecastRecord>| -> Vec<ForecastRecord> {
        common.iter().map(|k| idx[k].clone()).collect()
    };
    let (m, b) = (pick(&im), pick(&ib));
    let n = names.len();
    let (rm, am) = (rmsfe(&m, n, horizons)?, alpl(&m, n, horizons)?);
    let (rb, ab) = (rmsfe(&b, n, horizons)?, alpl(&b, n, horizons)?);
    let gains = percentage_gains(&rm, &am, &rb, &ab)?;
    let mut rows = Vec::new();
    for (i, name) in names.iter().enumerate() {
        for &hz in horizons {
            let keys: Vec<&RecordKey> = common.iter().filter(|k| k.0 == i && k.1 == hz).collect();
            let point: Vec<f64> = keys
                .iter()
                .map(|k| (im[k].realized - im[k].point).powi(2) - (ib[k].realized - ib[k].point).powi(2))
                .collect();
            let density: Vec<f64> = keys.iter().map(|k| ib[k].log_score - im[k].log_score).collect();
            let label = format!("{name} h={hz}");
            let (ps, pp) = dm_or_none(&point, hz, &label);
            let (ds, dp) = dm_or_none(&density, hz, &label);
            let g = gains[&(i, hz)];
            rows.push(SummaryRow {
                variable: name.clone(),
                horizon: hz,
                rmsfe_model: rm[&(i, hz)],
                rmsfe_benchmark: rb[&(i, hz)],
                rmsfe_gain: g.rmsfe,
                alpl_model: am[&(i, hz)],
                alpl_benchmark: ab[&(i, hz)],
                alpl_gain: g.alpl,
                dm_point_stat: ps,
                dm_point_p: pp,
                dm_density_stat: ds,
                dm_density_p: dp,
            });
        }
    }
    Ok(rows)
}

/// One row per record, tagged with the model label.
pub fn write_records(path: &Path, models: &[(&str, &[ForecastRecord])], names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "origin", "horizon", "variable", "point", "log_score", "realized"])?;
    for (model, records) in models {
        for r in *records {
            w.write_record([
                model.to_string(),
                r.origin.to_string(),
                r.horizon.to_string(),
                names[r.variable].clone(),
                format!("{:e}", r.point),
                format!("{:e}", r.log_score),
                format!("{:e}", r.realized),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
