//! MCMC driver and persisted posterior draws.
//!
//! A draws directory holds `meta.json` plus one matrix per parameter with one
//! row per retained draw, either as `<name>.bin` (row-major little-endian
//! `f64`) or `<name>.csv`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::sampler::{
    gibbs_sweep, EquationLayout, EquationState, IndicatorPair, ModelState, PriorSetup,
    SamplerSettings,
};
use crate::sv::VolatilityState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    pub seed: u64,
    pub store_theta_tilde: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            burn_in: 1_000,
            draws: 10_000,
            thin: 1,
            seed: 0,
            store_theta_tilde: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.thin == 0 {
            return Err(Error::Config("draws and thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row-major matrix with one row per retained draw.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrawMatrix {
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DrawMatrix {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            data: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn column_mean(&self, c: usize) -> f64 {
        let rows = self.rows();
        (0..rows).map(|r| self.data[r * self.cols + c]).sum::<f64>() / rows as f64
    }

    fn push(&mut self, row: impl IntoIterator<Item = f64>) {
        let before = self.data.len();
        self.data.extend(row);
        debug_assert_eq!(self.data.len() - before, self.cols);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawFormat {
    Bin,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub n: usize,
    pub p: usize,
    pub periods: usize,
    pub k_theta: Vec<usize>,
    pub names: Vec<String>,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
    pub requested_draws: usize,
    pub stored_draws: usize,
    pub truncated: bool,
    pub has_theta_tilde: bool,
    pub config_hash: Option<String>,
}

/// Retained draws of every unknown.
///
/// Indicator and probability columns run over the `2n - 1` slots in the order
/// equation 1 lag block, equation 2 lag block, equation 2 impact block, and so on.
/// Per-equation vectors are concatenated in equation order; `h` is stored
/// equation by equation with `periods` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub meta: DrawsMeta,
    pub gamma: DrawMatrix,
    pub probs: DrawMatrix,
    pub kappa: DrawMatrix,
    pub theta0: DrawMatrix,
    pub scale_roots: DrawMatrix,
    pub h: DrawMatrix,
    pub sigma2_h: DrawMatrix,
    pub h0: DrawMatrix,
    pub theta_tilde_last: DrawMatrix,
    pub theta_tilde: Option<DrawMatrix>,
}

fn slot_count(n: usize) -> usize {
    2 * n - 1
}

impl PosteriorDraws {
    pub fn empty(layouts: &[EquationLayout], p: usize, cfg: &McmcConfig) -> Self {
        let n = layouts.len();
        let k_theta: Vec<usize> = layouts.iter().map(|l| l.k_theta()).collect();
        let kt: usize = k_theta.iter().sum();
        let periods = layouts.first().map_or(0, |l| l.periods);
        Self {
            meta: DrawsMeta {
                n,
                p,
                periods,
                k_theta,
                names: (1..=n).map(|i| format!("y{i}")).collect(),
                seed: cfg.seed,
                burn_in: cfg.burn_in,
                thin: cfg.thin,
                requested_draws: cfg.draws,
                stored_draws: 0,
                truncated: false,
                has_theta_tilde: cfg.store_theta_tilde,
                config_hash: None,
            },
            gamma: DrawMatrix::new(slot_count(n)),
            probs: DrawMatrix::new(slot_count(n)),
            kappa: DrawMatrix::new(2),
            theta0: DrawMatrix::new(kt),
            scale_roots: DrawMatrix::new(kt),
            h: DrawMatrix::new(n * periods),
            sigma2_h: DrawMatrix::new(n),
            h0: DrawMatrix::new(n),
            theta_tilde_last: DrawMatrix::new(kt),
            theta_tilde: cfg
                .store_theta_tilde
                .then(|| DrawMatrix::new(kt * periods)),
        }
    }

    pub fn len(&self) -> usize {
        self.meta.stored_draws
    }

    pub fn is_empty(&self) -> bool {
        self.meta.stored_draws == 0
    }

    pub fn push(&mut self, m: &ModelState) {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let mut g = Vec::with_capacity(self.gamma.cols);
        let mut pr = Vec::with_capacity(self.gamma.cols);
        for e in &m.equations {
            g.push(flag(e.indicators.beta));
            pr.push(e.p_beta);
            if let (Some(a), Some(pa)) = (e.indicators.alpha, e.p_alpha) {
                g.push(flag(a));
                pr.push(pa);
            }
        }
        self.gamma.push(g);
        self.probs.push(pr);
        self.kappa.push([m.kappa1, m.kappa2]);
        let eqs = &m.equations;
        self.theta0.push(eqs.iter().flat_map(|e| e.theta0.iter().copied()));
        self.scale_roots
            .push(eqs.iter().flat_map(|e| e.scale_roots.iter().copied()));
        self.h.push(eqs.iter().flat_map(|e| e.vol.h.iter().copied()));
        self.sigma2_h.push(eqs.iter().map(|e| e.vol.sigma2_h));
        self.h0.push(eqs.iter().map(|e| e.vol.h0));
        let t = self.meta.periods;
        self.theta_tilde_last.push(eqs.iter().flat_map(|e| {
            let k = e.theta0.len();
            e.theta_tilde[(t - 1) * k..t * k].iter().copied()
        }));
        if let Some(tt) = self.theta_tilde.as_mut() {
            tt.push(eqs.iter().flat_map(|e| e.theta_tilde.iter().copied()));
        }
        self.meta.stored_draws += 1;
    }

    fn theta_offset(&self, i: usize) -> usize {
        self.meta.k_theta[..i].iter().sum()
    }

    /// Indicator slot positions of equation `i`: lag block, then impact block if any.
    pub fn slots(i: usize) -> (usize, Option<usize>) {
        if i == 0 {
            (0, None)
        } else {
            (2 * i - 1, Some(2 * i))
        }
    }

    /// Reassemble the stored parts of equation `i` at draw `r`.
    ///
    /// Without stored state paths only the final period of `theta_tilde` is
    /// meaningful; earlier periods are zero.
    pub fn equation_state(&self, r: usize, i: usize) -> EquationState {
        let k = self.meta.k_theta[i];
        let off = self.theta_offset(i);
        let t = self.meta.periods;
        let (sb, sa) = Self::slots(i);
        let g = self.gamma.row(r);
        let pr = self.probs.row(r);
        let theta_tilde = match &self.theta_tilde {
            Some(tt) => {
                let row = tt.row(r);
                row[off * t..(off + k) * t].to_vec()
            }
            None => {
                let mut v = vec![0.0; t * k];
                v[(t - 1) * k..].copy_from_slice(&self.theta_tilde_last.row(r)[off..off + k]);
                v
            }
        };
        EquationState {
            indicators: IndicatorPair::new(g[sb] > 0.5, sa.map(|s| g[s] > 0.5)),
            theta_tilde,
            theta0: self.theta0.row(r)[off..off + k].to_vec(),
            scale_roots: self.scale_roots.row(r)[off..off + k].to_vec(),
            vol: VolatilityState {
                h: self.h.row(r)[i * t..(i + 1) * t].to_vec(),
                h0: self.h0.row(r)[i],
                sigma2_h: self.sigma2_h.row(r)[i],
            },
            p_beta: pr[sb],
            p_alpha: sa.map(|s| pr[s]),
        }
    }

    pub fn model_state(&self, r: usize) -> ModelState {
        ModelState {
            equations: (0..self.meta.n).map(|i| self.equation_state(r, i)).collect(),
            kappa1: self.kappa.row(r)[0],
            kappa2: self.kappa.row(r)[1],
        }
    }

    /// Posterior means of the indicators, `(lag block, impact block)` per equation.
    pub fn indicator_means(&self) -> Result<Vec<(f64, Option<f64>)>> {
        if self.is_empty() {
            return Err(Error::EmptyDraws);
        }
        Ok((0..self.meta.n)
            .map(|i| {
                let (sb, sa) = Self::slots(i);
                (self.gamma.column_mean(sb), sa.map(|s| self.gamma.column_mean(s)))
            })
            .collect())
    }

    fn matrices(&self) -> Vec<(&'static str, &DrawMatrix)> {
        let mut v = vec![
            ("gamma", &self.gamma),
            ("probs", &self.probs),
            ("kappa", &self.kappa),
            ("theta0", &self.theta0),
            ("scale_roots", &self.scale_roots),
            ("h", &self.h),
            ("sigma2_h", &self.sigma2_h),
            ("h0", &self.h0),
            ("theta_tilde_last", &self.theta_tilde_last),
        ];
        if let Some(tt) = &self.theta_tilde {
            v.push(("theta_tilde", tt));
        }
        v
    }

    pub fn write_dir(&self, dir: &Path, format: DrawFormat) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join("meta.json");
        let meta = serde_json::json!({ "format": format, "meta": &self.meta });
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(&meta_path, e))?;
        for (name, m) in self.matrices() {
            match format {
                DrawFormat::Bin => {
                    let path = dir.join(format!("{name}.bin"));
                    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                    let mut w = BufWriter::new(f);
                    for v in &m.data {
                        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
                    }
                    w.flush().map_err(|e| Error::io(&path, e))?;
                }
                DrawFormat::Csv => {
                    let path = dir.join(format!("{name}.csv"));
                    let mut w = csv::Writer::from_path(&path)?;
                    w.write_record((0..m.cols).map(|c| format!("c{c}")))?;
                    for r in 0..m.rows() {
                        w.write_record(m.row(r).iter().map(|v| format!("{v:e}")))?;
                    }
                    w.flush().map_err(|e| Error::io(&path, e))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        #[derive(Deserialize)]
        struct Stored {
            format: DrawFormat,
            meta: DrawsMeta,
        }
        let stored: Stored = serde_json::from_str(&text)?;
        let meta = stored.meta;
        let n = meta.n;
        let kt: usize = meta.k_theta.iter().sum();
        let t = meta.periods;
        let read = |name: &str, cols: usize| -> Result<DrawMatrix> {
            let data = match stored.format {
                DrawFormat::Bin => {
                    let path = dir.join(format!("{name}.bin"));
                    let mut bytes = Vec::new();
                    fs::File::open(&path)
                        .and_then(|mut f| f.read_to_end(&mut bytes))
                        .map_err(|e| Error::io(&path, e))?;
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect::<Vec<_>>()
                }
                DrawFormat::Csv => {
                    let path = dir.join(format!("{name}.csv"));
                    let mut rdr = csv::Reader::from_path(&path)?;
                    let mut data = Vec::new();
                    for (row, rec) in rdr.records().enumerate() {
                        let rec = rec?;
                        for field in rec.iter() {
                            data.push(field.trim().parse::<f64>().map_err(|_| {
                                Error::MissingValue {
                                    column: name.to_string(),
                                    row,
                                }
                            })?);
                        }
                    }
                    data
                }
            };
            if data.len() != cols * meta.stored_draws {
                return Err(Error::DimensionMismatch {
                    expected: cols * meta.stored_draws,
                    got: data.len(),
                });
            }
            Ok(DrawMatrix { cols, data })
        };
        Ok(Self {
            gamma: read("gamma", slot_count(n))?,
            probs: read("probs", slot_count(n))?,
            kappa: read("kappa", 2)?,
            theta0: read("theta0", kt)?,
            scale_roots: read("scale_roots", kt)?,
            h: read("h", n * t)?,
            sigma2_h: read("sigma2_h", n)?,
            h0: read("h0", n)?,
            theta_tilde_last: read("theta_tilde_last", kt)?,
            theta_tilde: if meta.has_theta_tilde {
                Some(read("theta_tilde", kt * t)?)
            } else {
                None
            },
            meta,
        })
    }
}

/// Run burn-in and retain every `thin`-th sweep afterwards.
///
/// When `stop` becomes set the draws collected so far are returned with the
/// truncation flag raised.
pub fn run_mcmc(
    layouts: &[EquationLayout],
    priors: &PriorSetup,
    settings: &SamplerSettings,
    cfg: &McmcConfig,
    exec: &Executor,
    stop: Option<&AtomicBool>,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    settings.validate(layouts)?;
    let init = ModelState::initial(layouts, priors, settings);
    run_mcmc_from(init, layouts, priors, settings, cfg, exec, stop)
}

pub fn run_mcmc_from(
    mut model: ModelState,
    layouts: &[EquationLayout],
    priors: &PriorSetup,
    settings: &SamplerSettings,
    cfg: &McmcConfig,
    exec: &Executor,
    stop: Option<&AtomicBool>,
) -> Result<PosteriorDraws> {
    let mut out = PosteriorDraws::empty(layouts, priors.p, cfg);
    let total = cfg.burn_in + cfg.draws * cfg.thin;
    for sweep in 0..total {
        if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            log::warn!("interrupted after {sweep} sweeps");
            out.meta.truncated = true;
            break;
        }
        model = gibbs_sweep(&model, layouts, priors, settings, exec, cfg.seed, sweep as u64)?;
        if sweep >= cfg.burn_in && (sweep - cfg.burn_in + 1).is_multiple_of(cfg.thin) {
            out.push(&model);
        }
        if (sweep + 1) % 1000 == 0 {
            log::info!("sweep {}/{total}", sweep + 1);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{residual_variances, sample_normal, HyperParams};
    use crate::sampler::build_layouts;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Vec<EquationLayout>, PriorSetup) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut y = DMatrix::zeros(30, 2);
        for r in 1..30 {
            for j in 0..2 {
                y[(r, j)] = 0.3 * y[(r - 1, j)] + sample_normal(0.0, 1.0, &mut rng);
            }
        }
        let s2 = residual_variances(&y, 1).unwrap();
        (
            build_layouts(&y, 1).unwrap(),
            PriorSetup::new(HyperParams::default(), s2, 1).unwrap(),
        )
    }

    fn cfg(burn_in: usize, draws: usize, thin: usize) -> McmcConfig {
        McmcConfig {
            burn_in,
            draws,
            thin,
            seed: 3,
            store_theta_tilde: true,
        }
    }

    #[test]
    fn single_draw() {
        let (l, p) = setup();
        let d = run_mcmc(&l, &p, &SamplerSettings::default(), &cfg(0, 1, 1), &Executor::sequential(), None)
            .unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.gamma.cols, 3);
    }

    #[test]
    fn thinning_takes_every_other_draw() {
        let (l, p) = setup();
        let s = SamplerSettings::default();
        let e = Executor::sequential();
        let a = run_mcmc(&l, &p, &s, &cfg(2, 6, 1), &e, None).unwrap();
        let b = run_mcmc(&l, &p, &s, &cfg(2, 3, 2), &e, None).unwrap();
        for r in 0..3 {
            assert_eq!(b.theta0.row(r), a.theta0.row(2 * r + 1));
            assert_eq!(b.h.row(r), a.h.row(2 * r + 1));
        }
    }

    #[test]
    fn round_trip_both_formats() {
        let (l, p) = setup();
        let d = run_mcmc(&l, &p, &SamplerSettings::default(), &cfg(1, 3, 1), &Executor::sequential(), None)
            .unwrap();
        for fmt in [DrawFormat::Bin, DrawFormat::Csv] {
            let dir = tempfile::tempdir().unwrap();
            d.write_dir(dir.path(), fmt).unwrap();
            let back = PosteriorDraws::read_dir(dir.path()).unwrap();
            assert_eq!(back, d);
        }
        assert_eq!(d.model_state(2).equations[1].theta0.len(), l[1].k_theta());
    }

    #[test]
    fn stop_flag_truncates() {
        let (l, p) = setup();
        let stop = AtomicBool::new(true);
        let d = run_mcmc(
            &l,
            &p,
            &SamplerSettings::default(),
            &cfg(0, 5, 1),
            &Executor::sequential(),
            Some(&stop),
        )
        .unwrap();
        assert!(d.meta.truncated);
        assert!(d.is_empty());
        assert!(matches!(d.indicator_means(), Err(Error::EmptyDraws)));
    }
}
