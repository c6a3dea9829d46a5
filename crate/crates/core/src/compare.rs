//! Savage–Dickey comparison of indicator configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::parallel::Executor;
use crate::priors::HyperParams;
use crate::sampler::{indicator_probabilities, EquationLayout, IndicatorPair};

/// A full assignment of the `2n - 1` indicators.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GammaConfig {
    pub pairs: Vec<IndicatorPair>,
}

impl GammaConfig {
    pub fn new(pairs: Vec<IndicatorPair>) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            if p.alpha.is_some() != (i > 0) {
                return Err(Error::Config(format!(
                    "equation {} must {} an impact indicator",
                    i + 1,
                    if i == 0 { "not have" } else { "have" }
                )));
            }
        }
        Ok(Self { pairs })
    }

    /// Every equation set to `(beta, alpha)`; the first equation keeps only `beta`.
    pub fn uniform(n: usize, beta: bool, alpha: bool) -> Self {
        Self {
            pairs: (0..n)
                .map(|i| IndicatorPair::new(beta, (i > 0).then_some(alpha)))
                .collect(),
        }
    }

    /// The four named presets in the order (0,0), (0,1), (1,0), (1,1).
    pub fn presets(n: usize) -> Vec<Self> {
        [(false, false), (false, true), (true, false), (true, true)]
            .into_iter()
            .map(|(b, a)| Self::uniform(n, b, a))
            .collect()
    }

    /// Parse a preset name such as `HYB-(0,1)` for an `n`-variable model.
    pub fn preset(name: &str, n: usize) -> Result<Self> {
        let p: PresetName = name.parse()?;
        Ok(Self::uniform(n, p.beta, p.alpha))
    }

    /// Parse a slot string of `2n - 1` binary digits, for example `1 10 01`.
    pub fn from_slots(text: &str) -> Result<Self> {
        let bits: Vec<bool> = text
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Config(format!("bad indicator digit `{other}`"))),
            })
            .collect::<Result<_>>()?;
        if bits.is_empty() || bits.len().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "an indicator configuration needs 2n-1 digits, got {}",
                bits.len()
            )));
        }
        let n = bits.len().div_ceil(2);
        let pairs = (0..n)
            .map(|i| {
                if i == 0 {
                    IndicatorPair::new(bits[0], None)
                } else {
                    IndicatorPair::new(bits[2 * i - 1], Some(bits[2 * i]))
                }
            })
            .collect();
        Ok(Self { pairs })
    }

    /// A `HYB-(b,a)` preset or a slot string, checked against `n` equations.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let c = if text.trim_start().starts_with("HYB") {
            Self::preset(text.trim(), n)?
        } else {
            Self::from_slots(text)?
        };
        if c.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.n(),
            });
        }
        Ok(c)
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn slots(&self) -> Vec<bool> {
        let mut v = Vec::with_capacity(2 * self.n() - 1);
        for p in &self.pairs {
            v.push(p.beta);
            if let Some(a) = p.alpha {
                v.push(a);
            }
        }
        v
    }

    /// All `2^(2n-1)` configurations.
    pub fn lattice(n: usize) -> Vec<Self> {
        let m = 2 * n - 1;
        (0..1u64 << m)
            .map(|bits| {
                let s: String = (0..m)
                    .map(|k| if bits >> k & 1 == 1 { '1' } else { '0' })
                    .collect();
                Self::from_slots(&s).expect("lattice strings are well formed")
            })
            .collect()
    }

    /// Preset name when the configuration is uniform, otherwise the slot string.
    pub fn label(&self) -> String {
        for (b, a) in [(false, false), (false, true), (true, false), (true, true)] {
            if self.n() > 1 && *self == Self::uniform(self.n(), b, a) {
                return format!("HYB-({},{})", u8::from(b), u8::from(a));
            }
        }
        self.slots().iter().map(|b| if *b { '1' } else { '0' }).collect()
    }
}

impl fmt::Display for GammaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

struct PresetName {
    beta: bool,
    alpha: bool,
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let inner = compact
            .strip_prefix("HYB-(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))?;
        let bit = |t: &str| match t {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(Error::Config(format!("unknown preset `{s}`"))),
        };
        let (b, a) = inner
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))?;
        Ok(Self {
            beta: bit(b)?,
            alpha: bit(a)?,
        })
    }
}

/// `B(g + a, 1 - g + b) / B(a, b)`, which reduces to `a / (a + b)` or `b / (a + b)`.
fn log_beta_bernoulli(on: bool, a: f64, b: f64) -> f64 {
    if on {
        (a / (a + b)).ln()
    } else {
        (b / (a + b)).ln()
    }
}

/// Log of the marginal prior probability of `c`, success probabilities integrated out.
pub fn log_prior_gamma(c: &GammaConfig, hp: &HyperParams) -> f64 {
    c.pairs
        .iter()
        .map(|p| {
            let mut lp = log_beta_bernoulli(p.beta, hp.a_pbeta, hp.b_pbeta);
            if let Some(a) = p.alpha {
                lp += log_beta_bernoulli(a, hp.a_palpha, hp.b_palpha);
            }
            lp
        })
        .sum()
}

/// Conditional indicator probabilities of every equation at every draw.
#[derive(Debug, Clone)]
pub struct PosteriorOrdinates {
    /// `[draw][equation]` → probabilities over the candidates of that equation.
    table: Vec<Vec<Vec<(IndicatorPair, f64)>>>,
}

impl PosteriorOrdinates {
    pub fn compute(
        draws: &PosteriorDraws,
        layouts: &[EquationLayout],
        exec: &Executor,
    ) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::EmptyDraws);
        }
        if layouts.len() != draws.meta.n {
            return Err(Error::DimensionMismatch {
                expected: draws.meta.n,
                got: layouts.len(),
            });
        }
        let table = exec.try_map(draws.len(), |r| {
            layouts
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let e = draws.equation_state(r, i);
                    indicator_probabilities(l, &e.vol.h, &e.scale_roots, &e.theta0, e.p_beta, e.p_alpha)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(Self { table })
    }

    pub fn draws(&self) -> usize {
        self.table.len()
    }

    /// `Π_i P(γ_i = c_i | ·)` at draw `r`.
    pub fn draw_probability(&self, r: usize, c: &GammaConfig) -> f64 {
        self.table[r]
            .iter()
            .zip(&c.pairs)
            .map(|(probs, want)| {
                probs
                    .iter()
                    .find(|(pair, _)| pair == want)
                    .map_or(0.0, |(_, p)| *p)
            })
            .product()
    }

    /// Log of the Monte Carlo average of the conditional probabilities of `c`.
    pub fn log_posterior(&self, c: &GammaConfig) -> Result<f64> {
        if c.n() != self.table[0].len() {
            return Err(Error::DimensionMismatch {
                expected: self.table[0].len(),
                got: c.n(),
            });
        }
        let logs: Vec<f64> = self
            .table
            .iter()
            .map(|eqs| {
                eqs.iter()
                    .zip(&c.pairs)
                    .map(|(probs, want)| {
                        probs
                            .iter()
                            .find(|(pair, _)| pair == want)
                            .map_or(f64::NEG_INFINITY, |(_, p)| p.ln())
                    })
                    .sum()
            })
            .collect();
        Ok(log_mean_exp(&logs))
    }
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + (v.iter().map(|x| (x - top).exp()).sum::<f64>() / v.len() as f64).ln()
}

pub fn log_posterior_gamma(
    c: &GammaConfig,
    draws: &PosteriorDraws,
    layouts: &[EquationLayout],
    exec: &Executor,
) -> Result<f64> {
    PosteriorOrdinates::compute(draws, layouts, exec)?.log_posterior(c)
}

/// One row of a comparison report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub config: String,
    pub log_prior: f64,
    pub log_posterior: f64,
    /// Positive values favour the unrestricted model.
    pub log_bf: f64,
}

/// `log BF_{u,c} = log p(γ = c) - log p(γ = c | y)`.
pub fn log_bayes_factor_unrestricted_vs(
    c: &GammaConfig,
    hp: &HyperParams,
    ordinates: &PosteriorOrdinates,
) -> Result<Comparison> {
    let log_prior = log_prior_gamma(c, hp);
    let log_posterior = ordinates.log_posterior(c)?;
    Ok(Comparison {
        config: c.label(),
        log_prior,
        log_posterior,
        log_bf: log_prior - log_posterior,
    })
}

/// `log BF_{c1,c2} = log BF_{u,c2} - log BF_{u,c1}`; positive values favour `c1`.
pub fn log_bayes_factor(
    c1: &GammaConfig,
    c2: &GammaConfig,
    hp: &HyperParams,
    ordinates: &PosteriorOrdinates,
) -> Result<f64> {
    let a = log_bayes_factor_unrestricted_vs(c1, hp, ordinates)?;
    let b = log_bayes_factor_unrestricted_vs(c2, hp, ordinates)?;
    Ok(b.log_bf - a.log_bf)
}
