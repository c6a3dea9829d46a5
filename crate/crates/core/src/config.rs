//! Run configuration shared by every command.
//!
//! Values are resolved as defaults, then the config file, then `HTVP_*`
//! environment variables, then command-line flags. Keys are flat; prior
//! hyperparameters sit at the top level next to the run settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Transform;
use crate::draws::{DrawFormat, McmcConfig};
use crate::error::{Error, Result};
use crate::priors::HyperParams;

pub const ENV_PREFIX: &str = "HTVP_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    /// Two-column sidecar CSV of transformation tags.
    pub transforms: Option<PathBuf>,
    /// Inline transformation tags, overriding the sidecar.
    pub transform: BTreeMap<String, Transform>,
    /// 1-based column order applied after loading.
    pub order: Option<Vec<usize>>,
    pub p: usize,
    pub ar_lags: usize,
    #[serde(flatten)]
    pub hyper: HyperParams,
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    pub seed: Option<u64>,
    pub workers: usize,
    pub output: PathBuf,
    /// Fixed indicators: a `HYB-(b,a)` preset or a string of `2n-1` digits.
    pub clamp: Option<String>,
    pub clamp_sigma2_h: Option<f64>,
    pub store_theta_tilde: bool,
    pub draws_format: DrawFormat,

    pub draws_dir: Option<PathBuf>,
    pub configs: Vec<String>,

    pub n: usize,
    pub periods: usize,
    pub replications: usize,
    pub pattern: Option<String>,

    /// Observations in the first forecast estimation window.
    pub start: Option<usize>,
    /// Date label of the first one-step-ahead target; alternative to `start`.
    pub start_date: Option<String>,
    pub horizons: Vec<usize>,
    pub model: String,
    pub benchmark: String,
    pub hold_states: bool,
    pub forecast_burn_in: usize,
    pub forecast_draws: usize,

    pub inputs: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            data: None,
            transforms: None,
            transform: BTreeMap::new(),
            order: None,
            p: 2,
            ar_lags: 4,
            hyper: HyperParams::default(),
            burn_in: 1_000,
            draws: 10_000,
            thin: 1,
            seed: None,
            workers: 1,
            output: PathBuf::from("out"),
            clamp: None,
            clamp_sigma2_h: None,
            store_theta_tilde: false,
            draws_format: DrawFormat::Bin,
            draws_dir: None,
            configs: ["HYB-(0,0)", "HYB-(0,1)", "HYB-(1,0)", "HYB-(1,1)"]
                .map(String::from)
                .to_vec(),
            n: 12,
            periods: 400,
            replications: 50,
            pattern: None,
            start: None,
            start_date: None,
            horizons: vec![1, 4],
            model: "hybrid".into(),
            benchmark: "homoscedastic".into(),
            hold_states: false,
            forecast_burn_in: 500,
            forecast_draws: 2_000,
            inputs: Vec::new(),
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "command",
    "data",
    "transforms",
    "transform",
    "order",
    "p",
    "ar_lags",
    "burn_in",
    "draws",
    "thin",
    "seed",
    "workers",
    "output",
    "clamp",
    "clamp_sigma2_h",
    "store_theta_tilde",
    "draws_format",
    "draws_dir",
    "configs",
    "n",
    "periods",
    "replications",
    "pattern",
    "start",
    "start_date",
    "horizons",
    "model",
    "benchmark",
    "hold_states",
    "forecast_burn_in",
    "forecast_draws",
    "inputs",
];

/// Every key accepted in a config file, environment override or `--set`.
pub fn known_keys() -> Vec<String> {
    let hp = toml::Table::try_from(HyperParams::default()).expect("hyperparameters serialize");
    RUN_KEYS
        .iter()
        .map(|k| k.to_string())
        .chain(hp.keys().cloned())
        .collect()
}

/// Parse a raw override value: TOML syntax first, then a comma list, then a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    let as_toml = |s: &str| {
        toml::from_str::<toml::Table>(&format!("v = {s}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
    };
    if let Some(v) = as_toml(raw) {
        return v;
    }
    if raw.contains(',') {
        let items: Option<Vec<toml::Value>> = raw.split(',').map(|s| as_toml(s.trim())).collect();
        if let Some(items) = items {
            return toml::Value::Array(items);
        }
    }
    toml::Value::String(raw.to_string())
}

fn json_to_table(text: &str) -> Result<toml::Table> {
    fn strip_nulls(v: serde_json::Value) -> Option<serde_json::Value> {
        use serde_json::Value;
        match v {
            Value::Null => None,
            Value::Object(m) => Some(Value::Object(
                m.into_iter()
                    .filter_map(|(k, v)| strip_nulls(v).map(|v| (k, v)))
                    .collect(),
            )),
            Value::Array(a) => Some(Value::Array(a.into_iter().filter_map(strip_nulls).collect())),
            other => Some(other),
        }
    }
    let v: serde_json::Value = serde_json::from_str(text)?;
    let v = strip_nulls(v).unwrap_or(serde_json::Value::Null);
    Ok(serde_json::from_value(v)?)
}

/// Read a TOML config, or a JSON echo written by a previous run.
pub fn read_config_file(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        json_to_table(&text)
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// `HTVP_<KEY>` overrides for every known key present in `vars`.
pub fn env_overrides<I>(vars: I) -> toml::Table
where
    I: IntoIterator<Item = (String, String)>,
{
    let known = known_keys();
    let mut t = toml::Table::new();
    for (k, v) in vars {
        if let Some(rest) = k.strip_prefix(ENV_PREFIX) {
            let key = rest.to_ascii_lowercase();
            if known.contains(&key) {
                t.insert(key, parse_value(&v));
            } else {
                log::warn!("ignoring unknown environment override {k}");
            }
        }
    }
    t
}

/// Layer tables left to right and deserialize the result.
pub fn resolve(layers: &[toml::Table]) -> Result<RunConfig> {
    let known = known_keys();
    let mut merged = toml::Table::new();
    for layer in layers {
        for (k, v) in layer {
            if !known.contains(k) {
                return Err(Error::Config(format!("unknown configuration key `{k}`")));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    let cfg: RunConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.hyper.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (--seed or `seed = ...`)".into()))
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("a data path is required (--data)".into()))
    }

    pub fn mcmc(&self) -> Result<McmcConfig> {
        let c = McmcConfig {
            burn_in: self.burn_in,
            draws: self.draws,
            thin: self.thin,
            seed: self.seed()?,
            store_theta_tilde: self.store_theta_tilde,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the JSON echo, hex encoded, ignoring the output directory
    /// and worker count since neither changes the results.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        canonical.workers = 0;
        let digest = Sha256::digest(serde_json::to_vec(&canonical)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> toml::Table {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn layers_override_in_order() {
        let file = table("p = 3\nseed = 1\nkappa4 = 50.0\n[transform]\nGDPC1 = \"log_diff_400\"\n");
        let env = env_overrides([
            ("HTVP_SEED".to_string(), "7".to_string()),
            ("HTVP_HORIZONS".to_string(), "1,2,8".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ]);
        let mut flags = toml::Table::new();
        flags.insert("p".into(), toml::Value::Integer(1));
        let cfg = resolve(&[file, env, flags]).unwrap();
        assert_eq!(cfg.p, 1);
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.horizons, vec![1, 2, 8]);
        assert_eq!(cfg.hyper.kappa4, 50.0);
        assert_eq!(cfg.hyper.kappa3, 1.0);
        assert_eq!(cfg.transform["GDPC1"], Transform::LogDiff400);
        assert_eq!(cfg.ar_lags, 4);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        assert!(matches!(resolve(&[table("lags = 2")]), Err(Error::Config(_))));
        assert!(matches!(resolve(&[table("p = \"two\"")]), Err(Error::Config(_))));
        assert!(matches!(resolve(&[table("s_h = -1.0")]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::default().seed(), Err(Error::Config(_))));
    }

    #[test]
    fn json_echo_round_trips() {
        let mut cfg = resolve(&[table("seed = 3\ncommand = \"estimate\"\ndata = \"x.csv\"")]).unwrap();
        cfg.clamp = Some("HYB-(0,1)".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resolved_config.json");
        std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
        let again = resolve(&[read_config_file(&path).unwrap()]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash().unwrap(), cfg.hash().unwrap());
        let moved = RunConfig {
            output: PathBuf::from("elsewhere"),
            workers: 8,
            ..cfg.clone()
        };
        assert_eq!(moved.hash().unwrap(), cfg.hash().unwrap());
        let reseeded = RunConfig {
            seed: Some(4),
            ..cfg.clone()
        };
        assert_ne!(reseeded.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn value_parsing() {
        assert_eq!(parse_value("3"), toml::Value::Integer(3));
        assert_eq!(parse_value("true"), toml::Value::Boolean(true));
        assert_eq!(parse_value("data/fred.csv"), toml::Value::String("data/fred.csv".into()));
        assert_eq!(parse_value("HYB-(0,1)"), toml::Value::String("HYB-(0,1)".into()));
    }
}
