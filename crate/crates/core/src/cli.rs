//! Command-line front end: `simulate`, `estimate`, `compare`, `forecast`
//! and `summarize`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use clap::{Args, Parser, Subcommand};

use crate::compare::{log_bayes_factor_unrestricted_vs, GammaConfig, PosteriorOrdinates};
use crate::config::{self, RunConfig};
use crate::data::{load_csv, load_transform_sidecar, permute_columns, Dataset, TransformSpec};
use crate::diagnostics::inefficiency_factor;
use crate::draws::{run_mcmc, McmcConfig, PosteriorDraws};
use crate::error::{Error, ErrorClass, Result};
use crate::forecast::{self, ForecastConfig, ForecastModel, ForecastRecord, SummaryRow};
use crate::montecarlo::{self, DgpSpec, RecoveryConfig};
use crate::parallel::Executor;
use crate::priors::residual_variances;
use crate::sampler::{build_layouts, EquationLayout, PriorSetup, SamplerSettings};
use crate::sv::MixtureTable;

#[derive(Debug, Parser)]
#[command(name = "hybrid-tvp", version, about = "Hybrid TVP-VAR estimation, model comparison and forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML config file, or a resolved_config.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Two-column `mnemonic,transform` CSV.
    #[arg(long, global = true)]
    pub transforms: Option<PathBuf>,
    /// 1-based column order, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub order: Option<Vec<usize>>,
    /// VAR lag order.
    #[arg(short = 'p', long = "lags", global = true)]
    pub p: Option<usize>,
    #[arg(long, global = true)]
    pub ar_lags: Option<usize>,
    #[arg(long, global = true)]
    pub burn_in: Option<usize>,
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    #[arg(long, global = true)]
    pub thin: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(short = 'o', long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub clamp_sigma2_h: Option<f64>,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the synthetic DGP and run the indicator recovery study.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(short = 'T', long)]
        periods: Option<usize>,
        #[arg(short = 'R', long)]
        replications: Option<usize>,
        /// Indicator pattern such as `00,01,10,11`.
        #[arg(long)]
        pattern: Option<String>,
    },
    /// Run the Gibbs sampler and store the draws.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clamp: Option<String>,
        #[arg(long)]
        store_theta_tilde: bool,
        #[arg(long, value_parser = ["bin", "csv"])]
        draws_format: Option<String>,
    },
    /// Savage-Dickey log Bayes factors of the unrestricted model against fixed configurations.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Draws written by `estimate`; estimated afresh when absent.
        #[arg(long)]
        draws_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ';')]
        configs: Option<Vec<String>>,
    },
    /// Recursive out-of-sample forecasts against a benchmark.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        start_date: Option<String>,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        benchmark: Option<String>,
        /// Keep coefficients and volatilities at their final values.
        #[arg(long)]
        hold_states: bool,
        #[arg(long)]
        forecast_burn_in: Option<usize>,
        #[arg(long)]
        forecast_draws: Option<usize>,
    },
    /// Gains tables from `forecast` records.
    Summarize {
        #[command(flatten)]
        common: Common,
        /// `records.csv` files or forecast output directories.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        benchmark: Option<String>,
    },
}

fn put<T: Into<toml::Value>>(t: &mut toml::Table, key: &str, v: Option<T>) {
    if let Some(v) = v {
        t.insert(key.to_string(), v.into());
    }
}

fn path_value(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn int(v: Option<usize>) -> Option<i64> {
    v.map(|v| v as i64)
}

fn int_list(v: &Option<Vec<usize>>) -> Option<toml::Value> {
    v.as_ref()
        .map(|v| toml::Value::Array(v.iter().map(|x| toml::Value::Integer(*x as i64)).collect()))
}

fn flag(v: bool) -> Option<bool> {
    v.then_some(true)
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Estimate { .. } => "estimate",
            Command::Compare { .. } => "compare",
            Command::Forecast { .. } => "forecast",
            Command::Summarize { .. } => "summarize",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Estimate { common, .. }
            | Command::Compare { common, .. }
            | Command::Forecast { common, .. }
            | Command::Summarize { common, .. } => common,
        }
    }

    /// Settings given on the command line, as configuration keys.
    pub fn flag_table(&self) -> Result<toml::Table> {
        let c = self.common();
        let mut t = toml::Table::new();
        put(&mut t, "data", path_value(&c.data));
        put(&mut t, "transforms", path_value(&c.transforms));
        put(&mut t, "order", int_list(&c.order));
        put(&mut t, "p", int(c.p));
        put(&mut t, "ar_lags", int(c.ar_lags));
        put(&mut t, "burn_in", int(c.burn_in));
        put(&mut t, "draws", int(c.draws));
        put(&mut t, "thin", int(c.thin));
        put(&mut t, "seed", c.seed.map(|s| s as i64));
        put(&mut t, "workers", int(c.workers));
        put(&mut t, "output", path_value(&c.output));
        put(&mut t, "clamp_sigma2_h", c.clamp_sigma2_h);
        match self {
            Command::Simulate {
                n,
                periods,
                replications,
                pattern,
                ..
            } => {
                put(&mut t, "n", int(*n));
                put(&mut t, "periods", int(*periods));
                put(&mut t, "replications", int(*replications));
                put(&mut t, "pattern", pattern.clone());
            }
            Command::Estimate {
                clamp,
                store_theta_tilde,
                draws_format,
                ..
            } => {
                put(&mut t, "clamp", clamp.clone());
                put(&mut t, "store_theta_tilde", flag(*store_theta_tilde));
                put(&mut t, "draws_format", draws_format.clone());
            }
            Command::Compare {
                draws_dir, configs, ..
            } => {
                put(&mut t, "draws_dir", path_value(draws_dir));
                put(
                    &mut t,
                    "configs",
                    configs.as_ref().map(|v| {
                        toml::Value::Array(v.iter().map(|s| toml::Value::String(s.clone())).collect())
                    }),
                );
            }
            Command::Forecast {
                start,
                start_date,
                horizons,
                model,
                benchmark,
                hold_states,
                forecast_burn_in,
                forecast_draws,
                ..
            } => {
                put(&mut t, "start", int(*start));
                put(&mut t, "start_date", start_date.clone());
                put(&mut t, "horizons", int_list(horizons));
                put(&mut t, "model", model.clone());
                put(&mut t, "benchmark", benchmark.clone());
                put(&mut t, "hold_states", flag(*hold_states));
                put(&mut t, "forecast_burn_in", int(*forecast_burn_in));
                put(&mut t, "forecast_draws", int(*forecast_draws));
            }
            Command::Summarize {
                inputs,
                model,
                benchmark,
                ..
            } => {
                if !inputs.is_empty() {
                    put(
                        &mut t,
                        "inputs",
                        Some(toml::Value::Array(
                            inputs
                                .iter()
                                .map(|p| toml::Value::String(p.display().to_string()))
                                .collect(),
                        )),
                    );
                }
                put(&mut t, "model", model.clone());
                put(&mut t, "benchmark", benchmark.clone());
            }
        }
        for kv in &c.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            t.insert(k.trim().to_string(), config::parse_value(v.trim()));
        }
        Ok(t)
    }
}

/// Resolve the configuration for a parsed command line.
pub fn resolve_config<I>(cmd: &Command, env: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let file = match &cmd.common().config {
        Some(p) => config::read_config_file(p)?,
        None => toml::Table::new(),
    };
    let mut flags = cmd.flag_table()?;
    flags.insert("command".into(), toml::Value::String(cmd.name().into()));
    config::resolve(&[file, config::env_overrides(env), flags])
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn write_error_json(dir: &Path, e: &Error) {
    let body = serde_json::json!({
        "kind": e.kind(),
        "class": format!("{:?}", e.class()).to_lowercase(),
        "message": e.to_string(),
        "exit_code": exit_code(e.class()),
    });
    let path = dir.join("error.json");
    if fs::create_dir_all(dir).is_ok() {
        if let Err(err) = fs::write(&path, format!("{body:#}\n")) {
            eprintln!("cannot write {}: {err}", path.display());
        }
    }
}

/// Run one command line and return the process exit code.
pub fn run_from_args<A, T, I>(args: A, env: I, stop: &AtomicBool) -> i32
where
    A: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    I: IntoIterator<Item = (String, String)>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.command.common().quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    let cfg = match resolve_config(&cli.command, env) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            let out = cli.command.common().output.clone().unwrap_or_else(|| PathBuf::from("out"));
            write_error_json(&out, &e);
            return exit_code(e.class());
        }
    };
    match run(&cfg, stop) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            write_error_json(&cfg.output, &e);
            exit_code(e.class())
        }
    }
}

/// Execute a resolved configuration, writing the config echo first.
pub fn run(cfg: &RunConfig, stop: &AtomicBool) -> Result<()> {
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let echo = cfg.output.join("resolved_config.json");
    fs::write(&echo, cfg.to_json()? + "\n").map_err(|e| Error::io(&echo, e))?;
    let stale = cfg.output.join("error.json");
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    match cfg.command.as_str() {
        "simulate" => simulate_cmd(cfg),
        "estimate" => estimate_cmd(cfg, stop),
        "compare" => compare_cmd(cfg, stop),
        "forecast" => forecast_cmd(cfg),
        "summarize" => summarize_cmd(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let mut spec = match &cfg.transforms {
        Some(p) => load_transform_sidecar(p)?,
        None => TransformSpec::new(),
    };
    spec.extend(cfg.transform.iter().map(|(k, v)| (k.clone(), *v)));
    let data = load_csv(cfg.data_path()?, &spec)?;
    match &cfg.order {
        Some(order) => {
            let zero_based = order
                .iter()
                .map(|k| k.checked_sub(1).ok_or(Error::NotAPermutation(data.n())))
                .collect::<Result<Vec<_>>>()?;
            permute_columns(&data, &zero_based)
        }
        None => Ok(data),
    }
}

fn sampler_settings(cfg: &RunConfig, n: usize) -> Result<SamplerSettings> {
    Ok(SamplerSettings {
        table: MixtureTable::default(),
        clamp_gamma: cfg
            .clamp
            .as_deref()
            .map(|c| GammaConfig::parse(c, n).map(|g| g.pairs))
            .transpose()?,
        clamp_sigma2_h: cfg.clamp_sigma2_h,
    })
}

struct Fitted {
    data: Dataset,
    layouts: Vec<EquationLayout>,
    priors: PriorSetup,
}

fn fit_inputs(cfg: &RunConfig) -> Result<Fitted> {
    let data = load_dataset(cfg)?;
    let s2 = residual_variances(&data.values, cfg.ar_lags)?;
    let priors = PriorSetup::new(cfg.hyper.clone(), s2, cfg.p)?;
    let layouts = build_layouts(&data.values, cfg.p)?;
    Ok(Fitted {
        data,
        layouts,
        priors,
    })
}

fn sample_posterior(cfg: &RunConfig, fit: &Fitted, stop: &AtomicBool) -> Result<PosteriorDraws> {
    let settings = sampler_settings(cfg, fit.data.n())?;
    let exec = Executor::new(cfg.workers)?;
    let mut draws = run_mcmc(&fit.layouts, &fit.priors, &settings, &cfg.mcmc()?, &exec, Some(stop))?;
    draws.meta.names = fit.data.names.clone();
    draws.meta.config_hash = Some(cfg.hash()?);
    if draws.meta.truncated {
        log::warn!("sampling interrupted; {} draws kept", draws.len());
    }
    Ok(draws)
}

/// Human-readable name of column `j` in equation `i`'s regressor row.
pub fn column_label(names: &[String], p: usize, j: usize) -> String {
    let n = names.len();
    if j == 0 {
        "const".into()
    } else if j <= n * p {
        let lag = (j - 1) / n + 1;
        format!("L{lag}.{}", names[(j - 1) % n])
    } else {
        format!("A.{}", names[j - 1 - n * p])
    }
}

fn write_indicators(path: &Path, draws: &PosteriorDraws, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variable", "gamma_beta", "gamma_alpha"])?;
    for (name, (b, a)) in names.iter().zip(draws.indicator_means()?) {
        w.write_record([
            name.clone(),
            format!("{b:.4}"),
            a.map_or_else(String::new, |a| format!("{a:.4}")),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn moments(x: &[f64]) -> (f64, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len().max(2) - 1) as f64;
    (m, v.sqrt())
}

fn write_diagnostics(path: &Path, draws: &PosteriorDraws, names: &[String], p: usize) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "mean", "sd", "inefficiency"])?;
    let mut row = |label: String, chain: Vec<f64>| -> Result<()> {
        let (m, s) = moments(&chain);
        w.write_record([
            label,
            format!("{m:.6e}"),
            format!("{s:.6e}"),
            format!("{:.3}", inefficiency_factor(&chain)),
        ])?;
        Ok(())
    };
    row("kappa1".into(), draws.kappa.column(0))?;
    row("kappa2".into(), draws.kappa.column(1))?;
    let t = draws.meta.periods;
    let mut off = 0;
    for (i, name) in names.iter().enumerate() {
        let (sb, sa) = PosteriorDraws::slots(i);
        row(format!("{name}.p_beta"), draws.probs.column(sb))?;
        if let Some(sa) = sa {
            row(format!("{name}.p_alpha"), draws.probs.column(sa))?;
        }
        row(format!("{name}.sigma2_h"), draws.sigma2_h.column(i))?;
        row(format!("{name}.h0"), draws.h0.column(i))?;
        row(format!("{name}.h_T"), draws.h.column(i * t + t - 1))?;
        let k = draws.meta.k_theta[i];
        for j in 0..k {
            let col = column_label(names, p, j);
            row(format!("{name}.theta0.{col}"), draws.theta0.column(off + j))?;
            row(format!("{name}.scale.{col}"), draws.scale_roots.column(off + j))?;
        }
        off += k;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn estimate_cmd(cfg: &RunConfig, stop: &AtomicBool) -> Result<()> {
    let fit = fit_inputs(cfg)?;
    let draws = sample_posterior(cfg, &fit, stop)?;
    let out = &cfg.output;
    draws.write_dir(&out.join("draws"), cfg.draws_format)?;
    write_indicators(&out.join("indicators.csv"), &draws, &fit.data.names)?;
    write_diagnostics(&out.join("diagnostics.csv"), &draws, &fit.data.names, cfg.p)?;
    println!("{:<12} {:>10} {:>10}", "variable", "gamma_beta", "gamma_alpha");
    for (name, (b, a)) in fit.data.names.iter().zip(draws.indicator_means()?) {
        let a = a.map_or_else(|| "-".to_string(), |a| format!("{a:.3}"));
        println!("{name:<12} {b:>10.3} {a:>10}");
    }
    Ok(())
}

fn compare_cmd(cfg: &RunConfig, stop: &AtomicBool) -> Result<()> {
    let fit = fit_inputs(cfg)?;
    let draws = match &cfg.draws_dir {
        Some(dir) => {
            let d = PosteriorDraws::read_dir(dir)?;
            let periods = fit.layouts[0].periods;
            if d.meta.n != fit.data.n() || d.meta.p != cfg.p {
                return Err(Error::DimensionMismatch {
                    expected: fit.data.n(),
                    got: d.meta.n,
                });
            }
            if d.meta.periods != periods {
                return Err(Error::DimensionMismatch {
                    expected: periods,
                    got: d.meta.periods,
                });
            }
            d
        }
        None => sample_posterior(cfg, &fit, stop)?,
    };
    let exec = Executor::new(cfg.workers)?;
    let ordinates = PosteriorOrdinates::compute(&draws, &fit.layouts, &exec)?;
    let path = cfg.output.join("compare.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["config", "log_prior", "log_posterior", "log_bf"])?;
    for text in &cfg.configs {
        let c = GammaConfig::parse(text, fit.data.n())?;
        let r = log_bayes_factor_unrestricted_vs(&c, &fit.priors.hp, &ordinates)?;
        println!("{:<12} log BF = {:.3}", r.config, r.log_bf);
        w.write_record([
            r.config.clone(),
            format!("{:.6}", r.log_prior),
            format!("{:.6}", r.log_posterior),
            format!("{:.6}", r.log_bf),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn simulate_cmd(cfg: &RunConfig) -> Result<()> {
    let pattern = match &cfg.pattern {
        Some(p) => montecarlo::parse_pattern(p)?,
        None => montecarlo::default_pattern(cfg.n),
    };
    let spec = DgpSpec {
        pattern,
        ..DgpSpec::new(cfg.n, cfg.periods, cfg.p, cfg.seed()?)
    };
    let (data, truth) = montecarlo::generate_dgp(&spec)?;
    data.write_csv(&cfg.output.join("simulated.csv"))?;
    let path = cfg.output.join("truth.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["equation", "gamma_beta", "gamma_alpha"])?;
    for (i, e) in truth.equations.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            u8::from(e.indicators.beta).to_string(),
            e.indicators.alpha.map_or_else(|| "-".into(), |a| u8::from(a).to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    if cfg.replications == 0 {
        return Ok(());
    }
    let rc = RecoveryConfig {
        hp: cfg.hyper.clone(),
        ar_lags: cfg.ar_lags,
        mcmc: cfg.mcmc()?,
    };
    let table = montecarlo::recovery_study(&spec, cfg.replications, &rc, &Executor::new(cfg.workers)?)?;
    if table.failed > 0 {
        log::warn!("{} of {} replications failed", table.failed, table.replications);
    }
    table.write_csv(&cfg.output.join("recovery.csv"))?;
    println!("{:>8} {:>6} {:>6} {:>8} {:>8}", "equation", "beta", "alpha", "f_beta", "f_alpha");
    for r in &table.rows {
        let bit = |v: Option<bool>| v.map_or("-".to_string(), |b| u8::from(b).to_string());
        let fa = r.freq_alpha.map_or("-".to_string(), |f| format!("{f:.2}"));
        println!(
            "{:>8} {:>6} {:>6} {:>8.2} {:>8}",
            r.equation,
            u8::from(r.true_beta),
            bit(r.true_alpha),
            r.freq_beta,
            fa
        );
    }
    Ok(())
}

fn forecast_start(cfg: &RunConfig, data: &Dataset) -> Result<usize> {
    match (&cfg.start_date, cfg.start) {
        (Some(d), _) => {
            let dates = data
                .dates
                .as_ref()
                .ok_or_else(|| Error::Config("start_date given but the data has no date column".into()))?;
            dates
                .iter()
                .position(|x| x == d)
                .ok_or_else(|| Error::Config(format!("date `{d}` not found in the data")))
        }
        (None, Some(s)) => Ok(s),
        (None, None) => Err(Error::Config("forecast needs `start` or `start_date`".into())),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn print_medians(rows: &[SummaryRow], horizons: &[usize]) {
    for &h in horizons {
        let sel: Vec<&SummaryRow> = rows.iter().filter(|r| r.horizon == h).collect();
        println!(
            "h={h}: median RMSFE gain {:.2}%, median ALPL gain {:.2}",
            median(sel.iter().map(|r| r.rmsfe_gain).collect()),
            median(sel.iter().map(|r| r.alpl_gain).collect())
        );
    }
}

fn forecast_cmd(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let n = data.n();
    if cfg.model == cfg.benchmark {
        return Err(Error::Config("model and benchmark must differ".into()));
    }
    let model = ForecastModel::parse(&cfg.model, n)?;
    let bench = ForecastModel::parse(&cfg.benchmark, n)?;
    let seed = cfg.seed()?;
    let fc = ForecastConfig {
        start: forecast_start(cfg, &data)?,
        horizons: cfg.horizons.clone(),
        p: cfg.p,
        ar_lags: cfg.ar_lags,
        hp: cfg.hyper.clone(),
        mcmc: McmcConfig {
            burn_in: cfg.forecast_burn_in,
            draws: cfg.forecast_draws,
            thin: cfg.thin,
            seed,
            store_theta_tilde: false,
        },
        hold_states: cfg.hold_states,
        seed,
    };
    let exec = Executor::new(cfg.workers)?;
    let (m, mf) = forecast::recursive_exercise(&data, &model, &fc, &exec)?;
    let (b, bf) = forecast::recursive_exercise(&data, &bench, &fc, &exec)?;
    if mf + bf > 0 {
        log::warn!("{mf} model and {bf} benchmark origins failed");
    }
    forecast::write_records(
        &cfg.output.join("records.csv"),
        &[(&model.label, &m), (&bench.label, &b)],
        &data.names,
    )?;
    let rows = forecast::summarize(&m, &b, &data.names, &fc.horizons)?;
    forecast::write_summary(&cfg.output.join("summary.csv"), &rows)?;
    print_medians(&rows, &fc.horizons);
    Ok(())
}

type LabeledRecords = BTreeMap<String, Vec<ForecastRecord>>;

/// Read a records file back into per-model records and the variable names.
pub fn read_records(path: &Path) -> Result<(LabeledRecords, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut names: Vec<String> = Vec::new();
    let mut out = LabeledRecords::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 7 {
            return Err(Error::RaggedCsv {
                row: row + 1,
                expected: 7,
                got: rec.len(),
            });
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].trim().parse::<f64>().map_err(|_| Error::MissingValue {
                column: k.to_string(),
                row: row + 1,
            })
        };
        let var = match names.iter().position(|n| n == &rec[3]) {
            Some(v) => v,
            None => {
                names.push(rec[3].to_string());
                names.len() - 1
            }
        };
        out.entry(rec[0].to_string()).or_default().push(ForecastRecord {
            origin: num(1)? as usize,
            horizon: num(2)? as usize,
            variable: var,
            point: num(4)?,
            log_score: num(5)?,
            realized: num(6)?,
        });
    }
    Ok((out, names))
}

fn summarize_cmd(cfg: &RunConfig) -> Result<()> {
    if cfg.inputs.is_empty() {
        return Err(Error::Config("summarize needs at least one input".into()));
    }
    let gains_path = cfg.output.join("gains.csv");
    let mut gains = csv::Writer::from_path(&gains_path)?;
    gains.write_record([
        "source",
        "variable",
        "horizon",
        "rmsfe_gain",
        "alpl_gain",
        "dm_point_p",
        "dm_density_p",
    ])?;
    let medians_path = cfg.output.join("median_gains.csv");
    let mut medians = csv::Writer::from_path(&medians_path)?;
    medians.write_record([
        "source",
        "horizon",
        "median_rmsfe_gain",
        "median_alpl_gain",
        "share_point_rejections",
        "share_density_rejections",
    ])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.4}"));
    for input in &cfg.inputs {
        let path = if input.is_dir() {
            input.join("records.csv")
        } else {
            input.clone()
        };
        let (by_model, names) = read_records(&path)?;
        let get = |label: &str| {
            by_model.get(label).ok_or_else(|| {
                Error::Config(format!("no records for model `{label}` in {}", path.display()))
            })
        };
        let (m, b) = (get(&cfg.model)?, get(&cfg.benchmark)?);
        let mut horizons: Vec<usize> = m.iter().map(|r| r.horizon).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let rows = forecast::summarize(m, b, &names, &horizons)?;
        let source = input.display().to_string();
        for r in &rows {
            gains.write_record([
                source.clone(),
                r.variable.clone(),
                r.horizon.to_string(),
                format!("{:.4}", r.rmsfe_gain),
                format!("{:.4}", r.alpl_gain),
                opt(r.dm_point_p),
                opt(r.dm_density_p),
            ])?;
        }
        println!("{source}");
        print_medians(&rows, &horizons);
        for &h in &horizons {
            let sel: Vec<&SummaryRow> = rows.iter().filter(|r| r.horizon == h).collect();
            let share = |f: &dyn Fn(&SummaryRow) -> Option<f64>| {
                sel.iter().filter(|r| f(r).is_some_and(|p| p < 0.05)).count() as f64 / sel.len() as f64
            };
            medians.write_record([
                source.clone(),
                h.to_string(),
                format!("{:.4}", median(sel.iter().map(|r| r.rmsfe_gain).collect())),
                format!("{:.4}", median(sel.iter().map(|r| r.alpl_gain).collect())),
                format!("{:.4}", share(&|r| r.dm_point_p)),
                format!("{:.4}", share(&|r| r.dm_density_p)),
            ])?;
        }
    }
    gains.flush().map_err(|e| Error::io(&gains_path, e))?;
    medians.flush().map_err(|e| Error::io(&medians_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_labels() {
        let names: Vec<String> = ["GDP", "CPI"].map(String::from).to_vec();
        assert_eq!(column_label(&names, 2, 0), "const");
        assert_eq!(column_label(&names, 2, 2), "L1.CPI");
        assert_eq!(column_label(&names, 2, 3), "L2.GDP");
        assert_eq!(column_label(&names, 2, 5), "A.GDP");
    }

    #[test]
    fn flags_override_environment() {
        let cli = Cli::try_parse_from(["hybrid-tvp", "estimate", "--seed", "4", "--lags", "1", "--set", "kappa4=20"]).unwrap();
        let cfg = resolve_config(
            &cli.command,
            [("HTVP_SEED".to_string(), "9".to_string()), ("HTVP_DRAWS".to_string(), "77".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.command, "estimate");
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.draws, 77);
        assert_eq!(cfg.p, 1);
        assert_eq!(cfg.hyper.kappa4, 20.0);
    }

    #[test]
    fn missing_data_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run_from_args(
            ["hybrid-tvp", "estimate", "--seed", "1", "-o", out.to_str().unwrap()],
            Vec::new(),
            &AtomicBool::new(false),
        );
        assert_eq!(code, 2);
        let err: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
        assert_eq!(err["kind"], "Config");
        assert!(out.join("resolved_config.json").exists());
    }
}
