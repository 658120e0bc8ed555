//! Configuration and serialization behind the `timesync` binary.
//!
//! # Config file grammar
//!
//! ```text
//! file    := line*
//! line    := blank | comment | section | entry
//! comment := '#' any*
//! section := '[' ("model" | "experiment" | "output") ']'
//! entry   := key '=' value        (inside a section)
//! ```
//!
//! Whitespace around keys and values is ignored, and a `#` after a value starts
//! a comment. Every key belongs to exactly one section; see [`KEYS`]. Command
//! line flags override file values. The population is given either as
//! `n1`, `n2` or as `n`, `c1` (with `n1 = floor(c1 n)`), never both.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{trajectory_rng, InitDist, InitSpec, ModelParams};
use crate::moments::{Closure, MomentSystem};
use crate::regimes::{compare_to_theory, predict, run_ensemble, ExperimentConfig};
use crate::spectral::{ScalingParams, SpectralSummary};

/// `(section, key, default, units, description)` for every config key.
pub const KEYS: &[(&str, &str, &str, &str, &str)] = &[
    ("model", "alpha12", "1", "1/time", "jump rate of a type-1 particle onto type 2"),
    ("model", "alpha21", "1", "1/time", "jump rate of a type-2 particle onto type 1"),
    ("model", "v1", "0", "space/time", "drift velocity of type 1"),
    ("model", "v2", "1", "space/time", "drift velocity of type 2"),
    ("model", "n", "100", "particles", "total population (with c1)"),
    ("model", "c1", "0.5", "fraction", "type-1 fraction, n1 = floor(c1 n)"),
    ("model", "n1", "-", "particles", "type-1 count (with n2, instead of n and c1)"),
    ("model", "n2", "-", "particles", "type-2 count"),
    ("experiment", "seed", "0", "-", "master seed; trajectory k uses ChaCha stream k"),
    ("experiment", "ensemble", "100", "trajectories", "Monte Carlo ensemble size M"),
    ("experiment", "t_grid", "10", "time", "comma-separated increasing observation times"),
    ("experiment", "record_interval", "-", "time", "extra observations every interval up to the last grid time"),
    ("experiment", "init", "zero", "space", "initial law for both types: zero | const:X | uniform:LO,HI | gaussian:M,SD | list:X1,.."),
    ("experiment", "init1", "-", "space", "initial law of type 1 (overrides init)"),
    ("experiment", "init2", "-", "space", "initial law of type 2 (overrides init)"),
    ("experiment", "max_events", "0", "jumps", "per-trajectory jump limit, 0 = unlimited"),
    ("experiment", "steps", "100", "jumps", "embedded-step horizon of the moments table"),
    ("experiment", "record_every", "1", "jumps", "row spacing of the moments table"),
    ("experiment", "closure", "asymptotic", "-", "moment closure: asymptotic | exact"),
    ("experiment", "tol_rel", "0.2", "fraction", "relative tolerance of verify"),
    ("experiment", "tol_sigma", "4", "std errors", "statistical tolerance of verify"),
    ("experiment", "epsilon", "0.01", "-", "regime classification threshold"),
    ("output", "out", "-", "path", "output file, '-' for stdout"),
    ("output", "format", "csv", "-", "csv | json"),
    ("output", "verbosity", "0", "level", "0 warn, 1 info, 2 debug"),
];

pub const THREADS_ENV: &str = "TIMESYNC_THREADS";

pub const SIMULATE_HEADER: &str =
    "t,N,regime,mean_var1,stderr1,mean_var2,stderr2,mean_gap,gap_stderr,prediction,rel_err,pass";

/// Help text listing every key with its default and units.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys ([section] key = value; flags use --key with '-' for '_'):\n");
    let mut section = "";
    for (sec, key, default, units, desc) in KEYS {
        if *sec != section {
            let _ = writeln!(s, "  [{sec}]");
            section = sec;
        }
        let _ = writeln!(s, "    {key:<16} default {default:<11} [{units}]  {desc}");
    }
    let _ = writeln!(
        s,
        "\nEnvironment: {THREADS_ENV} = worker threads for ensembles (default: number of CPUs)."
    );
    s.push_str("Exit codes: 0 success, 1 verification or runtime failure, 2 configuration error.\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Moments,
    Spectral,
    Predict,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("expected csv or json, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag,
}

impl Origin {
    fn error(self, msg: String) -> Error {
        match self {
            Origin::Line(line) => Error::Config { line, msg },
            Origin::Flag => Error::ConfigFlag(msg),
        }
    }
}

/// Raw key/value settings, before typing and validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<&'static str, (String, Origin)>,
}

fn lookup_key(key: &str) -> Option<(&'static str, &'static str)> {
    KEYS.iter().find(|k| k.1 == key).map(|k| (k.0, k.1))
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        let mut section: Option<&str> = None;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let err = |msg: String| Error::Config { line: lineno, msg };
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                section = Some(match name {
                    "model" => "model",
                    "experiment" => "experiment",
                    "output" => "output",
                    _ => return Err(err(format!("unknown section `[{name}]`"))),
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            let Some((key_section, key)) = lookup_key(key) else {
                return Err(err(format!("unknown key `{key}`")));
            };
            match section {
                None => return Err(err(format!("key `{key}` appears before any section"))),
                Some(s) if s != key_section => {
                    return Err(err(format!("key `{key}` belongs in [{key_section}], found in [{s}]")))
                }
                _ => {}
            }
            if let Some((_, Origin::Line(prev))) = raw.values.get(key) {
                return Err(err(format!("duplicate key `{key}` (first set on line {prev})")));
            }
            raw.values.insert(key, (value.to_string(), Origin::Line(lineno)));
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigFlag(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Set a value from the command line, replacing any file value.
    pub fn set_flag(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let (_, key) = lookup_key(key).ok_or_else(|| Error::ConfigFlag(format!("unknown key `{key}`")))?;
        self.values.insert(key, (value.into(), Origin::Flag));
        Ok(())
    }

    fn origin(&self, key: &str) -> Option<Origin> {
        self.values.get(key).map(|v| v.1)
    }

    fn get<T: FromStr>(&self, key: &'static str, expects: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, origin)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| origin.error(format!("key `{key}` expects {expects}, got `{v}`: {e}"))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &'static str, expects: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key, expects)?.unwrap_or(default))
    }
}

/// Validated configuration of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub params: ModelParams,
    pub c1: f64,
    pub experiment: ExperimentConfig,
    pub steps: u64,
    pub record_every: u64,
    pub closure: Closure,
    pub tol_rel: f64,
    pub tol_sigma: f64,
    pub epsilon: f64,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub verbosity: u8,
}

fn parse_grid(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"))).collect()
}

struct Grid(Vec<f64>);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_grid(s).map(Grid)
    }
}

/// Type and cross-check `raw` into a [`RunConfig`].
pub fn build_config(command: Command, raw: &RawConfig) -> Result<RunConfig> {
    let real = "a real number";
    let count = "a nonnegative integer";
    let alpha12 = raw.get_or("alpha12", real, 1.0)?;
    let alpha21 = raw.get_or("alpha21", real, 1.0)?;
    let v1 = raw.get_or("v1", real, 0.0)?;
    let v2 = raw.get_or("v2", real, 1.0)?;

    let pair_key = ["n1", "n2"].into_iter().find(|k| raw.origin(k).is_some());
    let frac_key = ["n", "c1"].into_iter().find(|k| raw.origin(k).is_some());
    let model_err = |fallback: Option<Origin>, e: Error| match e {
        Error::InvalidParam { name, reason } => raw
            .origin(name)
            .or(fallback)
            .unwrap_or(Origin::Flag)
            .error(format!("invalid `{name}`: {reason}")),
        other => other,
    };
    let (params, c1) = match (pair_key, frac_key) {
        (Some(a), Some(b)) => {
            let origin = raw.origin(b).or(raw.origin(a)).unwrap();
            return Err(origin.error(format!(
                "population given twice: `{a}` (n1/n2 form) and `{b}` (n/c1 form); use one form"
            )));
        }
        (Some(_), None) => {
            let n1: usize = raw.get("n1", count)?.ok_or_else(|| Error::ConfigFlag("`n1` requires `n2`".into()))?;
            let n2: usize = raw.get("n2", count)?.ok_or_else(|| Error::ConfigFlag("`n2` requires `n1`".into()))?;
            let p = ModelParams::new(alpha12, alpha21, v1, v2, n1, n2).map_err(|e| model_err(raw.origin("n1"), e))?;
            (p, p.c1())
        }
        _ => {
            let n: usize = raw.get_or("n", count, 100)?;
            let c1: f64 = raw.get_or("c1", real, 0.5)?;
            let p = ModelParams::from_fraction(alpha12, alpha21, v1, v2, n, c1)
                .map_err(|e| model_err(raw.origin("n").or(raw.origin("c1")), e))?;
            (p, c1)
        }
    };

    let init_dist = |key: &'static str| raw.get::<InitDist>(key, "an initial law");
    let both = init_dist("init")?.unwrap_or_default();
    let init = InitSpec {
        type1: init_dist("init1")?.unwrap_or_else(|| both.clone()),
        type2: init_dist("init2")?.unwrap_or(both),
    };
    let t_grid = raw.get_or("t_grid", "comma-separated times", Grid(vec![10.0]))?.0;
    let max_events: u64 = raw.get_or("max_events", count, 0)?;
    let experiment = ExperimentConfig {
        params,
        t_grid,
        ensemble_size: raw.get_or("ensemble", count, 100)?,
        seed: raw.get_or("seed", "an unsigned 64-bit integer", 0)?,
        init,
        record_interval: raw.get("record_interval", real)?,
        max_events: (max_events > 0).then_some(max_events),
    };
    if let Err(Error::InvalidExperiment(msg)) = experiment.validate() {
        let key = if msg.contains("ensemble") {
            "ensemble"
        } else if msg.contains("record") {
            "record_interval"
        } else {
            "t_grid"
        };
        return Err(raw.origin(key).unwrap_or(Origin::Flag).error(msg));
    }

    let cfg = RunConfig {
        command,
        params,
        c1,
        experiment,
        steps: raw.get_or("steps", count, 100)?,
        record_every: raw.get_or("record_every", count, 1)?,
        closure: raw.get_or("closure", "asymptotic or exact", Closure::Asymptotic)?,
        tol_rel: raw.get_or("tol_rel", real, 0.2)?,
        tol_sigma: raw.get_or("tol_sigma", real, 4.0)?,
        epsilon: raw.get_or("epsilon", real, 0.01)?,
        output_path: raw.get::<String>("out", "a path")?.filter(|p| p != "-").map(PathBuf::from),
        format: raw.get_or("format", "csv or json", Format::Csv)?,
        verbosity: raw.get_or("verbosity", count, 0)?,
    };
    for (key, value) in [("tol_rel", cfg.tol_rel), ("tol_sigma", cfg.tol_sigma)] {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(raw.origin(key).unwrap().error(format!("key `{key}` must be finite and >= 0, got {value}")));
        }
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
        return Err(raw.origin("epsilon").unwrap().error(format!("key `epsilon` must lie in (0, 1), got {}", cfg.epsilon)));
    }
    Ok(cfg)
}

/// Result of running a command: serialized output and overall success.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub output: String,
    pub success: bool,
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| Error::Io(e.to_string()))
}

/// Name/value pairs of a spectral summary, arrays flattened as `name_1..3`.
pub fn spectral_quantities(s: &SpectralSummary) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let arrays = [("lambda", s.lambda), ("e1", s.e1), ("e2", s.e2), ("e3", s.e3), ("phi", s.phi), ("psi", s.psi)];
    for (name, xs) in arrays {
        out.extend(xs.iter().enumerate().map(|(i, x)| (format!("{name}_{}", i + 1), *x)));
    }
    for (name, x) in [("z", s.z), ("kappa2", s.kappa2), ("delta", s.delta), ("b2", s.b2), ("b1", s.b1), ("b3", s.b3), ("h", s.h)] {
        out.push((name.to_string(), x));
    }
    out.extend(s.xi.iter().enumerate().map(|(i, x)| (format!("xi_{}", i + 1), *x)));
    out
}

pub fn cmd_spectral(cfg: &RunConfig) -> Result<Outcome> {
    let p = &cfg.params;
    let sp = ScalingParams::new(p.alpha12(), p.alpha21(), p.v1(), p.v2(), cfg.c1)?;
    let summary = SpectralSummary::new(&sp);
    let output = match cfg.format {
        Format::Json => json(&summary)?,
        Format::Csv => {
            let mut s = String::from("quantity,value\n");
            for (name, v) in spectral_quantities(&summary) {
                let _ = writeln!(s, "{name},{v}");
            }
            s
        }
    };
    Ok(Outcome { output, success: true })
}

pub fn cmd_moments(cfg: &RunConfig) -> Result<Outcome> {
    let mut rng = trajectory_rng(cfg.experiment.seed, 0);
    let init = cfg.experiment.init.realize(&cfg.params, &mut rng)?;
    let sys = MomentSystem::new(&cfg.params, cfg.closure);
    let rows = sys.table(&init, cfg.steps, cfg.record_every);
    let output = match cfg.format {
        Format::Json => json(&rows)?,
        Format::Csv => {
            let mut s = String::from("n,mu1,mu2,l12,S,d1,d2,r\n");
            for r in &rows {
                let _ = writeln!(s, "{},{},{},{},{},{},{},{}", r.n, r.mu1, r.mu2, r.l12, r.s, r.d1, r.d2, r.r);
            }
            s
        }
    };
    Ok(Outcome { output, success: true })
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<Outcome> {
    let pred = predict(&cfg.params, &[cfg.params.n()], &cfg.experiment.t_grid, cfg.epsilon);
    let output = match cfg.format {
        Format::Json => json(&pred)?,
        Format::Csv => {
            let mut s = String::from("t,N,regime,variance,subcritical,critical,supercritical,l12_limit,mean_drift\n");
            for r in &pred.rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    r.t, r.n, r.regime, r.variance, r.subcritical, r.critical, r.supercritical, pred.l12_limit, pred.mean_drift_rate
                );
            }
            s
        }
    };
    Ok(Outcome { output, success: true })
}

/// Ensemble run shared by `simulate` and `verify`; only `verify` turns
/// failing rows into an unsuccessful outcome.
pub fn cmd_ensemble(cfg: &RunConfig) -> Result<Outcome> {
    let mut report = run_ensemble(&cfg.experiment)?;
    let summary = compare_to_theory(&mut report, cfg.tol_rel, cfg.tol_sigma);
    let output = match cfg.format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let mut s = String::from(SIMULATE_HEADER);
            s.push('\n');
            for r in &report.rows {
                let rel = r.rel_err.map(|x| x.to_string()).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.t, r.n, r.regime, r.mean_var1, r.stderr1, r.mean_var2, r.stderr2, r.mean_gap, r.gap_stderr, r.prediction, rel, r.pass
                );
            }
            s
        }
    };
    let success = cfg.command != Command::Verify || summary.all_pass();
    if !summary.all_pass() {
        log::info!("{} of {} rows outside tolerance", summary.failed, summary.failed + summary.passed);
    }
    Ok(Outcome { output, success })
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.command {
        Command::Simulate | Command::Verify => cmd_ensemble(cfg),
        Command::Moments => cmd_moments(cfg),
        Command::Spectral => cmd_spectral(cfg),
        Command::Predict => cmd_predict(cfg),
    }
}

pub fn write_output(cfg: &RunConfig, outcome: &Outcome) -> Result<()> {
    match &cfg.output_path {
        Some(path) => std::fs::write(path, &outcome.output)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(outcome.output.as_bytes())?;
        }
    }
    Ok(())
}

/// True for errors caused by the configuration rather than the run.
pub fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config { .. } | Error::ConfigFlag(_) | Error::InvalidParam { .. } | Error::InvalidExperiment(_))
}
