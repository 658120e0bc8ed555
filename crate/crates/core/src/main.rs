use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use timesync::cli::{self, Command, RawConfig, THREADS_ENV};

#[derive(Parser)]
#[command(name = "timesync", version, about = "Two-type time-synchronization particle system", after_help = cli::keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte Carlo ensemble and report variances against the prediction
    Simulate(Opts),
    /// Tabulate the exact moment recursion of the embedded chain
    Moments(Opts),
    /// Print the spectral constants of the recursion
    Spectral(Opts),
    /// Print variance predictions over the time grid
    Predict(Opts),
    /// Like simulate, exiting with 1 unless every row is within tolerance
    Verify(Opts),
}

#[derive(Args)]
#[command(after_help = cli::keys_help())]
struct Opts {
    /// Config file ([section] key = value)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<String>,
    /// Output path, '-' for stdout [default: -]
    #[arg(long)]
    out: Option<String>,
    /// csv | json [default: csv]
    #[arg(long)]
    format: Option<String>,
    /// Ensemble size M [default: 100]
    #[arg(long)]
    ensemble: Option<String>,
    /// Comma-separated observation times [default: 10]
    #[arg(long)]
    t_grid: Option<String>,
    /// Total population N [default: 100]
    #[arg(long)]
    n: Option<String>,
    /// Type-1 fraction [default: 0.5]
    #[arg(long)]
    c1: Option<String>,
    /// Type-1 count (instead of --n/--c1)
    #[arg(long)]
    n1: Option<String>,
    /// Type-2 count (instead of --n/--c1)
    #[arg(long)]
    n2: Option<String>,
    /// Jump rate type 1 -> type 2, 1/time [default: 1]
    #[arg(long)]
    alpha12: Option<String>,
    /// Jump rate type 2 -> type 1, 1/time [default: 1]
    #[arg(long)]
    alpha21: Option<String>,
    /// Velocity of type 1 [default: 0]
    #[arg(long)]
    v1: Option<String>,
    /// Velocity of type 2 [default: 1]
    #[arg(long)]
    v2: Option<String>,
    /// Initial law of both types [default: zero]
    #[arg(long)]
    init: Option<String>,
    /// Initial law of type 1
    #[arg(long)]
    init1: Option<String>,
    /// Initial law of type 2
    #[arg(long)]
    init2: Option<String>,
    /// Extra observation interval
    #[arg(long)]
    record_interval: Option<String>,
    /// Per-trajectory jump limit, 0 = unlimited [default: 0]
    #[arg(long)]
    max_events: Option<String>,
    /// Moments table horizon in jumps [default: 100]
    #[arg(long)]
    steps: Option<String>,
    /// Moments table row spacing [default: 1]
    #[arg(long)]
    record_every: Option<String>,
    /// asymptotic | exact [default: asymptotic]
    #[arg(long)]
    closure: Option<String>,
    /// Relative tolerance [default: 0.2]
    #[arg(long)]
    tol_rel: Option<String>,
    /// Tolerance in standard errors [default: 4]
    #[arg(long)]
    tol_sigma: Option<String>,
    /// Regime threshold [default: 0.01]
    #[arg(long)]
    epsilon: Option<String>,
    /// Increase log verbosity
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Opts {
    fn flags(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("seed", &self.seed),
            ("out", &self.out),
            ("format", &self.format),
            ("ensemble", &self.ensemble),
            ("t_grid", &self.t_grid),
            ("n", &self.n),
            ("c1", &self.c1),
            ("n1", &self.n1),
            ("n2", &self.n2),
            ("alpha12", &self.alpha12),
            ("alpha21", &self.alpha21),
            ("v1", &self.v1),
            ("v2", &self.v2),
            ("init", &self.init),
            ("init1", &self.init1),
            ("init2", &self.init2),
            ("record_interval", &self.record_interval),
            ("max_events", &self.max_events),
            ("steps", &self.steps),
            ("record_every", &self.record_every),
            ("closure", &self.closure),
            ("tol_rel", &self.tol_rel),
            ("tol_sigma", &self.tol_sigma),
            ("epsilon", &self.epsilon),
        ]
    }
}

fn configure(command: Command, opts: &Opts) -> timesync::Result<cli::RunConfig> {
    let mut raw = match &opts.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    for (key, value) in opts.flags() {
        if let Some(v) = value {
            raw.set_flag(key, v.clone())?;
        }
    }
    if opts.verbose > 0 {
        raw.set_flag("verbosity", opts.verbose.to_string())?;
    }
    cli::build_config(command, &raw)
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err(format!("{THREADS_ENV} must be a positive integer, got `{v}`"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (command, opts) = match &args.command {
        Cmd::Simulate(o) => (Command::Simulate, o),
        Cmd::Moments(o) => (Command::Moments, o),
        Cmd::Spectral(o) => (Command::Spectral, o),
        Cmd::Predict(o) => (Command::Predict, o),
        Cmd::Verify(o) => (Command::Verify, o),
    };
    let cfg = match configure(command, opts) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let level = match cfg.verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli::run(&cfg).and_then(|outcome| cli::write_output(&cfg, &outcome).map(|_| outcome.success)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if cli::is_config_error(&e) { 2 } else { 1 })
        }
    }
}
