//! Large-population predictions and the Monte Carlo ensembles that check them.
//!
//! The per-type variance is predicted by `h (1 - exp(-kappa2 t / N)) N` on
//! every time scale. For `t << N` it reduces to the linear line
//! `h kappa2 t`, for `t = s N` to `h (1 - exp(-kappa2 s)) N` and for `t >> N`
//! to the plateau `h N`.

use std::fmt;

use nalgebra::{Matrix5, Vector5};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::CompensatedSum;
use crate::model::{embedded_step, trajectory_rng, EmpiricalStats, InitSpec, ModelParams, Simulation};
use crate::moments::{b1_matrix, correction_matrix, MomentVectorW};
use crate::spectral::ScalingParams;

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_TOL_REL: f64 = 0.2;
pub const DEFAULT_TOL_SIGMA: f64 = 4.0;

/// Limit of the expected mean gap `x1 - x2`.
pub fn predict_l12_limit(params: &ModelParams) -> f64 {
    (params.v1() - params.v2()) / (params.alpha12() + params.alpha21())
}

/// Asymptotic speed of both expected means.
pub fn predict_mean_drift(params: &ModelParams) -> f64 {
    let (a12, a21) = (params.alpha12(), params.alpha21());
    (a12 * params.v2() + a21 * params.v1()) / (a12 + a21)
}

pub fn predict_variance(t: f64, n: usize, p: &ScalingParams) -> f64 {
    if p.is_degenerate() {
        log::warn!("v1 == v2: variance prediction is 0");
        return 0.0;
    }
    let nf = n as f64;
    // -expm1 keeps precision when kappa2 t / N is tiny
    p.h() * -(-p.kappa2() * t / nf).exp_m1() * nf
}

pub fn subcritical_line(t: f64, p: &ScalingParams) -> f64 {
    p.h() * p.kappa2() * t
}

pub fn critical_curve(s: f64, n: usize, p: &ScalingParams) -> f64 {
    p.h() * -(-p.kappa2() * s).exp_m1() * n as f64
}

pub fn supercritical_line(n: usize, p: &ScalingParams) -> f64 {
    p.h() * n as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    SubCritical,
    Critical { s: f64 },
    SuperCritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::SubCritical => f.write_str("sub-critical"),
            Regime::Critical { s } => write!(f, "critical(s={s})"),
            Regime::SuperCritical => f.write_str("super-critical"),
        }
    }
}

impl Serialize for Regime {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

pub fn classify_regime(t: f64, n: usize, kappa2: f64, epsilon: f64) -> Regime {
    let x = kappa2 * t / n as f64;
    if x < epsilon {
        Regime::SubCritical
    } else if x > 1.0 / epsilon {
        Regime::SuperCritical
    } else {
        Regime::Critical { s: t / n as f64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub regime: Regime,
    pub variance: f64,
    pub subcritical: f64,
    pub critical: f64,
    pub supercritical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimePrediction {
    pub l12_limit: f64,
    pub mean_drift_rate: f64,
    pub rows: Vec<PredictionRow>,
}

/// Predictions over the product `n_grid × t_grid`.
pub fn predict(params: &ModelParams, n_grid: &[usize], t_grid: &[f64], epsilon: f64) -> RegimePrediction {
    let p = ScalingParams::from(params);
    let mut rows = Vec::with_capacity(n_grid.len() * t_grid.len());
    for &n in n_grid {
        for &t in t_grid {
            rows.push(PredictionRow {
                t,
                n,
                regime: classify_regime(t, n, p.kappa2(), epsilon),
                variance: predict_variance(t, n, &p),
                subcritical: subcritical_line(t, &p),
                critical: critical_curve(t / n as f64, n, &p),
                supercritical: supercritical_line(n, &p),
            });
        }
    }
    RegimePrediction { l12_limit: predict_l12_limit(params), mean_drift_rate: predict_mean_drift(params), rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub t_grid: Vec<f64>,
    pub ensemble_size: usize,
    pub seed: u64,
    pub init: InitSpec,
    /// Extra observation times every `record_interval` up to the last grid time.
    pub record_interval: Option<f64>,
    pub max_events: Option<u64>,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams, t_grid: Vec<f64>, ensemble_size: usize, seed: u64) -> Self {
        ExperimentConfig {
            params,
            t_grid,
            ensemble_size,
            seed,
            init: InitSpec::zero(),
            record_interval: None,
            max_events: None,
        }
    }

    pub fn with_init(mut self, init: InitSpec) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidExperiment(msg));
        if self.ensemble_size == 0 {
            return bad("ensemble size must be at least 1".into());
        }
        if self.t_grid.is_empty() {
            return bad("time grid is empty".into());
        }
        if self.t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return bad(format!("time grid must be finite and nonnegative: {:?}", self.t_grid));
        }
        if self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("time grid must be strictly increasing: {:?}", self.t_grid));
        }
        if let Some(dt) = self.record_interval {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("record interval must be positive, got {dt}"));
            }
        }
        Ok(())
    }

    pub fn observation_times(&self) -> Vec<f64> {
        let mut times = self.t_grid.clone();
        if let (Some(dt), Some(&last)) = (self.record_interval, self.t_grid.last()) {
            let mut k = 0u64;
            loop {
                let t = k as f64 * dt;
                if t > last {
                    break;
                }
                times.push(t);
                k += 1;
            }
            times.sort_by(f64::total_cmp);
            times.dedup();
        }
        times
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub regime: Regime,
    pub mean_var1: f64,
    pub stderr1: f64,
    pub mean_var2: f64,
    pub stderr2: f64,
    pub mean_gap: f64,
    pub gap_stderr: f64,
    pub prediction: f64,
    /// Larger of the two per-type relative errors; absent when the prediction is 0.
    pub rel_err: Option<f64>,
    pub pass: bool,
    pub mean_pos1: f64,
    pub mean_pos2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub ensemble_size: usize,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

/// Mean and standard error of the mean, summed in input order.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).collect::<CompensatedSum>().value();
    (mean, (ss / (m - 1) as f64 / m as f64).sqrt())
}

fn row_passes(mean: f64, stderr: f64, prediction: f64, tol_rel: f64, tol_sigma: f64) -> bool {
    (mean - prediction).abs() <= (tol_rel * prediction).max(tol_sigma * stderr)
}

/// Run `M` independent trajectories and aggregate their statistics at every
/// observation time. Trajectories run in parallel but are aggregated in
/// index order, so the report depends only on the configuration.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<EnsembleReport> {
    cfg.validate()?;
    let times = cfg.observation_times();
    let paths: Vec<Vec<EmpiricalStats>> = (0..cfg.ensemble_size as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(cfg.seed, k);
            let state = cfg.init.realize(&cfg.params, &mut rng)?;
            let mut sim = Simulation::new(state, cfg.params, rng)?;
            if let Some(limit) = cfg.max_events {
                sim = sim.with_event_limit(limit);
            }
            sim.observe(&times)
        })
        .collect::<Result<_>>()?;

    let p = ScalingParams::from(&cfg.params);
    let n = cfg.params.n();
    let column = |j: usize, f: fn(&EmpiricalStats) -> f64| paths.iter().map(|path| f(&path[j])).collect::<Vec<_>>();
    let rows = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (mean_var1, stderr1) = mean_stderr(&column(j, |s| s.var1));
            let (mean_var2, stderr2) = mean_stderr(&column(j, |s| s.var2));
            let (mean_gap, gap_stderr) = mean_stderr(&column(j, |s| s.gap));
            let (mean_pos1, _) = mean_stderr(&column(j, |s| s.mean1));
            let (mean_pos2, _) = mean_stderr(&column(j, |s| s.mean2));
            ReportRow {
                t,
                n,
                regime: classify_regime(t, n, p.kappa2(), DEFAULT_EPSILON),
                mean_var1,
                stderr1,
                mean_var2,
                stderr2,
                mean_gap,
                gap_stderr,
                prediction: predict_variance(t, n, &p),
                rel_err: None,
                pass: false,
                mean_pos1,
                mean_pos2,
            }
        })
        .collect();
    let mut report = EnsembleReport { ensemble_size: cfg.ensemble_size, seed: cfg.seed, rows };
    compare_to_theory(&mut report, DEFAULT_TOL_REL, DEFAULT_TOL_SIGMA);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComparisonSummary {
    pub passed: usize,
    pub failed: usize,
}

impl ComparisonSummary {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }
}

/// Mark each row: both per-type means must lie within
/// `max(tol_rel * prediction, tol_sigma * stderr)` of the prediction.
pub fn compare_to_theory(report: &mut EnsembleReport, tol_rel: f64, tol_sigma: f64) -> ComparisonSummary {
    let mut summary = ComparisonSummary { passed: 0, failed: 0 };
    for row in &mut report.rows {
        let pred = row.prediction;
        row.rel_err = (pred > 0.0).then(|| {
            let e1 = (row.mean_var1 - pred).abs() / pred;
            let e2 = (row.mean_var2 - pred).abs() / pred;
            e1.max(e2)
        });
        row.pass = row_passes(row.mean_var1, row.stderr1, pred, tol_rel, tol_sigma)
            && row_passes(row.mean_var2, row.stderr2, pred, tol_rel, tol_sigma);
        if row.pass {
            summary.passed += 1;
        } else {
            summary.failed += 1;
        }
    }
    summary
}

/// Ensemble means (with standard errors) of the embedded-chain moments at a
/// given step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddedRow {
    pub n: u64,
    pub d1: (f64, f64),
    pub d2: (f64, f64),
    pub r: (f64, f64),
    pub gap: (f64, f64),
}

/// Run `m` copies of the embedded jump chain from `init`, observing the
/// moments after each step count in the nondecreasing list `steps`.
pub fn run_embedded_ensemble(
    params: &ModelParams,
    init: &InitSpec,
    steps: &[u64],
    m: usize,
    seed: u64,
) -> Result<Vec<EmbeddedRow>> {
    if m == 0 {
        return Err(Error::InvalidExperiment("ensemble size must be at least 1".into()));
    }
    if steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidExperiment(format!("step checkpoints must be nondecreasing: {steps:?}")));
    }
    let paths: Vec<Vec<EmpiricalStats>> = (0..m as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(seed, k);
            let mut state = init.realize(params, &mut rng)?;
            let mut done = 0u64;
            let mut out = Vec::with_capacity(steps.len());
            for &target in steps {
                while done < target {
                    embedded_step(&mut state, params, &mut rng)?;
                    done += 1;
                }
                out.push(state.empirical_stats());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let col = |f: fn(&EmpiricalStats) -> f64| mean_stderr(&paths.iter().map(|p| f(&p[j])).collect::<Vec<_>>());
            EmbeddedRow { n, d1: col(|s| s.var1), d2: col(|s| s.var2), r: col(|s| s.gap_sq), gap: col(|s| s.gap) }
        })
        .collect())
}

/// Expected moments of the continuous-time system at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuousMoments {
    pub t: f64,
    pub d1: f64,
    pub d2: f64,
    pub r: f64,
    pub l12: f64,
}

/// Exact expected variances, squared gap and gap at each of `times` for the
/// finite system started from moments `w0` and gap `l12_0`.
///
/// Jumps change `w` at rate `(B1 + B2) w`; drift leaves the variances alone
/// and adds `2 (v1 - v2) l12` to `d r / dt`. With `(w, l12, 1)` as state the
/// system is linear and solved by one matrix exponential per time.
pub fn expected_moments_at(params: &ModelParams, w0: &MomentVectorW, l12_0: f64, times: &[f64]) -> Vec<ContinuousMoments> {
    let b = b1_matrix(params.alpha12(), params.alpha21())
        + correction_matrix(params.alpha12() / params.n1() as f64, params.alpha21() / params.n2() as f64);
    let dv = params.v1() - params.v2();
    let mut gen = Matrix5::<f64>::zeros();
    gen.fixed_view_mut::<3, 3>(0, 0).copy_from(&b);
    gen[(2, 3)] = 2.0 * dv;
    gen[(3, 3)] = -(params.alpha12() + params.alpha21());
    gen[(3, 4)] = dv;
    let z0 = Vector5::new(w0.d1, w0.d2, w0.r, l12_0, 1.0);
    times
        .iter()
        .map(|&t| {
            let z = (gen * t).exp() * z0;
            ContinuousMoments { t, d1: z[0], d2: z[1], r: z[2], l12: z[3] }
        })
        .collect()
}

/// Least-squares slope of `ys` against `xs`.
pub fn linear_fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_until, InitDist};
    use proptest::prelude::*;

    fn canonical(n: usize) -> ModelParams {
        ModelParams::from_fraction(1.0, 1.0, 0.0, 1.0, n, 0.5).unwrap()
    }

    #[test]
    fn limits_by_substitution() {
        assert_eq!(predict_l12_limit(&canonical(10)), -0.5);
        assert_eq!(predict_l12_limit(&ModelParams::new(1.0, 1.0, 0.3, 0.3, 2, 2).unwrap()), 0.0);
        assert_eq!(predict_l12_limit(&ModelParams::new(3.0, 1.0, 0.0, 2.0, 2, 2).unwrap()), -0.5);
        assert_eq!(predict_mean_drift(&canonical(10)), 0.5);
        assert_eq!(predict_mean_drift(&ModelParams::new(1.0, 3.0, 0.7, 0.7, 2, 2).unwrap()), 0.7);
        let d = predict_mean_drift(&ModelParams::new(2.0, 1.0, 0.0, 1.0, 2, 2).unwrap());
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn variance_prediction_by_substitution() {
        let p = ScalingParams::canonical();
        let v = predict_variance(200.0, 200, &p);
        assert!((v - 0.125 * (1.0 - (-2.0f64).exp()) * 200.0).abs() < 1e-12);
        assert!((v - 21.617).abs() < 1e-3);
        assert_eq!(predict_variance(0.0, 200, &p), 0.0);
        let v5 = predict_variance(5.0, 200, &p);
        assert!((v5 - 1.219).abs() < 1e-3);
        assert!((v5 / subcritical_line(5.0, &p) - 1.0).abs() < 0.025);
        let flat = ScalingParams::new(1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        assert_eq!(predict_variance(10.0, 100, &flat), 0.0);
    }

    #[test]
    fn variance_prediction_limits() {
        let p = ScalingParams::canonical();
        // kappa2 t / N = 1e-3
        let n = 20_000;
        let t = 1e-3 * n as f64 / p.kappa2();
        assert!((predict_variance(t, n, &p) / subcritical_line(t, &p) - 1.0).abs() < 0.01);
        let t = 7.0 * 100.0 / p.kappa2();
        assert!((predict_variance(t, 100, &p) / supercritical_line(100, &p) - 1.0).abs() < 0.01);
        assert!((predict_variance(150.0, 300, &p) - critical_curve(0.5, 300, &p)).abs() < 1e-12);
    }

    #[test]
    fn regime_labels() {
        assert_eq!(classify_regime(1.0, 10_000, 2.0, 0.01), Regime::SubCritical);
        assert_eq!(classify_regime(500.0, 500, 2.0, 0.01), Regime::Critical { s: 1.0 });
        assert_eq!(classify_regime(100.0 * 50.0, 50, 2.0, 0.01), Regime::SuperCritical);
        assert_eq!(Regime::Critical { s: 0.25 }.to_string(), "critical(s=0.25)");
        assert_eq!(serde_json::to_string(&Regime::SubCritical).unwrap(), "\"sub-critical\"");
    }

    #[test]
    fn single_trajectory_reproduces_simulation() {
        let params = canonical(20);
        let init = InitSpec { type1: "uniform:-1,1".parse().unwrap(), type2: "gaussian:0,2".parse().unwrap() };
        let cfg = ExperimentConfig::new(params, vec![3.0], 1, 42).with_init(init.clone());
        let report = run_ensemble(&cfg).unwrap();
        let mut rng = trajectory_rng(42, 0);
        let state = init.realize(&params, &mut rng).unwrap();
        let (end, _) = simulate_until(state, &params, &mut rng, 3.0, None).unwrap();
        let s = end.empirical_stats();
        let row = &report.rows[0];
        assert_eq!((row.mean_var1, row.mean_var2, row.mean_gap), (s.var1, s.var2, s.gap));
        assert_eq!((row.stderr1, row.stderr2, row.gap_stderr), (0.0, 0.0, 0.0));
    }

    #[test]
    fn absorbing_configuration_has_zero_variance() {
        let params = ModelParams::new(1.0, 2.0, 0.0, 0.0, 6, 4).unwrap();
        let report = run_ensemble(&ExperimentConfig::new(params, vec![0.0, 1.0, 5.0], 8, 3)).unwrap();
        for row in &report.rows {
            assert_eq!((row.mean_var1, row.mean_var2, row.prediction), (0.0, 0.0, 0.0));
            assert!(row.pass && row.rel_err.is_none());
        }
    }

    #[test]
    fn report_is_reproducible_across_thread_counts() {
        let cfg = ExperimentConfig::new(canonical(16), vec![1.0, 4.0, 9.0], 24, 11);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_ensemble(&cfg));
        let parallel = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| run_ensemble(&cfg));
        assert_eq!(serial.unwrap(), parallel.unwrap());
    }

    #[test]
    fn record_interval_adds_observation_times() {
        let mut cfg = ExperimentConfig::new(canonical(4), vec![1.5, 3.0], 2, 0);
        cfg.record_interval = Some(1.0);
        assert_eq!(cfg.observation_times(), vec![0.0, 1.0, 1.5, 2.0, 3.0]);
        assert_eq!(run_ensemble(&cfg).unwrap().rows.len(), 5);
    }

    #[test]
    fn invalid_experiments() {
        let p = canonical(4);
        assert!(run_ensemble(&ExperimentConfig::new(p, vec![1.0], 0, 0)).is_err());
        assert!(run_ensemble(&ExperimentConfig::new(p, vec![2.0, 1.0], 1, 0)).is_err());
        assert!(run_ensemble(&ExperimentConfig::new(p, vec![], 1, 0)).is_err());
        let mut cfg = ExperimentConfig::new(p, vec![1e6], 1, 0);
        cfg.max_events = Some(10);
        assert!(matches!(run_ensemble(&cfg), Err(Error::EventLimit { .. })));
    }

    fn report_with(mean: f64, stderr: f64, prediction: f64) -> EnsembleReport {
        let row = ReportRow {
            t: 1.0,
            n: 10,
            regime: Regime::SubCritical,
            mean_var1: mean,
            stderr1: stderr,
            mean_var2: mean,
            stderr2: stderr,
            mean_gap: 0.0,
            gap_stderr: 0.0,
            prediction,
            rel_err: None,
            pass: false,
            mean_pos1: 0.0,
            mean_pos2: 0.0,
        };
        EnsembleReport { ensemble_size: 1, seed: 0, rows: vec![row] }
    }

    #[test]
    fn comparison_thresholds() {
        let mut r = report_with(0.3, 0.1, 0.0);
        assert!(compare_to_theory(&mut r, 0.5, 4.0).all_pass());
        assert!(!compare_to_theory(&mut r, 0.5, 2.0).all_pass());
        let mut r = report_with(2.0, 0.01, 2.0);
        assert!(compare_to_theory(&mut r, 1e-9, 1e-9).all_pass());
        assert_eq!(r.rows[0].rel_err, Some(0.0));
        let mut r = report_with(3.0, 0.1, 2.0);
        let s = compare_to_theory(&mut r, 0.0, 4.0);
        assert_eq!((s.passed, s.failed), (0, 1));
    }

    #[test]
    fn stderr_of_mean() {
        assert_eq!(mean_stderr(&[5.0]), (5.0, 0.0));
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stderr_shrinks_with_ensemble_size() {
        let p = canonical(20);
        let se = |m| run_ensemble(&ExperimentConfig::new(p, vec![5.0], m, 5)).unwrap().rows[0].stderr1;
        let ratio = se(100) / se(400);
        assert!((1.5..2.7).contains(&ratio), "{ratio}");
    }

    #[test]
    fn embedded_ensemble_initial_row() {
        let p = ModelParams::new(1.0, 1.0, 0.0, 1.0, 3, 3).unwrap();
        let rows = run_embedded_ensemble(&p, &InitSpec::constant(0.0, 1.0), &[0, 0, 2], 5, 1).unwrap();
        assert_eq!(rows[0].gap, (-1.0, 0.0));
        assert_eq!(rows[0].r, (1.0, 0.0));
        assert!(run_embedded_ensemble(&p, &InitSpec::zero(), &[3, 1], 5, 1).is_err());
    }

    #[test]
    fn continuous_moments_match_simulation() {
        let p = ModelParams::new(1.0, 2.0, 0.0, 1.0, 4, 6).unwrap();
        let init = InitSpec { type1: "list:0,1,0,1".parse().unwrap(), type2: InitDist::Constant(1.0) };
        let state0 = init.realize(&p, &mut trajectory_rng(0, 0)).unwrap();
        let times = [0.0, 0.3, 2.0];
        let exact = expected_moments_at(&p, &MomentVectorW::from_state(&state0), -0.5, &times);
        assert!((exact[0].d1 - 0.25).abs() < 1e-14 && (exact[0].r - 0.25).abs() < 1e-14);
        let m = 20_000;
        let paths: Vec<Vec<EmpiricalStats>> = (0..m)
            .map(|k| Simulation::new(state0.clone(), p, trajectory_rng(9, k)).unwrap().observe(&times).unwrap())
            .collect();
        for (j, e) in exact.iter().enumerate().skip(1) {
            let col = |f: fn(&EmpiricalStats) -> f64| mean_stderr(&paths.iter().map(|q| f(&q[j])).collect::<Vec<_>>());
            for ((mean, se), x, name) in [
                (col(|s| s.var1), e.d1, "d1"),
                (col(|s| s.var2), e.d2, "d2"),
                (col(|s| s.gap_sq), e.r, "r"),
                (col(|s| s.gap), e.l12, "l12"),
            ] {
                assert!((mean - x).abs() < 4.0 * se, "t={} {name}: {mean} vs {x} (se {se})", times[j]);
            }
        }
    }

    #[test]
    fn continuous_moments_long_time_limits() {
        let p = ModelParams::new(1.0, 1.0, 0.0, 1.0, 50, 50).unwrap();
        let e = expected_moments_at(&p, &MomentVectorW::default(), 0.0, &[500.0, 5000.0]);
        assert!((e[1].l12 - predict_l12_limit(&p)).abs() < 1e-12);
        // plateau of the finite system approaches hN up to O(1) corrections
        let hn = supercritical_line(100, &ScalingParams::from(&p));
        assert!((e[1].d1 / hn - 1.0).abs() < 0.05, "{} vs {hn}", e[1].d1);
        assert!(e[1].d1 >= e[0].d1);
    }

    #[test]
    fn slope_of_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        assert!((linear_fit_slope(&xs, &ys) - 2.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn prediction_nonnegative_and_monotone(t in 0.0..1e4f64, dt in 0.0..1e3f64, n in 2usize..100_000,
                                               a12 in 0.05..5.0f64, a21 in 0.05..5.0f64, c1 in 0.05..0.95f64) {
            let p = ScalingParams::new(a12, a21, 0.0, 1.0, c1).unwrap();
            let v = predict_variance(t, n, &p);
            prop_assert!(v >= 0.0);
            prop_assert!(predict_variance(t + dt, n, &p) >= v);
            prop_assert!(v <= supercritical_line(n, &p) * (1.0 + 1e-12));
        }
    }
}
