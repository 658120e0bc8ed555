//! Particle system and its exact event-driven dynamics.
//!
//! Between jumps every type-`i` particle moves with velocity `v_i`, so the
//! drift of a whole type is a single shift. [`SystemState`] stores each type
//! as coordinates relative to a per-type drift offset, which makes
//! [`advance_drift`] O(1) while jumps and statistics stay exact.
//!
//! # Random streams
//!
//! All randomness comes from [`SimRng`] (ChaCha with 8 rounds). Trajectory `k`
//! of an experiment with master seed `s` uses [`trajectory_rng`]`(s, k)`: the
//! generator is seeded with `s` through `SeedableRng::seed_from_u64` and then
//! switched to ChaCha stream number `k`. Streams never overlap, so ensembles
//! are reproducible regardless of how trajectories are scheduled.
//!
//! Draw order per jump is fixed: exponential waiting time, uniform `[0, 1)`
//! for the jumper type, jumper index, target index.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SimRng = ChaCha8Rng;

/// Generator for trajectory `index` of an experiment seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParticleType {
    One,
    Two,
}

impl ParticleType {
    pub fn other(self) -> Self {
        match self {
            ParticleType::One => ParticleType::Two,
            ParticleType::Two => ParticleType::One,
        }
    }

    fn slot(self) -> usize {
        match self {
            ParticleType::One => 0,
            ParticleType::Two => 1,
        }
    }

    pub fn label(self) -> u8 {
        self.slot() as u8 + 1
    }
}

/// Jump rates, velocities and population sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    alpha12: f64,
    alpha21: f64,
    v1: f64,
    v2: f64,
    n1: usize,
    n2: usize,
}

impl ModelParams {
    pub fn new(alpha12: f64, alpha21: f64, v1: f64, v2: f64, n1: usize, n2: usize) -> Result<Self> {
        for (name, a) in [("alpha12", alpha12), ("alpha21", alpha21)] {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::InvalidParam { name, reason: format!("rate must be finite and > 0, got {a}") });
            }
        }
        for (name, v) in [("v1", v1), ("v2", v2)] {
            if !v.is_finite() {
                return Err(Error::InvalidParam { name, reason: format!("velocity must be finite, got {v}") });
            }
        }
        for (name, n) in [("n1", n1), ("n2", n2)] {
            if n == 0 {
                return Err(Error::InvalidParam { name, reason: "population must be at least 1".into() });
            }
        }
        let p = ModelParams { alpha12, alpha21, v1, v2, n1, n2 };
        if p.is_degenerate() {
            log::warn!("v1 == v2 = {v1}: degenerate model, variances do not grow");
        }
        Ok(p)
    }

    /// Total size `n` split as `n1 = floor(c1 * n)`, `n2 = n - n1`.
    pub fn from_fraction(alpha12: f64, alpha21: f64, v1: f64, v2: f64, n: usize, c1: f64) -> Result<Self> {
        let (n1, n2) = split_population(n, c1)?;
        Self::new(alpha12, alpha21, v1, v2, n1, n2)
    }

    pub fn alpha12(&self) -> f64 {
        self.alpha12
    }
    pub fn alpha21(&self) -> f64 {
        self.alpha21
    }
    pub fn v1(&self) -> f64 {
        self.v1
    }
    pub fn v2(&self) -> f64 {
        self.v2
    }
    pub fn n1(&self) -> usize {
        self.n1
    }
    pub fn n2(&self) -> usize {
        self.n2
    }
    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    /// Fraction of type-1 particles.
    pub fn c1(&self) -> f64 {
        self.n1 as f64 / self.n() as f64
    }

    pub fn is_degenerate(&self) -> bool {
        self.v1 == self.v2
    }

    pub fn velocity(&self, ty: ParticleType) -> f64 {
        match ty {
            ParticleType::One => self.v1,
            ParticleType::Two => self.v2,
        }
    }

    /// Rate at which a single particle of type `ty` jumps to the other type.
    pub fn rate(&self, ty: ParticleType) -> f64 {
        match ty {
            ParticleType::One => self.alpha12,
            ParticleType::Two => self.alpha21,
        }
    }

    pub fn count(&self, ty: ParticleType) -> usize {
        match ty {
            ParticleType::One => self.n1,
            ParticleType::Two => self.n2,
        }
    }

    pub fn total_jump_rate(&self) -> f64 {
        total_jump_rate(self)
    }

    /// Mean waiting time between consecutive jumps.
    pub fn gamma(&self) -> f64 {
        1.0 / self.total_jump_rate()
    }

    /// Probability that the next jumper is of type 1.
    pub fn type1_jump_probability(&self) -> f64 {
        let a = self.n1 as f64 * self.alpha12;
        a / (a + self.n2 as f64 * self.alpha21)
    }
}

pub fn split_population(n: usize, c1: f64) -> Result<(usize, usize)> {
    if !(c1 > 0.0 && c1 < 1.0) {
        return Err(Error::InvalidParam { name: "c1", reason: format!("fraction must lie in (0, 1), got {c1}") });
    }
    let n1 = (c1 * n as f64).floor() as usize;
    let n2 = n.saturating_sub(n1);
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidParam {
            name: "n",
            reason: format!("n = {n} with c1 = {c1} leaves an empty type ({n1}, {n2})"),
        });
    }
    Ok((n1, n2))
}

pub fn total_jump_rate(params: &ModelParams) -> f64 {
    params.n1 as f64 * params.alpha12 + params.n2 as f64 * params.alpha21
}

/// Particle coordinates at a physical time.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    time: f64,
    jump_count: u64,
    // coordinate = rel[slot][k] + offset[slot]
    offset: [f64; 2],
    rel: [Vec<f64>; 2],
}

impl SystemState {
    pub fn new(pos1: Vec<f64>, pos2: Vec<f64>) -> Self {
        SystemState { time: 0.0, jump_count: 0, offset: [0.0; 2], rel: [pos1, pos2] }
    }

    pub fn zeros(params: &ModelParams) -> Self {
        Self::new(vec![0.0; params.n1], vec![0.0; params.n2])
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn jump_count(&self) -> u64 {
        self.jump_count
    }

    pub fn len(&self, ty: ParticleType) -> usize {
        self.rel[ty.slot()].len()
    }

    pub fn position(&self, ty: ParticleType, index: usize) -> f64 {
        self.rel[ty.slot()][index] + self.offset[ty.slot()]
    }

    pub fn positions(&self, ty: ParticleType) -> Vec<f64> {
        let off = self.offset[ty.slot()];
        self.rel[ty.slot()].iter().map(|x| x + off).collect()
    }

    pub fn pos1(&self) -> Vec<f64> {
        self.positions(ParticleType::One)
    }

    pub fn pos2(&self) -> Vec<f64> {
        self.positions(ParticleType::Two)
    }

    pub fn check_shape(&self, params: &ModelParams) -> Result<()> {
        let (got1, got2) = (self.rel[0].len(), self.rel[1].len());
        if got1 != params.n1 || got2 != params.n2 {
            return Err(Error::ShapeMismatch { n1: params.n1, n2: params.n2, got1, got2 });
        }
        Ok(())
    }

    pub fn empirical_stats(&self) -> EmpiricalStats {
        empirical_stats(self)
    }
}

/// One jump of the embedded chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub jumper_type: ParticleType,
    pub jumper_index: usize,
    pub target_index: usize,
    pub waiting_time: f64,
}

impl JumpEvent {
    pub fn target_type(&self) -> ParticleType {
        self.jumper_type.other()
    }
}

/// Per-type empirical means and population variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalStats {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub gap: f64,
    pub gap_sq: f64,
}

impl EmpiricalStats {
    fn from_parts(mean1: f64, mean2: f64, var1: f64, var2: f64) -> Self {
        let gap = mean1 - mean2;
        EmpiricalStats { mean1, mean2, var1, var2, gap, gap_sq: gap * gap }
    }

    /// Statistics after a pure drift of duration `dt`.
    pub fn drifted(&self, params: &ModelParams, dt: f64) -> Self {
        Self::from_parts(self.mean1 + params.v1 * dt, self.mean2 + params.v2 * dt, self.var1, self.var2)
    }
}

pub fn advance_drift(state: &mut SystemState, params: &ModelParams, dt: f64) -> Result<()> {
    if dt.is_nan() || dt < 0.0 {
        return Err(Error::NegativeDuration(dt));
    }
    state.offset[0] += params.v1 * dt;
    state.offset[1] += params.v2 * dt;
    state.time += dt;
    Ok(())
}

pub fn sample_jump<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> JumpEvent {
    let waiting_time = loop {
        let e: f64 = Exp1.sample(rng);
        if e > 0.0 {
            break e * params.gamma();
        }
    };
    let u: f64 = rng.random();
    let jumper_type = if u < params.type1_jump_probability() { ParticleType::One } else { ParticleType::Two };
    let jumper_index = rng.random_range(0..params.count(jumper_type));
    let target_index = rng.random_range(0..params.count(jumper_type.other()));
    JumpEvent { jumper_type, jumper_index, target_index, waiting_time }
}

pub fn apply_jump(state: &mut SystemState, ev: &JumpEvent) -> Result<()> {
    let (j, t) = (ev.jumper_type, ev.target_type());
    for (ty, index) in [(j, ev.jumper_index), (t, ev.target_index)] {
        let len = state.len(ty);
        if index >= len {
            return Err(Error::IndexOutOfRange { ty: ty.label(), index, len });
        }
    }
    let target = state.position(t, ev.target_index);
    // co-located jumps must leave the coordinate bit-identical
    if state.position(j, ev.jumper_index) != target {
        state.rel[j.slot()][ev.jumper_index] = target - state.offset[j.slot()];
    }
    state.jump_count += 1;
    Ok(())
}

/// Sample a jump, drift up to its moment and apply it.
pub fn embedded_step<R: Rng + ?Sized>(state: &mut SystemState, params: &ModelParams, rng: &mut R) -> Result<JumpEvent> {
    let ev = sample_jump(params, rng);
    advance_drift(state, params, ev.waiting_time)?;
    apply_jump(state, &ev)?;
    Ok(ev)
}

pub fn empirical_stats(state: &SystemState) -> EmpiricalStats {
    let (m1, v1) = welford(&state.rel[0]);
    let (m2, v2) = welford(&state.rel[1]);
    EmpiricalStats::from_parts(m1 + state.offset[0], m2 + state.offset[1], v1, v2)
}

// one-pass mean and population variance
fn welford(xs: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, (m2 / xs.len() as f64).max(0.0))
}

/// Continuous-time driver that keeps the next jump pending across
/// observation times, so the realized path does not depend on where it is
/// observed.
#[derive(Debug, Clone)]
pub struct Simulation<R> {
    state: SystemState,
    params: ModelParams,
    rng: R,
    pending: Option<(f64, JumpEvent)>,
    max_events: Option<u64>,
}

impl<R: Rng> Simulation<R> {
    pub fn new(state: SystemState, params: ModelParams, rng: R) -> Result<Self> {
        state.check_shape(&params)?;
        Ok(Simulation { state, params, rng, pending: None, max_events: None })
    }

    pub fn with_event_limit(mut self, limit: u64) -> Self {
        self.max_events = Some(limit);
        self
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn into_state(self) -> SystemState {
        self.state
    }

    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        if t_end.is_nan() || t_end < self.state.time {
            return Err(Error::TimeReversal { time: self.state.time, t_end });
        }
        loop {
            let (t_jump, ev) = match self.pending.take() {
                Some(p) => p,
                None => {
                    let ev = sample_jump(&self.params, &mut self.rng);
                    (self.state.time + ev.waiting_time, ev)
                }
            };
            if t_jump > t_end {
                self.pending = Some((t_jump, ev));
                let dt = t_end - self.state.time;
                return advance_drift(&mut self.state, &self.params, dt);
            }
            if let Some(limit) = self.max_events {
                if self.state.jump_count >= limit {
                    return Err(Error::EventLimit { limit, t_end });
                }
            }
            let dt = t_jump - self.state.time;
            advance_drift(&mut self.state, &self.params, dt)?;
            apply_jump(&mut self.state, &ev)?;
        }
    }

    /// Advance through nondecreasing `times`, returning statistics at each.
    pub fn observe(&mut self, times: &[f64]) -> Result<Vec<EmpiricalStats>> {
        times
            .iter()
            .map(|&t| {
                self.advance_to(t)?;
                Ok(self.state.empirical_stats())
            })
            .collect()
    }
}

/// Run up to `t_end`, recording statistics every `record_interval` starting
/// at the current time. The final state sits exactly at `t_end`.
pub fn simulate_until<R: Rng>(
    state: SystemState,
    params: &ModelParams,
    rng: &mut R,
    t_end: f64,
    record_interval: Option<f64>,
) -> Result<(SystemState, Vec<(f64, EmpiricalStats)>)> {
    if t_end.is_nan() || t_end < state.time {
        return Err(Error::TimeReversal { time: state.time, t_end });
    }
    let times = match record_interval {
        Some(dt) if dt > 0.0 => record_times(state.time, t_end, dt),
        Some(dt) => {
            return Err(Error::InvalidParam { name: "record_interval", reason: format!("must be > 0, got {dt}") })
        }
        None => Vec::new(),
    };
    let mut sim = Simulation::new(state, *params, rng)?;
    let stats = sim.observe(&times)?;
    sim.advance_to(t_end)?;
    Ok((sim.into_state(), times.into_iter().zip(stats).collect()))
}

fn record_times(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let t = t0 + k as f64 * dt;
        if t > t_end {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

/// Initial law of one particle type.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitDist {
    #[default]
    Zero,
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
    List(Vec<f64>),
}

impl InitDist {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, InitDist::Uniform { .. } | InitDist::Gaussian { .. })
    }

    fn realize<R: Rng + ?Sized>(&self, n: usize, ty: ParticleType, rng: &mut R) -> Result<Vec<f64>> {
        Ok(match self {
            InitDist::Zero => vec![0.0; n],
            InitDist::Constant(x) => vec![*x; n],
            InitDist::Uniform { lo, hi } => (0..n).map(|_| rng.random_range(*lo..=*hi)).collect(),
            InitDist::Gaussian { mean, sd } => {
                let d = Normal::new(*mean, *sd).map_err(|e| Error::InvalidParam { name: "init", reason: e.to_string() })?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            InitDist::List(xs) => {
                if xs.len() != n {
                    return Err(Error::InvalidParam {
                        name: "init",
                        reason: format!("type {} list has {} entries, expected {n}", ty.label(), xs.len()),
                    });
                }
                xs.clone()
            }
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidParam { name: "init", reason });
        match self {
            InitDist::Constant(x) if !x.is_finite() => bad(format!("constant must be finite, got {x}")),
            InitDist::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                bad(format!("uniform bounds must be finite with lo <= hi, got [{lo}, {hi}]"))
            }
            InitDist::Gaussian { mean, sd } if !(mean.is_finite() && sd.is_finite() && *sd >= 0.0) => {
                bad(format!("gaussian needs finite mean and sd >= 0, got ({mean}, {sd})"))
            }
            InitDist::List(xs) if xs.iter().any(|x| !x.is_finite()) => bad("list entries must be finite".into()),
            _ => Ok(()),
        }
    }
}

impl FromStr for InitDist {
    type Err = Error;

    /// `zero`, `const:X`, `uniform:LO,HI`, `gaussian:MEAN,SD` or `list:X1,X2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, args) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a)),
            None => (s, None),
        };
        let nums = |a: Option<&str>| -> Result<Vec<f64>> {
            a.unwrap_or("")
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::InvalidParam { name: "init", reason: format!("not a number: `{t}`") })
                })
                .collect()
        };
        let arity = |v: Vec<f64>, k: usize| -> Result<Vec<f64>> {
            if v.len() == k {
                Ok(v)
            } else {
                Err(Error::InvalidParam { name: "init", reason: format!("`{kind}` takes {k} number(s), got {}", v.len()) })
            }
        };
        let dist = match kind {
            "zero" if args.is_none() => InitDist::Zero,
            "const" => InitDist::Constant(arity(nums(args)?, 1)?[0]),
            "uniform" => {
                let v = arity(nums(args)?, 2)?;
                InitDist::Uniform { lo: v[0], hi: v[1] }
            }
            "gaussian" => {
                let v = arity(nums(args)?, 2)?;
                InitDist::Gaussian { mean: v[0], sd: v[1] }
            }
            "list" => InitDist::List(nums(args)?),
            _ => {
                return Err(Error::InvalidParam {
                    name: "init",
                    reason: format!("unknown initial condition `{s}` (expected zero, const:, uniform:, gaussian: or list:)"),
                })
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl fmt::Display for InitDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitDist::Zero => write!(f, "zero"),
            InitDist::Constant(x) => write!(f, "const:{x}"),
            InitDist::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            InitDist::Gaussian { mean, sd } => write!(f, "gaussian:{mean},{sd}"),
            InitDist::List(xs) => {
                write!(f, "list:")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

/// Initial condition for both particle types.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitSpec {
    pub type1: InitDist,
    pub type2: InitDist,
}

impl InitSpec {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(x1: f64, x2: f64) -> Self {
        InitSpec { type1: InitDist::Constant(x1), type2: InitDist::Constant(x2) }
    }

    pub fn is_deterministic(&self) -> bool {
        self.type1.is_deterministic() && self.type2.is_deterministic()
    }

    /// Draw a starting configuration; random laws consume `rng`.
    pub fn realize<R: Rng + ?Sized>(&self, params: &ModelParams, rng: &mut R) -> Result<SystemState> {
        self.type1.validate()?;
        self.type2.validate()?;
        let pos1 = self.type1.realize(params.n1, ParticleType::One, rng)?;
        let pos2 = self.type2.realize(params.n2, ParticleType::Two, rng)?;
        Ok(SystemState::new(pos1, pos2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn canonical(n1: usize, n2: usize) -> ModelParams {
        ModelParams::new(1.0, 1.0, 0.0, 1.0, n1, n2).unwrap()
    }

    #[test]
    fn total_rate_by_substitution() {
        assert_eq!(total_jump_rate(&canonical(10, 10)), 20.0);
        let p = ModelParams::new(2.0, 1.0, 0.0, 1.0, 5, 10).unwrap();
        assert_eq!(total_jump_rate(&p), 20.0);
        assert_eq!(p.gamma() * p.total_jump_rate(), 1.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::new(0.0, 1.0, 0.0, 1.0, 1, 1).is_err());
        assert!(ModelParams::new(1.0, f64::NAN, 0.0, 1.0, 1, 1).is_err());
        assert!(ModelParams::new(1.0, 1.0, f64::INFINITY, 1.0, 1, 1).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.0, 1.0, 0, 1).is_err());
        assert!(ModelParams::from_fraction(1.0, 1.0, 0.0, 1.0, 10, 1.0).is_err());
        assert!(ModelParams::from_fraction(1.0, 1.0, 0.0, 1.0, 1, 0.5).is_err());
        let degenerate = ModelParams::new(1.0, 1.0, 0.5, 0.5, 1, 1).unwrap();
        assert!(degenerate.is_degenerate());
    }

    #[test]
    fn fraction_split_floors_type1() {
        let p = ModelParams::from_fraction(1.0, 1.0, 0.0, 1.0, 101, 0.5).unwrap();
        assert_eq!((p.n1(), p.n2()), (50, 51));
        let p = ModelParams::from_fraction(1.0, 1.0, 0.0, 1.0, 10, 0.3).unwrap();
        assert_eq!(p.n1() + p.n2(), 10);
    }

    #[test]
    fn drift_by_substitution() {
        let p = canonical(2, 3);
        let mut s = SystemState::new(vec![1.0, -1.0], vec![0.0, 2.0, 5.0]);
        let before = s.clone();
        advance_drift(&mut s, &p, 0.0).unwrap();
        assert_eq!(s, before);
        advance_drift(&mut s, &p, 2.0).unwrap();
        assert_eq!(s.pos1(), vec![1.0, -1.0]);
        assert_eq!(s.pos2(), vec![2.0, 4.0, 7.0]);
        assert_eq!(s.time(), 2.0);
        assert_eq!(s.jump_count(), 0);
        assert_eq!(advance_drift(&mut s, &p, -1.0), Err(Error::NegativeDuration(-1.0)));
    }

    #[test]
    fn single_pair_jump() {
        let mut s = SystemState::new(vec![0.0], vec![5.0]);
        let ev = JumpEvent { jumper_type: ParticleType::One, jumper_index: 0, target_index: 0, waiting_time: 1.0 };
        apply_jump(&mut s, &ev).unwrap();
        assert_eq!(s.pos1(), vec![5.0]);
        assert_eq!(s.pos2(), vec![5.0]);
        assert_eq!(s.jump_count(), 1);
        assert_eq!(s.time(), 0.0);
        // now co-located: positions stay, count still advances
        let before = (s.pos1(), s.pos2());
        apply_jump(&mut s, &ev).unwrap();
        assert_eq!((s.pos1(), s.pos2()), before);
        assert_eq!(s.jump_count(), 2);
    }

    #[test]
    fn colocated_jump_after_drift_is_identity() {
        let p = ModelParams::new(1.0, 1.0, 0.3, 1.7, 1, 1).unwrap();
        let mut s = SystemState::new(vec![0.0], vec![0.0]);
        advance_drift(&mut s, &p, 0.1).unwrap();
        let ev = JumpEvent { jumper_type: ParticleType::Two, jumper_index: 0, target_index: 0, waiting_time: 0.1 };
        apply_jump(&mut s, &ev).unwrap();
        let snapshot = s.pos2();
        apply_jump(&mut s, &ev).unwrap();
        assert_eq!(s.pos2(), snapshot);
    }

    #[test]
    fn out_of_range_jump_rejected() {
        let mut s = SystemState::new(vec![0.0, 1.0], vec![5.0]);
        let ev = JumpEvent { jumper_type: ParticleType::Two, jumper_index: 0, target_index: 2, waiting_time: 1.0 };
        assert_eq!(apply_jump(&mut s, &ev), Err(Error::IndexOutOfRange { ty: 1, index: 2, len: 2 }));
        assert_eq!(s.jump_count(), 0);
    }

    #[test]
    fn stats_by_hand() {
        let s = SystemState::new(vec![0.0, 0.0], vec![1.0, 3.0]);
        let st = s.empirical_stats();
        assert_eq!((st.mean1, st.mean2, st.var1, st.var2, st.gap, st.gap_sq), (0.0, 2.0, 0.0, 1.0, -2.0, 4.0));
        let flat = SystemState::new(vec![4.2; 3], vec![4.2; 7]).empirical_stats();
        assert_eq!((flat.var1, flat.var2), (0.0, 0.0));
    }

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let mut rng = trajectory_rng(11, 0);
        for _ in 0..50 {
            let n1 = rng.random_range(1..40);
            let n2 = rng.random_range(1..40);
            let shift: f64 = rng.random_range(-100.0..100.0);
            let a: Vec<f64> = (0..n1).map(|_| shift + rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..n2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let st = SystemState::new(a.clone(), b.clone()).empirical_stats();
            let (m1, v1) = two_pass(&a);
            let (m2, v2) = two_pass(&b);
            for (x, y) in [(st.mean1, m1), (st.mean2, m2), (st.var1, v1), (st.var2, v2)] {
                assert!(crate::linalg::rel_diff(x, y, 1e-300) < 1e-12 || (x - y).abs() < 1e-14, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn jumper_type_frequency_matches_binomial() {
        for (p, m) in [(canonical(10, 10), 100_000usize), (ModelParams::new(100.0, 1.0, 0.0, 1.0, 1, 1).unwrap(), 100_000)] {
            let mut rng = trajectory_rng(3, 1);
            let prob = p.type1_jump_probability();
            let hits = (0..m).filter(|_| sample_jump(&p, &mut rng).jumper_type == ParticleType::One).count();
            let sigma = (m as f64 * prob * (1.0 - prob)).sqrt();
            assert!((hits as f64 - m as f64 * prob).abs() <= 4.0 * sigma, "hits {hits}, p {prob}");
        }
        assert_eq!(canonical(10, 10).type1_jump_probability(), 0.5);
        assert_eq!(ModelParams::new(100.0, 1.0, 0.0, 1.0, 1, 1).unwrap().type1_jump_probability(), 100.0 / 101.0);
    }

    #[test]
    fn waiting_time_moments_match_exponential() {
        let p = ModelParams::new(2.0, 1.0, 0.0, 1.0, 5, 10).unwrap();
        let mut rng = trajectory_rng(5, 0);
        let m = 100_000;
        let w: Vec<f64> = (0..m).map(|_| sample_jump(&p, &mut rng).waiting_time).collect();
        assert!(w.iter().all(|&x| x > 0.0));
        let g = p.gamma();
        let mean = w.iter().sum::<f64>() / m as f64;
        // Exp(mean g): sd g, so the sample mean has stderr g / sqrt(m)
        assert!((mean - g).abs() <= 4.0 * g / (m as f64).sqrt());
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        // Var of (X - g)^2 for Exp is 8 g^4
        assert!((var - g * g).abs() <= 4.0 * (8.0f64).sqrt() * g * g / (m as f64).sqrt());
    }

    #[test]
    fn jump_indices_in_range_and_targets_other_type() {
        let p = ModelParams::new(1.0, 3.0, 0.0, 1.0, 3, 7).unwrap();
        let mut rng = trajectory_rng(0, 0);
        for _ in 0..10_000 {
            let ev = sample_jump(&p, &mut rng);
            assert_ne!(ev.jumper_type, ev.target_type());
            assert!(ev.jumper_index < p.count(ev.jumper_type));
            assert!(ev.target_index < p.count(ev.target_type()));
        }
    }

    #[test]
    fn three_embedded_steps_compose() {
        let p = canonical(4, 4);
        let mut rng = trajectory_rng(9, 2);
        let mut s = SystemState::zeros(&p);
        let total: f64 = (0..3).map(|_| embedded_step(&mut s, &p, &mut rng).unwrap().waiting_time).sum();
        assert_eq!(s.jump_count(), 3);
        assert!((s.time() - total).abs() < 1e-15);
    }

    #[test]
    fn zero_velocity_zero_config_is_absorbing() {
        let p = ModelParams::new(1.0, 2.0, 0.0, 0.0, 6, 3).unwrap();
        let mut rng = trajectory_rng(1, 0);
        let mut s = SystemState::zeros(&p);
        for _ in 0..1000 {
            embedded_step(&mut s, &p, &mut rng).unwrap();
        }
        assert!(s.pos1().iter().chain(s.pos2().iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn simulate_until_now_is_pure_drift() {
        let p = canonical(3, 3);
        let mut rng = trajectory_rng(0, 0);
        let s0 = SystemState::new(vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 5.0]);
        let (s, traj) = simulate_until(s0.clone(), &p, &mut rng, 0.0, Some(1.0)).unwrap();
        assert_eq!(s, s0);
        assert_eq!(traj.len(), 1);
        assert!(simulate_until(s0, &p, &mut rng, -1.0, None).is_err());
    }

    #[test]
    fn jump_count_over_horizon_is_poisson() {
        let p = ModelParams::new(2.0, 1.0, 0.0, 1.0, 30, 40).unwrap();
        let horizon = 1000.0;
        let mut rng = trajectory_rng(21, 0);
        let (s, traj) = simulate_until(SystemState::zeros(&p), &p, &mut rng, horizon, Some(7.0)).unwrap();
        let expected = horizon * p.total_jump_rate();
        assert!((s.jump_count() as f64 - expected).abs() <= 4.0 * expected.sqrt());
        assert_eq!(s.time(), horizon);
        assert!(traj.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(traj.iter().all(|(t, _)| *t <= horizon));
    }

    #[test]
    fn observation_grid_does_not_change_path() {
        let p = canonical(5, 5);
        let run = |grid: &[f64]| {
            let mut sim = Simulation::new(SystemState::zeros(&p), p, trajectory_rng(4, 4)).unwrap();
            sim.observe(grid).unwrap();
            sim.advance_to(10.0).unwrap();
            sim.into_state()
        };
        let a = run(&[]);
        let b = run(&[0.5, 1.0, 3.3, 9.99]);
        assert_eq!(a.jump_count(), b.jump_count());
        for (x, y) in a.pos1().iter().zip(b.pos1()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn event_limit_reported() {
        let p = canonical(10, 10);
        let mut sim = Simulation::new(SystemState::zeros(&p), p, trajectory_rng(0, 0)).unwrap().with_event_limit(5);
        assert!(matches!(sim.advance_to(100.0), Err(Error::EventLimit { limit: 5, .. })));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = canonical(8, 8);
        let run = || simulate_until(SystemState::zeros(&p), &p, &mut trajectory_rng(77, 3), 20.0, Some(0.5)).unwrap();
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = simulate_until(SystemState::zeros(&p), &p, &mut trajectory_rng(77, 4), 20.0, None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_parsing_round_trips() {
        for s in ["zero", "const:-0.5", "uniform:0,1", "gaussian:2,0.5", "list:1,2,3.5"] {
            let d: InitDist = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        for bad in ["zeros", "const:", "uniform:1", "uniform:2,1", "gaussian:0,-1", "list:a"] {
            assert!(bad.parse::<InitDist>().is_err(), "{bad}");
        }
    }

    #[test]
    fn init_realization() {
        let p = canonical(3, 2);
        let mut rng = trajectory_rng(0, 0);
        let init = InitSpec { type1: InitDist::List(vec![1.0, 2.0, 3.0]), type2: InitDist::Constant(0.5) };
        let s = init.realize(&p, &mut rng).unwrap();
        assert_eq!(s.pos1(), vec![1.0, 2.0, 3.0]);
        assert_eq!(s.pos2(), vec![0.5, 0.5]);
        let short = InitSpec { type1: InitDist::List(vec![1.0]), type2: InitDist::Zero };
        assert!(short.realize(&p, &mut rng).is_err());
        let u = InitSpec { type1: InitDist::Uniform { lo: -1.0, hi: 1.0 }, type2: InitDist::Gaussian { mean: 0.0, sd: 1.0 } };
        assert!(!u.is_deterministic());
        let s = u.realize(&p, &mut rng).unwrap();
        assert!(s.pos1().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    proptest! {
        #[test]
        fn drift_preserves_variances(dt in 0.0..1e3f64, v1 in -5.0..5.0f64, v2 in -5.0..5.0f64,
                                     xs in prop::collection::vec(-10.0..10.0f64, 1..20),
                                     ys in prop::collection::vec(-10.0..10.0f64, 1..20)) {
            let p = ModelParams::new(1.0, 1.0, v1, v2, xs.len(), ys.len()).unwrap();
            let mut s = SystemState::new(xs, ys);
            let before = s.empirical_stats();
            advance_drift(&mut s, &p, dt).unwrap();
            let after = s.empirical_stats();
            prop_assert_eq!(before.var1, after.var1);
            prop_assert_eq!(before.var2, after.var2);
        }

        #[test]
        fn jump_changes_at_most_one_coordinate(seed in any::<u64>(),
                                               xs in prop::collection::vec(-10.0..10.0f64, 1..10),
                                               ys in prop::collection::vec(-10.0..10.0f64, 1..10)) {
            let p = ModelParams::new(1.0, 2.0, 0.0, 1.0, xs.len(), ys.len()).unwrap();
            let mut s = SystemState::new(xs, ys);
            let mut rng = trajectory_rng(seed, 0);
            let ev = sample_jump(&p, &mut rng);
            let (a1, a2) = (s.pos1(), s.pos2());
            apply_jump(&mut s, &ev).unwrap();
            let (b1, b2) = (s.pos1(), s.pos2());
            prop_assert_eq!(a1.len(), b1.len());
            prop_assert_eq!(a2.len(), b2.len());
            let changed = a1.iter().zip(&b1).chain(a2.iter().zip(&b2)).filter(|(x, y)| x != y).count();
            prop_assert!(changed <= 1);
            prop_assert_eq!(s.position(ev.jumper_type, ev.jumper_index), s.position(ev.target_type(), ev.target_index));
        }
    }
}
