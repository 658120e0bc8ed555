//! Closed moment recursions of the embedded jump chain.
//!
//! For step `n` of the embedded chain let `mu_i(n)` be the expected mass
//! centre of type `i`, `d_i(n)` the expected empirical variance and `r(n)` the
//! expected squared gap between mass centres. The means obey a closed affine
//! recursion, and `w = (d1, d2, r)` obeys
//!
//! ```text
//! w(n+1) = A w(n) + f(n) + g,    A = I + gamma (B1 + B2),
//! f(n)   = 2 gamma (v1 - v2) l12(n) q
//! ```
//!
//! `A` is the same for every [`Closure`]; the closures differ only in `q` and `g`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::linalg::{condition_number, mat_pow, mat_vec_add, solve_with_residual, CompensatedSum, Mat3, Vec3};
use crate::model::{ModelParams, SystemState};

/// Which forcing vectors `q` and `g` to use in the variance recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Closure {
    /// `q = (0,0,1) + gamma (a12 - a12/N1, a21 - a21/N2, -(a12 + a21))` and
    /// `g = gamma^2 (v1-v2)^2 (a12 gamma, a21 gamma, 2)`. Agrees with the
    /// exact chain to leading order in `gamma`.
    #[default]
    Asymptotic,
    /// One-step conditional expectations of the embedded chain (drift over
    /// the waiting time, then the jump). Here `q3 = g3 / (2 gamma^2 (v1-v2)^2) = A33`
    /// and the variance rows of `g` carry the factor `2 (N_i - 1) / N_i`.
    Exact,
}

impl std::str::FromStr for Closure {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim() {
            "asymptotic" => Ok(Closure::Asymptotic),
            "exact" => Ok(Closure::Exact),
            other => Err(crate::Error::InvalidParam {
                name: "closure",
                reason: format!("expected `asymptotic` or `exact`, got `{other}`"),
            }),
        }
    }
}

impl std::fmt::Display for Closure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Closure::Asymptotic => "asymptotic",
            Closure::Exact => "exact",
        })
    }
}

/// Mean time between jumps, `1 / (n1 a12 + n2 a21)`.
pub fn gamma_of(params: &ModelParams) -> f64 {
    params.gamma()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanState {
    pub n: u64,
    pub mu1: f64,
    pub mu2: f64,
    pub l12: f64,
    /// `a21 mu1 + a12 mu2`
    pub s: f64,
}

impl MeanState {
    pub fn new(n: u64, mu1: f64, mu2: f64, params: &ModelParams) -> Self {
        MeanState { n, mu1, mu2, l12: mu1 - mu2, s: params.alpha21() * mu1 + params.alpha12() * mu2 }
    }

    /// Degenerate expectation of a deterministic configuration.
    pub fn from_state(state: &SystemState, params: &ModelParams) -> Self {
        let st = state.empirical_stats();
        Self::new(0, st.mean1, st.mean2, params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MomentVectorW {
    pub d1: f64,
    pub d2: f64,
    pub r: f64,
}

impl MomentVectorW {
    pub fn new(d1: f64, d2: f64, r: f64) -> Self {
        MomentVectorW { d1, d2, r }
    }

    pub fn from_state(state: &SystemState) -> Self {
        let st = state.empirical_stats();
        MomentVectorW { d1: st.var1, d2: st.var2, r: st.gap_sq }
    }

    pub fn to_vec3(self) -> Vec3 {
        Vec3::new(self.d1, self.d2, self.r)
    }

    pub fn from_vec3(v: &Vec3) -> Self {
        MomentVectorW { d1: v[0], d2: v[1], r: v[2] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub params: ModelParams,
    pub closure: Closure,
    pub gamma: f64,
    /// Contraction factor of the mean gap, `1 - gamma (a12 + a21)`.
    pub big_r: f64,
    pub b1: Mat3,
    pub b2: Mat3,
    pub a: Mat3,
    pub q: Vec3,
    pub g: Vec3,
    /// Fixed point of the gap recursion, `(v1 - v2) R / (a12 + a21)`.
    pub c1_prime: f64,
}

pub fn build_moment_system(params: &ModelParams) -> MomentSystem {
    MomentSystem::new(params, Closure::Asymptotic)
}

/// Limiting drift matrix: eigenvalues `-(a12+a21)`, `0`, `-2(a12+a21)`.
pub fn b1_matrix(alpha12: f64, alpha21: f64) -> Mat3 {
    Matrix3::new(
        -alpha12, alpha12, alpha12, //
        alpha21, -alpha21, alpha21, //
        0.0, 0.0, -2.0 * (alpha12 + alpha21),
    )
}

/// Finite-size correction with rows `-x1`, `-x2`, `x1 + x2`.
pub fn correction_matrix(x1: f64, x2: f64) -> Mat3 {
    let s = x1 + x2;
    Matrix3::new(-x1, -x1, -x1, -x2, -x2, -x2, s, s, s)
}

impl MomentSystem {
    pub fn new(params: &ModelParams, closure: Closure) -> Self {
        let (a12, a21) = (params.alpha12(), params.alpha21());
        let (n1, n2) = (params.n1() as f64, params.n2() as f64);
        let gamma = params.gamma();
        let big_r = 1.0 - gamma * (a12 + a21);
        let b1 = b1_matrix(a12, a21);
        let b2 = correction_matrix(a12 / n1, a21 / n2);
        let a = Mat3::identity() + (b1 + b2) * gamma;
        let dv = params.v1() - params.v2();
        let dv2 = dv * dv;
        let (q, g) = match closure {
            Closure::Asymptotic => (
                Vec3::new(0.0, 0.0, 1.0) + Vec3::new(a12 - a12 / n1, a21 - a21 / n2, -(a12 + a21)) * gamma,
                Vec3::new(a12 * gamma, a21 * gamma, 2.0) * (gamma * gamma * dv2),
            ),
            Closure::Exact => {
                let a33 = a[(2, 2)];
                (
                    Vec3::new(gamma * (a12 - a12 / n1), gamma * (a21 - a21 / n2), a33),
                    Vec3::new(
                        2.0 * a12 * gamma * (n1 - 1.0) / n1,
                        2.0 * a21 * gamma * (n2 - 1.0) / n2,
                        2.0 * a33,
                    ) * (gamma * gamma * dv2),
                )
            }
        };
        let c1_prime = dv * big_r / (a12 + a21);
        MomentSystem { params: *params, closure, gamma, big_r, b1, b2, a, q, g, c1_prime }
    }

    pub fn b(&self) -> Mat3 {
        self.b1 + self.b2
    }

    /// Coefficient of `R^n` in `l12(n) = C1' + C2' R^n`.
    pub fn c2_prime(&self, l12_0: f64) -> f64 {
        l12_0 - self.c1_prime
    }

    pub fn a_is_positive(&self) -> bool {
        self.a.iter().all(|&x| x > 0.0)
    }

    /// Embedded step count matching physical time `t`, `n ~ t / gamma`.
    pub fn steps_for_time(&self, t: f64) -> u64 {
        (t / self.gamma).round().max(0.0) as u64
    }

    pub fn mean_step(&self, ms: &MeanState) -> MeanState {
        let p = &self.params;
        let (a12, a21, v1, v2, g) = (p.alpha12(), p.alpha21(), p.v1(), p.v2(), self.gamma);
        let mu1 = ms.mu1 + (a12 * (ms.mu2 - ms.mu1) + v1) * g + a12 * (v2 - v1) * g * g;
        let mu2 = ms.mu2 + (a21 * (ms.mu1 - ms.mu2) + v2) * g + a21 * (v1 - v2) * g * g;
        MeanState::new(ms.n + 1, mu1, mu2, p)
    }

    pub fn l12_closed(&self, n: u64, l12_0: f64) -> f64 {
        let rn = self.big_r.powf(n as f64);
        l12_0 * rn + self.c1_prime * (1.0 - rn)
    }

    pub fn weighted_mean_closed(&self, n: u64, s0: f64) -> f64 {
        let p = &self.params;
        s0 + n as f64 * self.gamma * (p.alpha21() * p.v1() + p.alpha12() * p.v2())
    }

    pub fn f_of(&self, n: u64, l12_0: f64) -> Vec3 {
        let dv = self.params.v1() - self.params.v2();
        self.q * (2.0 * self.gamma * dv * self.l12_closed(n, l12_0))
    }

    pub fn w_step(&self, w: &MomentVectorW, n: u64, l12_0: f64) -> MomentVectorW {
        let f = self.f_of(n, l12_0);
        MomentVectorW::from_vec3(&mat_vec_add(&self.a, &w.to_vec3(), &[&f, &self.g]))
    }

    /// `w(n)` by forward iteration together with the three-term split
    /// `A^n w0`, `sum_j A^(j-1) f(n-j)` and `(I - A)^-1 (I - A^n) g`.
    pub fn w_solve(&self, n: u64, w0: &MomentVectorW, l12_0: f64) -> WSolution {
        let mut w = w0.to_vec3();
        let mut homogeneous = w;
        let mut forced = Vec3::zeros();
        let mut constant = Vec3::zeros();
        for k in 0..n {
            let f = self.f_of(k, l12_0);
            w = mat_vec_add(&self.a, &w, &[&f, &self.g]);
            homogeneous = mat_vec_add(&self.a, &homogeneous, &[]);
            forced = mat_vec_add(&self.a, &forced, &[&f]);
            constant = mat_vec_add(&self.a, &constant, &[&self.g]);
        }
        let (part3, part3_method) = self.constant_part(n, &constant);
        WSolution { w: MomentVectorW::from_vec3(&w), parts: [homogeneous, forced, part3], part3_method }
    }

    fn constant_part(&self, n: u64, summed: &Vec3) -> (Vec3, Part3Method) {
        if n == 0 {
            return (Vec3::zeros(), Part3Method::Summed { reason: "n = 0".into() });
        }
        if self.g.iter().all(|&x| x == 0.0) {
            return (Vec3::zeros(), Part3Method::Summed { reason: "g = 0".into() });
        }
        let i_minus_a = Mat3::identity() - self.a;
        let rhs = (Mat3::identity() - mat_pow(&self.a, n)) * self.g;
        match solve_with_residual(&i_minus_a, &rhs) {
            Some((x, residual)) if residual <= PART3_RESIDUAL_LIMIT => {
                (x, Part3Method::Closed { condition: condition_number(&i_minus_a), residual })
            }
            Some((_, residual)) => {
                log::warn!("(I - A) solve residual {residual:e} too large; using summed form");
                (*summed, Part3Method::Summed { reason: format!("residual {residual:e}") })
            }
            None => {
                log::warn!("I - A is singular; using summed form");
                (*summed, Part3Method::Summed { reason: "I - A singular".into() })
            }
        }
    }

    /// Exact means and moments for steps `0..=horizon`, every `every` steps
    /// (the last step is always included).
    pub fn table(&self, init: &SystemState, horizon: u64, every: u64) -> Vec<MomentRow> {
        let every = every.max(1);
        let mut ms = MeanState::from_state(init, &self.params);
        let mut w = MomentVectorW::from_state(init);
        let l12_0 = ms.l12;
        let mut rows = Vec::new();
        for n in 0..=horizon {
            if n % every == 0 || n == horizon {
                rows.push(MomentRow { n, mu1: ms.mu1, mu2: ms.mu2, l12: ms.l12, s: ms.s, d1: w.d1, d2: w.d2, r: w.r });
            }
            if n < horizon {
                w = self.w_step(&w, n, l12_0);
                ms = self.mean_step(&ms);
            }
        }
        rows
    }
}

const PART3_RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Part3Method {
    /// Direct 3×3 solve against `I - A`.
    Closed { condition: f64, residual: f64 },
    /// Accumulated `sum_{j<n} A^j g`.
    Summed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WSolution {
    pub w: MomentVectorW,
    pub parts: [Vec3; 3],
    pub part3_method: Part3Method,
}

impl WSolution {
    pub fn parts_sum(&self) -> Vec3 {
        Vec3::from_fn(|i, _| self.parts.iter().map(|p| p[i]).collect::<CompensatedSum>().value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub n: u64,
    pub mu1: f64,
    pub mu2: f64,
    pub l12: f64,
    pub s: f64,
    pub d1: f64,
    pub d2: f64,
    pub r: f64,
}
