//! Spectral constants of the variance recursion.
//!
//! With `N1 = c1 N`, `N2 = c2 N` the drift matrix is `B = B1 + B2k / N`. The
//! eigenvalue `0` of `B1` moves to `-kappa2 / N` at first order, which makes
//! the dominant eigenvalue of `A = I + B / (N Delta)` equal to
//! `1 - b2 / N^2 + O(N^-3)` with `b2 = kappa2 / Delta`.
//!
//! Closed forms are the primary path. [`eigs_3x3_numeric`] and the helpers
//! built on it are an independent check and never feed the closed forms.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, Mat3, Vec3};
use crate::model::ModelParams;
use crate::moments::{b1_matrix, correction_matrix, MomentSystem};

/// Large-population parametrization: rates, velocities and the type-1
/// fraction `c1` (so `c2 = 1 - c1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingParams {
    pub alpha12: f64,
    pub alpha21: f64,
    pub v1: f64,
    pub v2: f64,
    pub c1: f64,
}

impl ScalingParams {
    pub fn new(alpha12: f64, alpha21: f64, v1: f64, v2: f64, c1: f64) -> Result<Self> {
        // reuse the rate/velocity validation of the finite model
        ModelParams::new(alpha12, alpha21, v1, v2, 1, 1)?;
        if !(c1 > 0.0 && c1 < 1.0) {
            return Err(Error::InvalidParam { name: "c1", reason: format!("fraction must lie in (0, 1), got {c1}") });
        }
        Ok(ScalingParams { alpha12, alpha21, v1, v2, c1 })
    }

    pub fn canonical() -> Self {
        ScalingParams { alpha12: 1.0, alpha21: 1.0, v1: 0.0, v2: 1.0, c1: 0.5 }
    }

    pub fn c2(&self) -> f64 {
        1.0 - self.c1
    }

    pub fn at_size(&self, n: usize) -> Result<ModelParams> {
        ModelParams::from_fraction(self.alpha12, self.alpha21, self.v1, self.v2, n, self.c1)
    }

    pub fn is_degenerate(&self) -> bool {
        self.v1 == self.v2
    }

    /// `c1 a12 + c2 a21`; the mean waiting time is `1 / (N Delta)`.
    pub fn delta(&self) -> f64 {
        self.c1 * self.alpha12 + self.c2() * self.alpha21
    }

    pub fn kappa2(&self) -> f64 {
        kappa2(self.alpha12, self.alpha21, self.c1)
    }

    pub fn b2(&self) -> f64 {
        b2_of(self.alpha12, self.alpha21, self.c1)
    }

    pub fn h(&self) -> f64 {
        h_of(self)
    }
}

impl From<&ModelParams> for ScalingParams {
    fn from(p: &ModelParams) -> Self {
        ScalingParams { alpha12: p.alpha12(), alpha21: p.alpha21(), v1: p.v1(), v2: p.v2(), c1: p.c1() }
    }
}

/// `(lambda1, lambda2, lambda3) = (-(a12 + a21), 0, -2 (a12 + a21))`.
pub fn eigs_b1(alpha12: f64, alpha21: f64) -> [f64; 3] {
    let s = alpha12 + alpha21;
    [-s, 0.0, -2.0 * s]
}

pub fn eigvecs_b1(alpha12: f64, alpha21: f64) -> [Vec3; 3] {
    let s = alpha12 + alpha21;
    [
        Vec3::new(-alpha12, alpha21, 0.0),
        Vec3::new(1.0, 1.0, 0.0),
        Vec3::new(-alpha12 * alpha12, -alpha21 * alpha21, s * s),
    ]
}

/// Right and left null vectors of `B1` with `psi . phi = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullPair {
    pub phi: Vec3,
    pub psi: Vec3,
    pub z: f64,
}

pub fn null_pair(alpha12: f64, alpha21: f64) -> NullPair {
    let z = (alpha12 + alpha21) * (1.0 / alpha12 + 1.0 / alpha21);
    NullPair {
        phi: Vec3::new(1.0, 1.0, 0.0),
        psi: Vec3::new(1.0 + alpha21 / alpha12, 1.0 + alpha12 / alpha21, 1.0) / z,
        z,
    }
}

/// `B2k`: the finite-size correction with `1/N_i` replaced by `1/c_i`.
pub fn scaled_correction(alpha12: f64, alpha21: f64, c1: f64) -> Mat3 {
    correction_matrix(alpha12 / c1, alpha21 / (1.0 - c1))
}

/// `psi' B2k phi`, the first-order coefficient of the zero eigenvalue.
pub fn first_order_projection(alpha12: f64, alpha21: f64, c1: f64) -> f64 {
    let np = null_pair(alpha12, alpha21);
    np.psi.dot(&(scaled_correction(alpha12, alpha21, c1) * np.phi))
}

pub fn kappa2(alpha12: f64, alpha21: f64, c1: f64) -> f64 {
    let z = null_pair(alpha12, alpha21).z;
    2.0 / z * (alpha21 / c1 + alpha12 / (1.0 - c1))
}

/// First-order approximation `-kappa2 / N` of the near-zero eigenvalue of `B`.
pub fn lambda2_first_order(alpha12: f64, alpha21: f64, n: usize, c1: f64) -> f64 {
    -kappa2(alpha12, alpha21, c1) / n as f64
}

pub fn b2_of(alpha12: f64, alpha21: f64, c1: f64) -> f64 {
    kappa2(alpha12, alpha21, c1) / (c1 * alpha12 + (1.0 - c1) * alpha21)
}

/// Limits of `N (1 - sigma1)` and `N (1 - sigma3)`, obtained from
/// `sigma = 1 + gamma lambda` with `gamma = 1 / (N Delta)`.
pub fn b1_b3_limits(p: &ScalingParams) -> (f64, f64) {
    let s = p.alpha12 + p.alpha21;
    (s / p.delta(), 2.0 * s / p.delta())
}

/// Variance plateau coefficient: `R_i(t) -> h N` for `t >> N`.
pub fn h_of(p: &ScalingParams) -> f64 {
    let s = p.alpha12 + p.alpha21;
    let dv = p.v1 - p.v2;
    2.0 * p.alpha12 * p.alpha21 * dv * dv / (p.kappa2() * s * s * s)
}

/// Coordinates of `(0, 0, 1)` in the eigenbasis of `B1`.
pub fn xi_of(alpha12: f64, alpha21: f64) -> [f64; 3] {
    let s2 = (alpha12 + alpha21).powi(2);
    [(alpha21 - alpha12) / s2, alpha12 * alpha21 / s2, 1.0 / s2]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub lambda: [f64; 3],
    pub e1: [f64; 3],
    pub e2: [f64; 3],
    pub e3: [f64; 3],
    pub phi: [f64; 3],
    pub psi: [f64; 3],
    pub z: f64,
    pub kappa2: f64,
    pub delta: f64,
    pub b2: f64,
    /// Limits of `N (1 - sigma1)` and `N (1 - sigma3)`.
    pub b1: f64,
    pub b3: f64,
    pub h: f64,
    pub xi: [f64; 3],
}

impl SpectralSummary {
    pub fn new(p: &ScalingParams) -> Self {
        let (a12, a21) = (p.alpha12, p.alpha21);
        let [e1, e2, e3] = eigvecs_b1(a12, a21).map(|v| [v[0], v[1], v[2]]);
        let np = null_pair(a12, a21);
        let h = h_of(p);
        let (b1, b3) = b1_b3_limits(p);
        if p.is_degenerate() {
            log::warn!("v1 == v2: plateau coefficient h is 0");
        }
        SpectralSummary {
            lambda: eigs_b1(a12, a21),
            e1,
            e2,
            e3,
            phi: [np.phi[0], np.phi[1], np.phi[2]],
            psi: [np.psi[0], np.psi[1], np.psi[2]],
            z: np.z,
            kappa2: p.kappa2(),
            delta: p.delta(),
            b2: p.b2(),
            b1,
            b3,
            h,
            xi: xi_of(a12, a21),
        }
    }
}

/// Eigenvalues of a general 3×3 matrix, sorted by real part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen3 {
    pub values: [Complex64; 3],
    /// Two eigenvalues closer than `1e-6 ||M||`: roots of the characteristic
    /// cubic are then only accurate to about the square root of precision.
    pub ill_conditioned: bool,
}

impl Eigen3 {
    pub fn real_values(&self) -> Option<[f64; 3]> {
        let scale = self.values.iter().map(|z| z.norm()).fold(f64::MIN_POSITIVE, f64::max);
        if self.values.iter().all(|z| z.im.abs() <= 1e-12 * scale) {
            Some(self.values.map(|z| z.re))
        } else {
            None
        }
    }
}

/// Roots of the characteristic polynomial via the trigonometric / Cardano
/// formulas, each polished by Newton iteration on the polynomial.
pub fn eigs_3x3_numeric(m: &Mat3) -> Eigen3 {
    // lambda^3 + a lambda^2 + b lambda + c
    let a = -m.trace();
    let b = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let c = -m.determinant();
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let shift = -a / 3.0;
    let disc = q * q / 4.0 + p * p * p / 27.0;

    let mut roots: [Complex64; 3] = if p == 0.0 && q == 0.0 {
        [Complex64::new(shift, 0.0); 3]
    } else if disc <= 0.0 {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        [0, 1, 2].map(|k| Complex64::new(r * (theta - 2.0 * PI * k as f64 / 3.0).cos() + shift, 0.0))
    } else {
        let sd = disc.sqrt();
        let x0 = (-q / 2.0 + sd).cbrt() + (-q / 2.0 - sd).cbrt();
        // remaining roots of x^2 + x0 x + (x0^2 + p)
        let half = Complex64::new(-x0 / 2.0, 0.0);
        let rad = Complex64::new(-(3.0 * x0 * x0 + 4.0 * p), 0.0).sqrt() / 2.0;
        [Complex64::new(x0 + shift, 0.0), half + rad + shift, half - rad + shift]
    };

    let poly = |z: Complex64| ((z + a) * z + b) * z + c;
    let deriv = |z: Complex64| (3.0 * z + 2.0 * a) * z + b;
    for z in roots.iter_mut() {
        for _ in 0..60 {
            let d = deriv(*z);
            if d.norm() == 0.0 {
                break;
            }
            let step = poly(*z) / d;
            let next = *z - step;
            if poly(next).norm() > poly(*z).norm() {
                break;
            }
            *z = next;
            if step.norm() <= 4.0 * f64::EPSILON * z.norm() {
                break;
            }
        }
    }
    roots.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));

    let scale = inf_norm(m).max(f64::MIN_POSITIVE);
    let min_sep = (0..3)
        .flat_map(|i| (i + 1..3).map(move |j| (i, j)))
        .map(|(i, j)| (roots[i] - roots[j]).norm())
        .fold(f64::INFINITY, f64::min);
    Eigen3 { values: roots, ill_conditioned: min_sep < 1e-6 * scale }
}

/// Null vector of `m - lambda I` from the largest cross product of its rows.
pub fn real_eigenvector(m: &Mat3, lambda: f64) -> Vec3 {
    let s = m - Mat3::identity() * lambda;
    let rows: [Vec3; 3] = [0, 1, 2].map(|i| s.row(i).transpose());
    [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])]
        .into_iter()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))
        .unwrap()
}

/// Numeric eigenvalues of `A` labelled to match `(lambda1, lambda2, lambda3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ASpectrum {
    pub sigma: [f64; 3],
    /// `1 - sigma_i`, computed from `A - I` to keep the tiny gap of `sigma2`.
    pub one_minus_sigma: [f64; 3],
    /// Eigenvalues of `B = (A - I) / gamma`.
    pub lambda: [f64; 3],
    pub ill_conditioned: bool,
}

pub fn a_spectrum(sys: &MomentSystem) -> Result<ASpectrum> {
    let shifted = sys.a - Mat3::identity();
    let eig = eigs_3x3_numeric(&shifted);
    let mu = eig.real_values().ok_or_else(|| Error::Numeric(format!("complex spectrum of A: {:?}", eig.values)))?;
    // ascending order is (lambda3, lambda1, lambda2)
    let labelled = [mu[1], mu[2], mu[0]];
    Ok(ASpectrum {
        sigma: labelled.map(|x| 1.0 + x),
        one_minus_sigma: labelled.map(|x| -x),
        lambda: labelled.map(|x| x / sys.gamma),
        ill_conditioned: eig.ill_conditioned,
    })
}

/// Numeric eigenvectors of `A`, scaled so that `e_i(N) . e_i = |e_i|^2`,
/// in the labelling of [`eigvecs_b1`].
pub fn a_eigenvectors(sys: &MomentSystem) -> Result<[Vec3; 3]> {
    let b = sys.b();
    let eig = eigs_3x3_numeric(&b);
    let mu = eig.real_values().ok_or_else(|| Error::Numeric(format!("complex spectrum of B: {:?}", eig.values)))?;
    let labelled = [mu[1], mu[2], mu[0]];
    let reference = eigvecs_b1(sys.params.alpha12(), sys.params.alpha21());
    let mut out = [Vec3::zeros(); 3];
    for i in 0..3 {
        let v = real_eigenvector(&b, labelled[i]);
        let proj = v.dot(&reference[i]);
        if proj == 0.0 {
            return Err(Error::Numeric(format!("eigenvector {} orthogonal to its limit", i + 1)));
        }
        out[i] = v * (reference[i].norm_squared() / proj);
    }
    Ok(out)
}

/// Coordinates of `q` in the numeric eigenbasis of `A`.
pub fn xi_numeric(sys: &MomentSystem) -> Result<[f64; 3]> {
    let [e1, e2, e3] = a_eigenvectors(sys)?;
    let basis = Mat3::from_columns(&[e1, e2, e3]);
    let x = basis.lu().solve(&sys.q).ok_or_else(|| Error::Numeric("eigenbasis of A is singular".into()))?;
    Ok([x[0], x[1], x[2]])
}

/// `B1` for the given rates (re-exported for convenience).
pub fn b1(alpha12: f64, alpha21: f64) -> Mat3 {
    b1_matrix(alpha12, alpha21)
}
