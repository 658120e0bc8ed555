//! Small dense helpers for the 3×3 moment recursion.

use nalgebra::{Matrix3, Vector3};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

/// `m * x + extra`, each row accumulated with compensation.
pub fn mat_vec_add(m: &Mat3, x: &Vec3, extra: &[&Vec3]) -> Vec3 {
    Vec3::from_fn(|i, _| {
        let mut s = CompensatedSum::new();
        for j in 0..3 {
            s.add(m[(i, j)] * x[j]);
        }
        for e in extra {
            s.add(e[i]);
        }
        s.value()
    })
}

/// `m^n` by binary exponentiation.
pub fn mat_pow(m: &Mat3, mut n: u64) -> Mat3 {
    let mut result = Mat3::identity();
    let mut base = *m;
    while n > 0 {
        if n & 1 == 1 {
            result *= base;
        }
        base = base * base;
        n >>= 1;
    }
    result
}

/// Infinity-norm condition number, `inf` when singular.
pub fn condition_number(m: &Mat3) -> f64 {
    match m.try_inverse() {
        Some(inv) => inf_norm(m) * inf_norm(&inv),
        None => f64::INFINITY,
    }
}

pub fn inf_norm(m: &Mat3) -> f64 {
    (0..3)
        .map(|i| (0..3).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solve `m x = b` by LU; returns the solution and its relative residual.
pub fn solve_with_residual(m: &Mat3, b: &Vec3) -> Option<(Vec3, f64)> {
    let x = m.lu().solve(b)?;
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let r = m * x - b;
    let scale = b.norm().max(inf_norm(m) * x.norm()).max(f64::MIN_POSITIVE);
    Some((x, r.norm() / scale))
}

/// Relative distance with an absolute floor, used by tests and checks.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
