//! Bijections between the sampler's unconstrained space and the constrained
//! parameter scale, with log-Jacobian bookkeeping.

use super::math::{log1p_exp, logistic, logit};

/// Per-coordinate transform from unconstrained `z` to constrained `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    /// `theta = exp(z)`, support `(0, inf)`.
    Log,
    /// `theta = logistic(z)`, support `(0, 1)`.
    LogitUnit,
    /// `theta = lo + (hi - lo) * logistic(z)`, support `(lo, hi)`.
    Interval(f64, f64),
}

/// Unit-interval values are kept this far from {0, 1} so that downstream
/// `1/theta` and `1/(1-theta)` terms stay finite even in saturated tails.
const UNIT_CLAMP: f64 = 1e-15;

impl Transform {
    pub fn constrain(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::LogitUnit => logistic(z).clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP),
            Transform::Interval(lo, hi) => {
                lo + (hi - lo) * logistic(z).clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP)
            }
        }
    }

    pub fn unconstrain(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Log => theta.ln(),
            Transform::LogitUnit => logit(theta),
            Transform::Interval(lo, hi) => logit((theta - lo) / (hi - lo)),
        }
    }

    /// `ln |d theta / d z|` at `z`.
    pub fn log_jacobian(self, z: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => z,
            Transform::LogitUnit => -log1p_exp(z) - log1p_exp(-z),
            Transform::Interval(lo, hi) => (hi - lo).ln() - log1p_exp(z) - log1p_exp(-z),
        }
    }

    /// `d theta / d z` given the already-constrained value.
    pub fn dtheta_dz(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => theta,
            Transform::LogitUnit => theta * (1.0 - theta),
            Transform::Interval(lo, hi) => (theta - lo) * (hi - theta) / (hi - lo),
        }
    }

    /// `d ln|J| / d z` given the already-constrained value.
    pub fn dlogj_dz(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => 1.0,
            Transform::LogitUnit => 1.0 - 2.0 * theta,
            Transform::Interval(lo, hi) => 1.0 - 2.0 * (theta - lo) / (hi - lo),
        }
    }
}

/// Named, transform-annotated parameter space.
#[derive(Debug, Clone)]
pub struct TransformedSpace {
    pub transforms: Vec<Transform>,
    pub names: Vec<String>,
}

impl TransformedSpace {
    pub fn dim(&self) -> usize {
        self.transforms.len()
    }

    /// Fills `theta` from `z` and returns the total log-Jacobian.
    pub fn constrain(&self, z: &[f64], theta: &mut [f64]) -> f64 {
        let mut log_jac = 0.0;
        for ((t, &zi), out) in self.transforms.iter().zip(z).zip(theta.iter_mut()) {
            *out = t.constrain(zi);
            log_jac += t.log_jacobian(zi);
        }
        log_jac
    }

    pub fn unconstrain(&self, theta: &[f64], z: &mut [f64]) {
        for ((t, &ti), out) in self.transforms.iter().zip(theta).zip(z.iter_mut()) {
            *out = t.unconstrain(ti);
        }
    }

    /// Converts a constrained-scale gradient into the unconstrained-scale
    /// gradient of `lp(theta(z)) + ln|J(z)|`.
    pub fn chain_gradient(&self, theta: &[f64], grad_theta: &[f64], grad_z: &mut [f64]) {
        for i in 0..self.transforms.len() {
            let t = self.transforms[i];
            grad_z[i] = grad_theta[i] * t.dtheta_dz(theta[i]) + t.dlogj_dz(theta[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_jacobians() {
        let cases = [
            (Transform::Identity, 0.7),
            (Transform::Log, -0.3),
            (Transform::LogitUnit, 1.2),
            (Transform::Interval(10.0, 60.0), -0.9),
        ];
        let h = 1e-6;
        for (t, z) in cases {
            let theta = t.constrain(z);
            assert!((t.unconstrain(theta) - z).abs() < 1e-9, "{t:?}");
            // d theta / d z by finite differences
            let fd = (t.constrain(z + h) - t.constrain(z - h)) / (2.0 * h);
            assert!((t.dtheta_dz(theta) - fd).abs() < 1e-6, "{t:?}");
            // d ln|J| / d z by finite differences
            let fd = (t.log_jacobian(z + h) - t.log_jacobian(z - h)) / (2.0 * h);
            assert!((t.dlogj_dz(theta) - fd).abs() < 1e-6, "{t:?}");
        }
    }

    #[test]
    fn interval_respects_bounds() {
        let t = Transform::Interval(10.0, 60.0);
        for z in [-50.0, -3.0, 0.0, 3.0, 50.0] {
            let v = t.constrain(z);
            assert!((10.0..=60.0).contains(&v));
        }
    }
}
