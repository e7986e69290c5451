//! Analytic calibration targets with known moments, used to validate the
//! sampler and its Jacobian handling.

use crate::model::math::{log1p_exp, logistic};
use crate::model::LogDensity;

/// Independent standard normals.
pub struct StdNormal {
    pub dim: usize,
}

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..self.dim {
            lp -= 0.5 * z[i] * z[i];
            grad[i] = -z[i];
        }
        lp
    }
}

/// Beta(alpha, beta) sampled through the logit transform; draws are reported
/// on the unit interval, so the Jacobian term is exercised.
pub struct BetaLogit {
    pub alpha: f64,
    pub beta: f64,
}

impl LogDensity for BetaLogit {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        // beta kernel plus the logit Jacobian: alpha*ln(theta) + beta*ln(1-theta)
        let theta = logistic(z[0]);
        let (ln_t, ln_1mt) = (-log1p_exp(-z[0]), -log1p_exp(z[0]));
        grad[0] = self.alpha * (1.0 - theta) - self.beta * theta;
        self.alpha * ln_t + self.beta * ln_1mt
    }

    fn parameter_names(&self) -> Vec<String> {
        vec!["theta".to_string()]
    }

    fn constrain(&self, z: &[f64], out: &mut [f64]) {
        out[0] = logistic(z[0]);
    }
}

/// Bivariate normal with unit variances and correlation `rho`.
pub struct CorrelatedNormal2 {
    pub rho: f64,
}

impl LogDensity for CorrelatedNormal2 {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.rho;
        let det = 1.0 - r * r;
        let (a, b) = (z[0], z[1]);
        let lp = -0.5 * (a * a - 2.0 * r * a * b + b * b) / det;
        grad[0] = -(a - r * b) / det;
        grad[1] = -(b - r * a) / det;
        lp
    }
}
