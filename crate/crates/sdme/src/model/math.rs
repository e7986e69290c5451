//! Scalar density functions and stable link helpers used by the posteriors.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + exp(x))` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn lbeta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log beta density in the mean/precision parametrization
/// (shapes `mu*phi` and `(1-mu)*phi`).
///
/// A value at or outside the open support yields `-inf`.
pub fn beta_lpdf_mean_precision(value: f64, mu: f64, phi: f64) -> f64 {
    if !(value > 0.0 && value < 1.0) {
        return f64::NEG_INFINITY;
    }
    let alpha = mu * phi;
    let beta = phi - mu * phi;
    if !(alpha > 0.0 && beta > 0.0) {
        return f64::NEG_INFINITY;
    }
    ln_gamma(phi) - ln_gamma(alpha) - ln_gamma(beta)
        + (alpha - 1.0) * value.ln()
        + (beta - 1.0) * (1.0 - value).ln()
}

/// Beta log-density plus its partial derivatives in `(value, mu, phi)`.
/// Caller guarantees interior arguments.
pub fn beta_lpdf_mean_precision_grad(value: f64, mu: f64, phi: f64) -> (f64, f64, f64, f64) {
    let alpha = mu * phi;
    let beta = phi - mu * phi;
    let (ln_v, ln_1mv) = (value.ln(), (1.0 - value).ln());
    let (dg_a, dg_b, dg_p) = (digamma(alpha), digamma(beta), digamma(phi));
    let lp = ln_gamma(phi) - ln_gamma(alpha) - ln_gamma(beta)
        + (alpha - 1.0) * ln_v
        + (beta - 1.0) * ln_1mv;
    let d_value = (alpha - 1.0) / value - (beta - 1.0) / (1.0 - value);
    let d_mu = phi * (dg_b - dg_a + ln_v - ln_1mv);
    let d_phi = dg_p - mu * dg_a - (1.0 - mu) * dg_b + mu * ln_v + (1.0 - mu) * ln_1mv;
    (lp, d_value, d_mu, d_phi)
}

pub fn normal_lpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

/// Log normalizing constant of a normal truncated to `[lo, hi]`.
pub fn normal_truncation_ln_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).unwrap();
    (std.cdf((hi - mean) / sd) - std.cdf((lo - mean) / sd)).ln()
}

/// Gamma log-density with shape/rate parametrization.
pub fn gamma_lpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// `ln C(q, c)`.
pub fn ln_binomial_coeff(q: u32, c: u32) -> f64 {
    ln_gamma(f64::from(q) + 1.0) - ln_gamma(f64::from(c) + 1.0) - ln_gamma(f64::from(q - c) + 1.0)
}
