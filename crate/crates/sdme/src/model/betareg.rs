//! Maximum-likelihood beta regression with logit link in the mean/precision
//! parametrization, used for prior elicitation and the attenuation
//! demonstrations. Optionally supports per-observation weights.

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::{Result, SdmeError};

#[derive(Debug, Clone)]
pub struct BetaRegressionFit {
    pub coefficients: Vec<f64>,
    pub phi: f64,
    pub coef_standard_errors: Vec<f64>,
    pub phi_standard_error: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    weights: Option<&'a [f64]>,
}

impl Problem<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    /// Log-likelihood and gradient in `(b, phi)` on the natural scale.
    fn loglik_grad(&self, b: &DVector<f64>, phi: f64) -> (f64, DVector<f64>, f64) {
        let n = self.y.len();
        let p = b.len();
        let mut ll = 0.0;
        let mut gb = DVector::zeros(p);
        let mut gphi = 0.0;
        let lg_phi = ln_gamma(phi);
        let dg_phi = digamma(phi);
        for i in 0..n {
            let eta: f64 = (0..p).map(|k| self.x[(i, k)] * b[k]).sum();
            let mu = super::math::logistic(eta);
            let (alpha, beta) = (mu * phi, (1.0 - mu) * phi);
            let y = self.y[i];
            let (ln_y, ln_1my) = (y.ln(), (1.0 - y).ln());
            let w = self.weight(i);
            ll += w
                * (lg_phi - ln_gamma(alpha) - ln_gamma(beta)
                    + (alpha - 1.0) * ln_y
                    + (beta - 1.0) * ln_1my);
            let (dg_a, dg_b) = (digamma(alpha), digamma(beta));
            let g_eta = w * phi * (dg_b - dg_a + ln_y - ln_1my) * mu * (1.0 - mu);
            for k in 0..p {
                gb[k] += g_eta * self.x[(i, k)];
            }
            gphi += w * (dg_phi - mu * dg_a - (1.0 - mu) * dg_b + mu * ln_y + (1.0 - mu) * ln_1my);
        }
        (ll, gb, gphi)
    }

    /// Numeric Hessian of the log-likelihood in `(b, phi)` via central
    /// differences of the analytic gradient.
    fn hessian(&self, b: &DVector<f64>, phi: f64) -> DMatrix<f64> {
        let p = b.len();
        let dim = p + 1;
        let mut h = DMatrix::zeros(dim, dim);
        let step = |v: f64| 1e-5 * v.abs().max(1.0);
        for j in 0..dim {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            let (mut phip, mut phim) = (phi, phi);
            let hj = if j < p {
                let s = step(b[j]);
                bp[j] += s;
                bm[j] -= s;
                s
            } else {
                let s = step(phi);
                phip += s;
                phim -= s;
                s
            };
            let (_, gbp, gpp) = self.loglik_grad(&bp, phip);
            let (_, gbm, gpm) = self.loglik_grad(&bm, phim);
            for k in 0..p {
                h[(k, j)] = (gbp[k] - gbm[k]) / (2.0 * hj);
            }
            h[(p, j)] = (gpp - gpm) / (2.0 * hj);
        }
        // symmetrize
        for a in 0..dim {
            for c in (a + 1)..dim {
                let v = 0.5 * (h[(a, c)] + h[(c, a)]);
                h[(a, c)] = v;
                h[(c, a)] = v;
            }
        }
        h
    }
}

/// Weighted least squares of `target` on `x`; also returns the residual
/// variance on the link scale.
fn weighted_ols(
    x: &DMatrix<f64>,
    target: &[f64],
    weights: Option<&[f64]>,
) -> Result<(DVector<f64>, f64)> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..p {
            xty[a] += w * x[(i, a)] * target[i];
            for b in 0..p {
                xtx[(a, b)] += w * x[(i, a)] * x[(i, b)];
            }
        }
    }
    let chol = Cholesky::new(xtx).ok_or(SdmeError::RankDeficient(0))?;
    let b = chol.solve(&xty);
    let mut rss = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        let fit: f64 = (0..p).map(|k| x[(i, k)] * b[k]).sum();
        rss += w * (target[i] - fit).powi(2);
        wsum += w;
    }
    let dof = (wsum - p as f64).max(1.0);
    Ok((b, rss / dof))
}

/// Fits the beta regression by Newton ascent with backtracking.
///
/// `x` must include the intercept column if one is wanted; `y` must lie
/// strictly inside (0,1). Standard errors come from the inverse observed
/// information at the optimum.
pub fn mle_beta_regression(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    max_iter: usize,
    tol: f64,
) -> Result<BetaRegressionFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if n != y.len() || n == 0 {
        return Err(SdmeError::InvalidInput(format!(
            "design has {n} rows but y has {} entries",
            y.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != n || w.iter().any(|&wi| !(wi > 0.0)) {
            return Err(SdmeError::InvalidInput("weights must be positive, one per row".into()));
        }
    }
    for (i, &yi) in y.iter().enumerate() {
        if !(yi > 0.0 && yi < 1.0) {
            return Err(SdmeError::InvalidInput(format!(
                "response {yi} at row {i} is outside the open unit interval"
            )));
        }
    }

    let problem = Problem { x, y, weights };

    // start from OLS on the link scale; phi from the delta-method variance
    let link: Vec<f64> = y.iter().map(|&v| super::math::logit(v)).collect();
    let (mut b, s2) = weighted_ols(x, &link, weights)?;
    let mut phi_acc = 0.0;
    for i in 0..n {
        let eta: f64 = (0..p).map(|k| x[(i, k)] * b[k]).sum();
        let mu = super::math::logistic(eta);
        phi_acc += 1.0 / (s2 * mu * (1.0 - mu)).max(1e-12);
    }
    let mut phi = (phi_acc / n as f64 - 1.0).clamp(0.5, 1e6);

    let (mut ll, mut gb, mut gphi) = problem.loglik_grad(&b, phi);
    let mut iterations = 0;
    let mut last_delta = f64::INFINITY;
    for iter in 0..max_iter {
        iterations = iter + 1;
        // Newton step in (b, log phi)
        let dim = p + 1;
        let mut h = problem.hessian(&b, phi);
        // reparametrize the phi row/col to log phi: d/dlogphi = phi d/dphi
        for k in 0..dim {
            h[(p, k)] *= phi;
            h[(k, p)] *= phi;
        }
        h[(p, p)] += phi * gphi; // second-order term of the chain rule
        let mut g = DVector::zeros(dim);
        for k in 0..p {
            g[k] = gb[k];
        }
        g[p] = gphi * phi;

        let neg_h = -h;
        let step = match Cholesky::new(neg_h) {
            Some(chol) => chol.solve(&g),
            // Hessian not negative definite yet: fall back to scaled ascent
            None => {
                let scale = 1.0 / g.amax().max(1.0);
                g.clone() * scale
            }
        };

        // backtracking line search
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut b_new = b.clone();
            for k in 0..p {
                b_new[k] += t * step[k];
            }
            let phi_new = (phi.ln() + t * step[p]).exp();
            let (ll_new, gb_new, gphi_new) = problem.loglik_grad(&b_new, phi_new);
            if ll_new.is_finite() && ll_new > ll - 1e-12 {
                last_delta = (ll_new - ll).abs();
                b = b_new;
                phi = phi_new;
                ll = ll_new;
                gb = gb_new;
                gphi = gphi_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(SdmeError::NoConvergence {
                iters: iterations,
                delta: last_delta,
            });
        }
        let gmax = gb.amax().max((gphi * phi).abs());
        if last_delta < tol && gmax < 1e-4 {
            // observed information on the natural (b, phi) scale
            let info = -problem.hessian(&b, phi);
            let cov = info
                .try_inverse()
                .ok_or_else(|| SdmeError::RankDeficient(p))?;
            let coef_standard_errors = (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
            let phi_standard_error = cov[(p, p)].max(0.0).sqrt();
            return Ok(BetaRegressionFit {
                coefficients: b.iter().copied().collect(),
                phi,
                coef_standard_errors,
                phi_standard_error,
                log_likelihood: ll,
                iterations,
            });
        }
    }
    Err(SdmeError::NoConvergence {
        iters: iterations,
        delta: last_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::math::logistic;
    use rand::prelude::*;
    use rand_distr::{Beta, Distribution};

    fn simulate(n: usize, b0: f64, b1: f64, phi: f64, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let xi: f64 = rng.random();
            x[(i, 0)] = 1.0;
            x[(i, 1)] = xi;
            let mu = logistic(b0 + b1 * xi);
            let dist = Beta::new(mu * phi, (1.0 - mu) * phi).unwrap();
            y.push(dist.sample(&mut rng).clamp(1e-12, 1.0 - 1e-12));
        }
        (x, y)
    }

    #[test]
    fn recovers_true_coefficients_within_three_se() {
        let (x, y) = simulate(400, -1.0, 2.5, 40.0, 42);
        let fit = mle_beta_regression(&x, &y, None, 200, 1e-10).unwrap();
        assert!((fit.coefficients[0] + 1.0).abs() < 3.0 * fit.coef_standard_errors[0]);
        assert!((fit.coefficients[1] - 2.5).abs() < 3.0 * fit.coef_standard_errors[1]);
        assert!(fit.phi > 25.0 && fit.phi < 60.0, "phi {}", fit.phi);
    }

    #[test]
    fn zero_slope_detected() {
        let (x, y) = simulate(300, 0.4, 0.0, 25.0, 7);
        let fit = mle_beta_regression(&x, &y, None, 200, 1e-10).unwrap();
        assert!(fit.coefficients[1].abs() < 3.0 * fit.coef_standard_errors[1]);
    }

    #[test]
    fn agrees_with_grid_search_oracle() {
        let (x, y) = simulate(50, 0.5, -1.0, 20.0, 3);
        let fit = mle_beta_regression(&x, &y, None, 200, 1e-12).unwrap();

        // brute-force refinement of the likelihood over (b0, b1, log phi)
        let ll = |b0: f64, b1: f64, phi: f64| {
            y.iter()
                .enumerate()
                .map(|(i, &yi)| {
                    let mu = logistic(b0 + b1 * x[(i, 1)]);
                    crate::model::math::beta_lpdf_mean_precision(yi, mu, phi)
                })
                .sum::<f64>()
        };
        let mut center = (fit.coefficients[0] + 0.05, fit.coefficients[1] - 0.05, fit.phi.ln() + 0.05);
        let mut radius = 0.2;
        for _ in 0..24 {
            let mut best = (f64::NEG_INFINITY, center);
            let steps = 9;
            for a in 0..steps {
                for b in 0..steps {
                    for c in 0..steps {
                        let p = (
                            center.0 + radius * (a as f64 / (steps - 1) as f64 * 2.0 - 1.0),
                            center.1 + radius * (b as f64 / (steps - 1) as f64 * 2.0 - 1.0),
                            center.2 + radius * (c as f64 / (steps - 1) as f64 * 2.0 - 1.0),
                        );
                        let v = ll(p.0, p.1, p.2.exp());
                        if v > best.0 {
                            best = (v, p);
                        }
                    }
                }
            }
            center = best.1;
            radius *= 0.5;
        }
        assert!((center.0 - fit.coefficients[0]).abs() < 1e-4, "b0 {} vs {}", center.0, fit.coefficients[0]);
        assert!((center.1 - fit.coefficients[1]).abs() < 1e-4, "b1 {} vs {}", center.1, fit.coefficients[1]);
        assert!((center.2.exp() - fit.phi).abs() / fit.phi < 1e-4);
    }

    #[test]
    fn rejects_boundary_responses() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        assert!(mle_beta_regression(&x, &[0.2, 1.0, 0.4], None, 50, 1e-8).is_err());
    }

    #[test]
    fn rejects_rank_deficient_design() {
        // two identical columns
        let n = 40;
        let mut x = DMatrix::zeros(n, 3);
        let mut y = Vec::new();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        for i in 0..n {
            let xi: f64 = rng.random();
            x[(i, 0)] = 1.0;
            x[(i, 1)] = xi;
            x[(i, 2)] = xi;
            y.push(rng.random_range(0.1..0.9));
        }
        assert!(matches!(
            mle_beta_regression(&x, &y, None, 50, 1e-8),
            Err(SdmeError::RankDeficient(_))
        ));
    }
}
