//! Unnormalized log-posteriors with analytic gradients on the unconstrained
//! scale, for the SDME, weighted, and naive observation models.
//!
//! Parameter blocks (per model kind, in order):
//!
//! * regression coefficients `b` (identity scale)
//! * spatial effects `u` and `log tau_u` (when spatial effects are on)
//! * precision `phi` (interval-transformed to its truncation bounds)
//! * latent proportions `y` at testing/unsampled sites (SDME, logit scale)
//! * subject performance `se`/`sp` (SDME) or `acc` (weighted), logit scale
//! * unstructured noise `eps` and `log sigma_eps` (when enabled)
//!
//! Every transform contributes its log-Jacobian, so the density integrates
//! correctly against the unconstrained coordinates the sampler works in.

use std::sync::atomic::{AtomicUsize, Ordering};

use statrs::function::gamma::{digamma, ln_gamma};

use super::math::{
    gamma_lpdf, ln_binomial_coeff, log1p_exp, logistic, logit, normal_lpdf,
    normal_truncation_ln_mass, LN_2PI,
};
use super::transforms::{Transform, TransformedSpace};
use super::{ModelKind, ModelSpec, SdmeLikelihood};
use crate::{Result, SdmeError};

/// A differentiable unnormalized log density over an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `z`, filling `grad`. May return `-inf` (or NaN, treated
    /// as out of support); the gradient contents are unspecified in that case.
    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;

    fn parameter_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta[{i}]")).collect()
    }

    /// Maps unconstrained coordinates to the reported (constrained) scale.
    fn constrain(&self, z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(z);
    }
}

#[derive(Debug, Clone, Copy)]
enum SiteY {
    Known { value: f64, ln: f64, ln1m: f64 },
    Latent(usize),
}

#[derive(Debug, Clone, Copy)]
struct ObsTerm {
    subject: usize,
    site: usize,
    count: f64,
    fail: f64,
    /// Boundary-nudged apparent value and its logs (beta likelihoods).
    ln_v: f64,
    ln_1mv: f64,
}

/// Per-site sufficient statistics for the naive likelihood.
#[derive(Debug, Clone, Copy, Default)]
struct NaiveSiteStats {
    n: f64,
    sum_ln_v: f64,
    sum_ln_1mv: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Offsets {
    b: usize,
    u: Option<usize>,
    tau: Option<usize>,
    phi: usize,
    y: Option<usize>,
    se: Option<usize>,
    sp: Option<usize>,
    acc: Option<usize>,
    eps: Option<usize>,
    sigma_eps: Option<usize>,
}

/// A [`ModelSpec`] compiled for repeated density/gradient evaluation.
pub struct Posterior {
    spec: ModelSpec,
    space: TransformedSpace,
    off: Offsets,
    icar: Option<super::icar::IcarModel>,
    obs: Vec<ObsTerm>,
    site_y: Vec<SiteY>,
    n_latent: usize,
    naive_stats: Vec<NaiveSiteStats>,
    /// Data-only constants folded into the density so reported values are
    /// comparable across likelihood choices.
    ln_const: f64,
    invalid_weight_warnings: AtomicUsize,
}

impl Posterior {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let m = spec.n_sites();
        let _n_subj = spec.n_subjects();
        let p = spec.p;
        let spatial = spec.config.spatial_effects;
        let epsilon = spec.config.unstructured_noise;
        let phi = spec.priors.phi;
        if !(phi.lower < phi.upper) {
            return Err(SdmeError::InvalidInput("phi bounds must be ordered".into()));
        }

        let mut transforms = Vec::new();
        let mut names = Vec::new();
        let mut off = Offsets::default();

        off.b = transforms.len();
        for k in 0..p {
            transforms.push(Transform::Identity);
            names.push(spec.coef_names[k].clone());
        }
        if spatial {
            off.u = Some(transforms.len());
            for j in 0..m {
                transforms.push(Transform::Identity);
                names.push(format!("u[{}]", spec.graph.site_ids[j]));
            }
            off.tau = Some(transforms.len());
            transforms.push(Transform::Log);
            names.push("tau_u".to_string());
        }
        off.phi = transforms.len();
        transforms.push(Transform::Interval(phi.lower, phi.upper));
        names.push("phi".to_string());

        let latent_sites = spec.latent_sites();
        let mut site_y: Vec<SiteY> = spec
            .known_y
            .iter()
            .map(|ky| match ky {
                Some(v) => SiteY::Known {
                    value: *v,
                    ln: v.ln(),
                    ln1m: (1.0 - v).ln(),
                },
                None => SiteY::Latent(usize::MAX),
            })
            .collect();
        if spec.config.kind == ModelKind::Sdme {
            off.y = Some(transforms.len());
            for (k, &j) in latent_sites.iter().enumerate() {
                site_y[j] = SiteY::Latent(k);
                transforms.push(Transform::LogitUnit);
                names.push(format!("y[{}]", spec.graph.site_ids[j]));
            }
        }
        match spec.config.kind {
            ModelKind::Sdme => {
                off.se = Some(transforms.len());
                for id in &spec.subject_ids {
                    transforms.push(Transform::LogitUnit);
                    names.push(format!("se[{id}]"));
                }
                off.sp = Some(transforms.len());
                for id in &spec.subject_ids {
                    transforms.push(Transform::LogitUnit);
                    names.push(format!("sp[{id}]"));
                }
            }
            ModelKind::Weighted => {
                off.acc = Some(transforms.len());
                for id in &spec.subject_ids {
                    transforms.push(Transform::LogitUnit);
                    names.push(format!("acc[{id}]"));
                }
            }
            ModelKind::Naive => {}
        }
        if epsilon {
            off.eps = Some(transforms.len());
            for j in 0..m {
                transforms.push(Transform::Identity);
                names.push(format!("eps[{}]", spec.graph.site_ids[j]));
            }
            off.sigma_eps = Some(transforms.len());
            transforms.push(Transform::Log);
            names.push("sigma_eps".to_string());
        }

        let nudge = 1.0 / (2.0 * f64::from(spec.q));
        let obs: Vec<ObsTerm> = spec
            .observations
            .iter()
            .map(|o| {
                let v = o.apparent().clamp(nudge, 1.0 - nudge);
                ObsTerm {
                    subject: o.subject,
                    site: o.site,
                    count: f64::from(o.positives),
                    fail: f64::from(o.q - o.positives),
                    ln_v: v.ln(),
                    ln_1mv: (1.0 - v).ln(),
                }
            })
            .collect();

        let mut naive_stats = vec![NaiveSiteStats::default(); m];
        for t in &obs {
            let s = &mut naive_stats[t.site];
            s.n += 1.0;
            s.sum_ln_v += t.ln_v;
            s.sum_ln_1mv += t.ln_1mv;
        }

        // density constants: binomial coefficients, truncation mass, prior
        // beta normalizers
        let mut ln_const = 0.0;
        if spec.config.kind == ModelKind::Sdme
            && spec.config.likelihood == SdmeLikelihood::Binomial
        {
            for o in &spec.observations {
                ln_const += ln_binomial_coeff(o.q, o.positives);
            }
        }
        ln_const -= normal_truncation_ln_mass(phi.mean, phi.sd, phi.lower, phi.upper);
        let lbeta_sum: f64 = match spec.config.kind {
            ModelKind::Sdme => spec
                .priors
                .se_shapes
                .iter()
                .chain(&spec.priors.sp_shapes)
                .map(|&(a, b)| super::math::lbeta(a, b))
                .sum(),
            ModelKind::Weighted => spec
                .priors
                .acc_shapes
                .iter()
                .map(|&(a, b)| super::math::lbeta(a, b))
                .sum(),
            ModelKind::Naive => 0.0,
        };
        ln_const -= lbeta_sum;

        let icar = spatial.then(|| super::icar::IcarModel::new(&spec.graph));
        let space = TransformedSpace { transforms, names };
        let n_latent = latent_sites.len();

        Ok(Self {
            spec,
            space,
            off,
            icar,
            obs,
            site_y,
            n_latent,
            naive_stats,
            ln_const,
            invalid_weight_warnings: AtomicUsize::new(0),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_latent_sites(&self) -> usize {
        self.n_latent
    }

    /// How often the weighted likelihood hit an invalid shape
    /// (`mu * w >= 1`) and contributed `-inf`.
    pub fn invalid_weight_warnings(&self) -> usize {
        self.invalid_weight_warnings.load(Ordering::Relaxed)
    }

    /// Log density with the offending term named when non-finite.
    pub fn check(&self, z: &[f64]) -> Result<f64> {
        let mut grad = vec![0.0; self.dim()];
        let (lp, stage) = self.eval(z, &mut grad);
        if lp.is_finite() {
            Ok(lp)
        } else {
            Err(SdmeError::NonFiniteDensity(
                stage.unwrap_or("unknown term").to_string(),
            ))
        }
    }

    pub fn constrained(&self, z: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        self.space.constrain(z, &mut theta);
        theta
    }

    pub fn unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        self.space.unconstrain(theta, &mut z);
        z
    }

    /// Transform-scale centers at prior means (the prior-jitter strategy
    /// perturbs around these).
    pub fn prior_centers(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        let pri = &self.spec.priors;
        for k in 0..self.spec.p {
            theta[self.off.b + k] = pri.b_mean[k];
        }
        if let Some(u0) = self.off.u {
            for j in 0..self.spec.n_sites() {
                theta[u0 + j] = 0.0;
            }
        }
        if let Some(t0) = self.off.tau {
            theta[t0] = pri.tau.shape / pri.tau.rate;
        }
        theta[self.off.phi] = pri
            .phi
            .mean
            .clamp(pri.phi.lower + 1e-3, pri.phi.upper - 1e-3);
        if let Some(y0) = self.off.y {
            for k in 0..self.n_latent {
                theta[y0 + k] = 0.5;
            }
        }
        if let Some(se0) = self.off.se {
            for (i, &(a, b)) in pri.se_shapes.iter().enumerate() {
                theta[se0 + i] = (a / (a + b)).clamp(0.02, 0.98);
            }
        }
        if let Some(sp0) = self.off.sp {
            for (i, &(a, b)) in pri.sp_shapes.iter().enumerate() {
                theta[sp0 + i] = (a / (a + b)).clamp(0.02, 0.98);
            }
        }
        if let Some(a0) = self.off.acc {
            for (i, &(a, b)) in pri.acc_shapes.iter().enumerate() {
                theta[a0 + i] = (a / (a + b)).clamp(0.02, 0.98);
            }
        }
        if let Some(e0) = self.off.eps {
            for j in 0..self.spec.n_sites() {
                theta[e0 + j] = 0.0;
            }
        }
        if let Some(s0) = self.off.sigma_eps {
            theta[s0] = 0.5 * pri.sigma_eps_scale;
        }
        // the weighted likelihood is only supported where mu_j < acc_i for
        // every observed pair; start with flat means and near-perfect
        // accuracies so jittered chains begin inside the support
        if self.spec.config.kind == ModelKind::Weighted {
            for k in 0..self.spec.p {
                theta[self.off.b + k] = 0.0;
            }
            if let Some(a0) = self.off.acc {
                for i in 0..self.spec.n_subjects() {
                    theta[a0 + i] = 0.99;
                }
            }
        }
        self.unconstrained(&theta)
    }

    /// Data-informed centers: latent proportions start at the direct
    /// correction of each site's mean apparent value under the prior-mean
    /// performance measures; everything else at prior centers (the
    /// coefficient prior means already come from the training MLE).
    pub fn data_informed_centers(&self) -> Vec<f64> {
        let mut z = self.prior_centers();
        let Some(y0) = self.off.y else { return z };
        let pri = &self.spec.priors;
        let mean_of = |shapes: &[(f64, f64)]| {
            if shapes.is_empty() {
                1.0
            } else {
                shapes.iter().map(|&(a, b)| a / (a + b)).sum::<f64>() / shapes.len() as f64
            }
        };
        let (se_bar, sp_bar) = (mean_of(&pri.se_shapes), mean_of(&pri.sp_shapes));
        let mut sums = vec![(0.0f64, 0u32); self.spec.n_sites()];
        for o in &self.obs {
            let v = (o.count) / (o.count + o.fail);
            sums[o.site].0 += v;
            sums[o.site].1 += 1;
        }
        let correct = |yhat: f64| {
            super::direct_correction(yhat, se_bar, sp_bar)
                .unwrap_or(yhat)
                .clamp(0.02, 0.98)
        };
        let mut corrected = Vec::new();
        for (j, sy) in self.site_y.iter().enumerate() {
            if let SiteY::Latent(k) = sy {
                if sums[j].1 > 0 {
                    let y = correct(sums[j].0 / f64::from(sums[j].1));
                    z[y0 + k] = logit(y);
                    corrected.push(y);
                }
            }
        }
        let fallback = if corrected.is_empty() {
            0.0
        } else {
            logit(corrected.iter().sum::<f64>() / corrected.len() as f64)
        };
        for (j, sy) in self.site_y.iter().enumerate() {
            if let SiteY::Latent(k) = sy {
                if sums[j].1 == 0 {
                    z[y0 + k] = fallback;
                }
            }
        }
        z
    }

    /// Core evaluation: log density plus Jacobian, gradient in `grad_z`,
    /// and the name of the first non-finite term if any.
    fn eval(&self, z: &[f64], grad_z: &mut [f64]) -> (f64, Option<&'static str>) {
        let dim = self.dim();
        debug_assert_eq!(z.len(), dim);
        let spec = &self.spec;
        let (m, p) = (spec.n_sites(), spec.p);
        let off = self.off;

        let mut theta = vec![0.0; dim];
        let log_jac = self.space.constrain(z, &mut theta);
        if !theta.iter().all(|v| v.is_finite()) || !log_jac.is_finite() {
            return (f64::NEG_INFINITY, Some("parameter transform"));
        }
        let mut grad_theta = vec![0.0; dim];

        let phi = theta[off.phi];
        let (lg_phi, dg_phi) = (ln_gamma(phi), digamma(phi));

        // linear predictor and beta mean per site
        let mut eta = vec![0.0; m];
        for j in 0..m {
            let row = &spec.design[j * p..(j + 1) * p];
            let mut acc = 0.0;
            for k in 0..p {
                acc += row[k] * theta[off.b + k];
            }
            if let Some(u0) = off.u {
                acc += theta[u0 + j];
            }
            if let Some(e0) = off.eps {
                acc += theta[e0 + j];
            }
            eta[j] = acc;
        }
        let mu: Vec<f64> = eta.iter().map(|&e| logistic(e).clamp(1e-15, 1.0 - 1e-15)).collect();
        let mut d_eta = vec![0.0; m];

        let mut lp = self.ln_const;
        let mut d_phi = 0.0;

        // stable logs of the latent proportions, straight from z
        let latent_ln: Vec<(f64, f64)> = match off.y {
            Some(y0) => (0..self.n_latent)
                .map(|k| (-log1p_exp(-z[y0 + k]), -log1p_exp(z[y0 + k])))
                .collect(),
            None => Vec::new(),
        };

        // latent beta regression: every site ties its proportion to mu, phi
        if spec.config.kind == ModelKind::Sdme {
            let y0 = off.y.expect("sdme has latent block");
            for j in 0..m {
                let (y, ln_y, ln_1my, latent) = match self.site_y[j] {
                    SiteY::Known { value, ln, ln1m } => (value, ln, ln1m, None),
                    SiteY::Latent(k) => {
                        let y = theta[y0 + k];
                        (y, latent_ln[k].0, latent_ln[k].1, Some(k))
                    }
                };
                let mu_j = mu[j];
                let (a, bsh) = (mu_j * phi, phi - mu_j * phi);
                lp += lg_phi - ln_gamma(a) - ln_gamma(bsh)
                    + (a - 1.0) * ln_y
                    + (bsh - 1.0) * ln_1my;
                let (dga, dgb) = (digamma(a), digamma(bsh));
                let g_mu = phi * (dgb - dga + ln_y - ln_1my);
                d_eta[j] += g_mu * mu_j * (1.0 - mu_j);
                d_phi += dg_phi - mu_j * dga - (1.0 - mu_j) * dgb
                    + mu_j * ln_y
                    + (1.0 - mu_j) * ln_1my;
                if let Some(k) = latent {
                    grad_theta[y0 + k] += (a - 1.0) / y - (bsh - 1.0) / (1.0 - y);
                }
            }
            if !lp.is_finite() {
                return (lp.min(f64::NEG_INFINITY), Some("latent beta regression"));
            }
        }

        // observation likelihood
        match spec.config.kind {
            ModelKind::Sdme => {
                let y0 = off.y.expect("sdme has latent block");
                let (se0, sp0) = (off.se.unwrap(), off.sp.unwrap());
                for t in &self.obs {
                    let (y, latent) = match self.site_y[t.site] {
                        SiteY::Known { value, .. } => (value, None),
                        SiteY::Latent(k) => (theta[y0 + k], Some(k)),
                    };
                    let se = theta[se0 + t.subject];
                    let sp = theta[sp0 + t.subject];
                    let pi = (y * se + (1.0 - y) * (1.0 - sp)).clamp(1e-300, 1.0 - 1e-16);
                    let g_pi = match spec.config.likelihood {
                        SdmeLikelihood::Binomial => {
                            lp += t.count * pi.ln() + t.fail * (1.0 - pi).ln();
                            t.count / pi - t.fail / (1.0 - pi)
                        }
                        SdmeLikelihood::Beta { kappa } => {
                            let (a, bsh) = (pi * kappa, (1.0 - pi) * kappa);
                            lp += ln_gamma(kappa) - ln_gamma(a) - ln_gamma(bsh)
                                + (a - 1.0) * t.ln_v
                                + (bsh - 1.0) * t.ln_1mv;
                            kappa * (digamma(bsh) - digamma(a) + t.ln_v - t.ln_1mv)
                        }
                    };
                    if let Some(k) = latent {
                        grad_theta[y0 + k] += g_pi * (se + sp - 1.0);
                    }
                    grad_theta[se0 + t.subject] += g_pi * y;
                    grad_theta[sp0 + t.subject] += g_pi * (y - 1.0);
                }
            }
            ModelKind::Weighted => {
                let a0 = off.acc.expect("weighted has acc block");
                for t in &self.obs {
                    let mu_j = mu[t.site];
                    let acc = theta[a0 + t.subject];
                    let w = 1.0 / acc;
                    let a = mu_j * w * phi;
                    if !(a > 0.0 && a < phi) {
                        // the paper's shape scaling permits beta_ij <= 0; we
                        // fault-signal instead of silently reparametrizing
                        self.invalid_weight_warnings.fetch_add(1, Ordering::Relaxed);
                        return (f64::NEG_INFINITY, Some("weighted observation shapes"));
                    }
                    let bsh = phi - a;
                    lp += lg_phi - ln_gamma(a) - ln_gamma(bsh)
                        + (a - 1.0) * t.ln_v
                        + (bsh - 1.0) * t.ln_1mv;
                    let s = digamma(bsh) - digamma(a) + t.ln_v - t.ln_1mv;
                    d_eta[t.site] += s * w * phi * mu_j * (1.0 - mu_j);
                    grad_theta[a0 + t.subject] -= s * mu_j * phi * w * w;
                    d_phi += dg_phi - digamma(bsh) + t.ln_1mv + s * mu_j * w;
                }
            }
            ModelKind::Naive => {
                for (j, st) in self.naive_stats.iter().enumerate() {
                    if st.n == 0.0 {
                        continue;
                    }
                    let mu_j = mu[j];
                    let (a, bsh) = (mu_j * phi, phi - mu_j * phi);
                    lp += st.n * (lg_phi - ln_gamma(a) - ln_gamma(bsh))
                        + (a - 1.0) * st.sum_ln_v
                        + (bsh - 1.0) * st.sum_ln_1mv;
                    let (dga, dgb) = (digamma(a), digamma(bsh));
                    d_eta[j] += phi
                        * (st.n * (dgb - dga) + st.sum_ln_v - st.sum_ln_1mv)
                        * mu_j
                        * (1.0 - mu_j);
                    d_phi += st.n * (dg_phi - mu_j * dga - (1.0 - mu_j) * dgb)
                        + mu_j * st.sum_ln_v
                        + (1.0 - mu_j) * st.sum_ln_1mv;
                }
            }
        }
        if !lp.is_finite() {
            return (lp.min(f64::NEG_INFINITY), Some("observation likelihood"));
        }

        // spatial prior
        if let (Some(icar), Some(u0), Some(t0)) = (&self.icar, off.u, off.tau) {
            let tau = theta[t0];
            let mut grad_tau = 0.0;
            lp += icar.lpdf_grad(
                &theta[u0..u0 + m],
                tau,
                super::icar::SumToZero::Soft,
                Some(&mut grad_theta[u0..u0 + m]),
                Some(&mut grad_tau),
            );
            grad_theta[t0] += grad_tau;
            lp += gamma_lpdf(tau, spec.priors.tau.shape, spec.priors.tau.rate);
            grad_theta[t0] += (spec.priors.tau.shape - 1.0) / tau - spec.priors.tau.rate;
            if !lp.is_finite() {
                return (lp.min(f64::NEG_INFINITY), Some("spatial prior"));
            }
        }

        // remaining priors
        let pri = &spec.priors;
        for k in 0..p {
            let b = theta[off.b + k];
            lp += normal_lpdf(b, pri.b_mean[k], pri.b_sd);
            grad_theta[off.b + k] += -(b - pri.b_mean[k]) / (pri.b_sd * pri.b_sd);
        }
        lp += normal_lpdf(phi, pri.phi.mean, pri.phi.sd);
        d_phi += -(phi - pri.phi.mean) / (pri.phi.sd * pri.phi.sd);

        // beta priors on unit-interval subject parameters, with logs taken
        // stably from the unconstrained coordinates
        let unit_prior = |offset: usize, shapes: &[(f64, f64)], grad_theta: &mut [f64], lp: &mut f64| {
            for (i, &(a, b)) in shapes.iter().enumerate() {
                let zi = z[offset + i];
                let v = theta[offset + i];
                let (ln_v, ln_1mv) = (-log1p_exp(-zi), -log1p_exp(zi));
                *lp += (a - 1.0) * ln_v + (b - 1.0) * ln_1mv;
                grad_theta[offset + i] += (a - 1.0) / v - (b - 1.0) / (1.0 - v);
            }
        };
        if let Some(se0) = off.se {
            unit_prior(se0, &pri.se_shapes, &mut grad_theta, &mut lp);
        }
        if let Some(sp0) = off.sp {
            unit_prior(sp0, &pri.sp_shapes, &mut grad_theta, &mut lp);
        }
        if let Some(a0) = off.acc {
            unit_prior(a0, &pri.acc_shapes, &mut grad_theta, &mut lp);
        }

        if let (Some(e0), Some(s0)) = (off.eps, off.sigma_eps) {
            let sigma = theta[s0];
            for j in 0..m {
                let e = theta[e0 + j];
                lp += -0.5 * (e / sigma).powi(2) - sigma.ln() - 0.5 * LN_2PI;
                grad_theta[e0 + j] += -e / (sigma * sigma);
                grad_theta[s0] += e * e / (sigma * sigma * sigma) - 1.0 / sigma;
            }
            let scale = pri.sigma_eps_scale;
            lp += std::f64::consts::LN_2 - 0.5 * (sigma / scale).powi(2) - scale.ln() - 0.5 * LN_2PI;
            grad_theta[s0] += -sigma / (scale * scale);
        }
        if !lp.is_finite() {
            return (lp.min(f64::NEG_INFINITY), Some("parameter priors"));
        }

        // fold the linear-predictor gradient back into b, u, eps
        for j in 0..m {
            let g = d_eta[j];
            if g != 0.0 {
                let row = &spec.design[j * p..(j + 1) * p];
                for k in 0..p {
                    grad_theta[off.b + k] += g * row[k];
                }
                if let Some(u0) = off.u {
                    grad_theta[u0 + j] += g;
                }
                if let Some(e0) = off.eps {
                    grad_theta[e0 + j] += g;
                }
            }
        }
        grad_theta[off.phi] += d_phi;

        self.space.chain_gradient(&theta, &grad_theta, grad_z);
        (lp + log_jac, None)
    }
}

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(z, grad).0
    }

    fn parameter_names(&self) -> Vec<String> {
        self.space.names.clone()
    }

    fn constrain(&self, z: &[f64], out: &mut [f64]) {
        self.space.constrain(z, out);
    }
}
