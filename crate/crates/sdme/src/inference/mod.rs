//! End-to-end fitting: prior elicitation from the training partition,
//! sampling, posterior summaries, latent-field prediction, coverage scoring,
//! and replicated model comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{exclude_low_accuracy, Dataset, Partition};
use crate::model::math::logistic;
use crate::model::{
    mle_beta_regression, ModelConfig, ModelKind, ModelSpec, Posterior, Priors,
};
use crate::sampler::diagnostics::{ess_and_mcse, sorted_quantile, split_rhat};
use crate::sampler::{run_chains, InitStrategy, PosteriorDraws, SamplerConfig};
use crate::simulate::{simulate, SimulationConfig, SimulationTruth};
use crate::{Result, SdmeError};

/// How chains are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Uniform(-2, 2) jitter around prior/MLE centers on the transform scale.
    PriorJitter,
    /// Latent proportions start at the direct correction of the mean apparent
    /// value; narrower jitter.
    DataInformed,
}

impl Default for InitKind {
    fn default() -> Self {
        InitKind::PriorJitter
    }
}

/// One row of the posterior summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub se_mean: Option<f64>,
    pub sd: f64,
    pub p2_5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p97_5: f64,
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub ess_tail: Option<f64>,
}

/// Posterior (or known) state of one site's latent proportion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePosterior {
    pub site_id: i64,
    pub partition: Partition,
    /// "known" for training sites, "latent" for sampled latent proportions,
    /// "mean_proportion" when the model has no latent layer and the site-level
    /// beta mean is reported instead.
    pub source: String,
    pub mean: f64,
    pub sd: f64,
    pub hdi_lo: f64,
    pub hdi_hi: f64,
    /// 1-based quintile class of this site within the fitted field.
    pub quintile: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub max_core_rhat: Option<f64>,
    pub divergences: usize,
    pub divergence_rate: f64,
    pub warnings: Vec<String>,
}

/// Everything a fit produces.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub kind: ModelKind,
    pub model_config: ModelConfig,
    pub sampler_config: SamplerConfig,
    pub priors: Priors,
    pub draws: PosteriorDraws,
    pub summary: Vec<ParamSummary>,
    pub sites: Vec<SitePosterior>,
    pub diagnostics: FitDiagnostics,
    /// (site_id, partition) in dense order, for downstream scoring.
    pub site_partitions: Vec<(i64, Partition)>,
}

/// Shortest interval containing `mass` of the draws.
pub fn hdi(draws: &[f64], mass: f64) -> (f64, f64) {
    assert!(!draws.is_empty());
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[k - 1]);
    let mut width = best.1 - best.0;
    for i in 1..=(n - k) {
        let w = sorted[i + k - 1] - sorted[i];
        if w < width {
            width = w;
            best = (sorted[i], sorted[i + k - 1]);
        }
    }
    best
}

/// 1-based quintile class of every value, with breaks at the empirical
/// 20/40/60/80th percentiles of the field itself.
pub fn quintile_classes(field: &[f64]) -> Vec<usize> {
    let mut sorted = field.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let breaks: Vec<f64> = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .map(|&p| sorted_quantile(&sorted, p))
        .collect();
    field
        .iter()
        .map(|&v| breaks.iter().filter(|&&b| v > b).count() + 1)
        .collect()
}

/// Summary table over all parameters: mean, Monte Carlo SE, sd, percentiles,
/// and convergence diagnostics.
pub fn summarize(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    (0..draws.n_params)
        .map(|p| {
            let pooled = draws.pooled(p);
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            let sd = if pooled.len() > 1 {
                (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let mut sorted = pooled;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let chains = draws.param_chains(p);
            let ess = ess_and_mcse(&chains).ok();
            ParamSummary {
                name: draws.names[p].clone(),
                mean,
                se_mean: ess.map(|e| e.mcse_mean),
                sd,
                p2_5: sorted_quantile(&sorted, 0.025),
                p25: sorted_quantile(&sorted, 0.25),
                p50: sorted_quantile(&sorted, 0.50),
                p75: sorted_quantile(&sorted, 0.75),
                p97_5: sorted_quantile(&sorted, 0.975),
                rhat: split_rhat(&chains).ok(),
                ess_bulk: ess.map(|e| e.bulk),
                ess_tail: ess.map(|e| e.tail),
            }
        })
        .collect()
}

/// Derives the informative priors from the training partition: per-subject
/// beta shapes (with a pooled fallback) and coefficient prior means from the
/// training MLE beta regression. Returns warnings for every fallback taken.
pub fn derive_priors(dataset: &Dataset, config: &ModelConfig) -> Result<(Priors, Vec<String>)> {
    let mut warnings = Vec::new();
    let (n_train, _, _) = dataset.sites.partition_counts();
    if n_train == 0 {
        return Err(SdmeError::InvalidInput(
            "training partition is empty; informative priors cannot be derived".into(),
        ));
    }

    let scores = dataset.score_subjects_on_training();
    // pooled confusion across all subjects as the population-level fallback
    let pooled = {
        let training_images: std::collections::BTreeSet<i64> = dataset
            .sites
            .sites
            .iter()
            .filter(|s| s.partition == Partition::Training)
            .map(|s| s.site_id)
            .collect();
        let mut counts = crate::domain::ConfusionCounts::default();
        for r in &dataset.records {
            if !training_images.contains(&r.image_id) {
                continue;
            }
            let Some(t) = r.true_label else { continue };
            match (r.z, t) {
                (1, 1) => counts.true_pos += 1,
                (0, 0) => counts.true_neg += 1,
                (1, 0) => counts.false_pos += 1,
                (0, 1) => counts.false_neg += 1,
                _ => {}
            }
        }
        crate::domain::performance_measures(&counts)
    };
    let fallback_precision = config.subject_prior_fallback_precision;
    let fallback = |shapes: Option<(f64, f64)>, what: &str, id: i64, warnings: &mut Vec<String>| {
        shapes.unwrap_or_else(|| {
            warnings.push(format!(
                "subject {id}: no training information for {what}; population prior used"
            ));
            (0.5 * fallback_precision, 0.5 * fallback_precision)
        })
    };

    let mut se_shapes = Vec::with_capacity(dataset.n_subjects());
    let mut sp_shapes = Vec::with_capacity(dataset.n_subjects());
    let mut acc_shapes = Vec::with_capacity(dataset.n_subjects());
    for &id in &dataset.subject_ids {
        let perf = &scores[&id];
        se_shapes.push(fallback(perf.se_shapes.or(pooled.se_shapes), "se", id, &mut warnings));
        sp_shapes.push(fallback(perf.sp_shapes.or(pooled.sp_shapes), "sp", id, &mut warnings));
        acc_shapes.push(fallback(perf.acc_shapes.or(pooled.acc_shapes), "acc", id, &mut warnings));
    }

    // coefficient prior means from the training MLE
    let p = dataset.sites.covariate_names.len() + 1;
    let training: Vec<&crate::domain::SiteRecord> = dataset
        .sites
        .sites
        .iter()
        .filter(|s| s.partition == Partition::Training)
        .collect();
    let nudge = 1.0 / (2.0 * f64::from(dataset.q));
    let (mut means, mut sds) = (vec![0.0; p - 1], vec![1.0; p - 1]);
    if config.standardize_covariates {
        for k in 0..p - 1 {
            let vals: Vec<f64> = dataset.sites.sites.iter().map(|s| s.covariates[k]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            means[k] = mean;
            sds[k] = var.sqrt().max(1e-12);
        }
    }
    let mut x = nalgebra::DMatrix::zeros(training.len(), p);
    let mut y = Vec::with_capacity(training.len());
    for (i, s) in training.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for k in 0..p - 1 {
            x[(i, k + 1)] = (s.covariates[k] - means[k]) / sds[k];
        }
        y.push(s.y_true.expect("training site").clamp(nudge, 1.0 - nudge));
    }
    let b_mean = match mle_beta_regression(&x, &y, None, 200, 1e-8) {
        Ok(fit) => fit.coefficients,
        Err(e) => {
            warnings.push(format!(
                "training MLE beta regression failed ({e}); coefficient priors centered at zero"
            ));
            vec![0.0; p]
        }
    };

    Ok((
        Priors {
            b_mean,
            b_sd: config.b_prior_sd,
            phi: config.phi_prior,
            tau: config.tau_prior,
            se_shapes,
            sp_shapes,
            acc_shapes,
            sigma_eps_scale: config.sigma_eps_scale,
        },
        warnings,
    ))
}

/// Reconstructs per-draw site-level beta means from the coefficient, spatial,
/// and noise draws.
fn mu_draws_for_site(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    coef_idx: &[usize],
    u_idx: Option<&[usize]>,
    eps_idx: Option<&[usize]>,
    site: usize,
) -> Vec<f64> {
    let row = &spec.design[site * spec.p..(site + 1) * spec.p];
    let total = draws.n_chains * draws.n_retained;
    let mut out = Vec::with_capacity(total);
    for c in 0..draws.n_chains {
        for it in 0..draws.n_retained {
            let mut eta = 0.0;
            for (k, &pi) in coef_idx.iter().enumerate() {
                eta += row[k] * draws.value(c, it, pi);
            }
            if let Some(us) = u_idx {
                eta += draws.value(c, it, us[site]);
            }
            if let Some(es) = eps_idx {
                eta += draws.value(c, it, es[site]);
            }
            out.push(logistic(eta));
        }
    }
    out
}

/// Per-site posteriors of the latent proportion (or of the site-level beta
/// mean when the model has no latent layer), with quintile classes from the
/// fitted field's own empirical quintiles.
pub fn site_posteriors(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    site_partitions: &[(i64, Partition)],
) -> Vec<SitePosterior> {
    let name_index: BTreeMap<&str, usize> = draws
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let coef_idx: Vec<usize> = spec.coef_names.iter().map(|n| name_index[n.as_str()]).collect();
    let u_idx: Option<Vec<usize>> = spec.config.spatial_effects.then(|| {
        spec.graph
            .site_ids
            .iter()
            .map(|id| name_index[format!("u[{id}]").as_str()])
            .collect()
    });
    let eps_idx: Option<Vec<usize>> = spec.config.unstructured_noise.then(|| {
        spec.graph
            .site_ids
            .iter()
            .map(|id| name_index[format!("eps[{id}]").as_str()])
            .collect()
    });

    let m = spec.n_sites();
    let mut means = vec![0.0; m];
    let mut sds = vec![0.0; m];
    let mut hdis = vec![(0.0, 0.0); m];
    let mut sources = vec![String::new(); m];
    for j in 0..m {
        let site_id = spec.graph.site_ids[j];
        if spec.config.kind == ModelKind::Sdme {
            if let Some(known) = spec.known_y[j] {
                means[j] = known;
                sds[j] = 0.0;
                hdis[j] = (known, known);
                sources[j] = "known".to_string();
                continue;
            }
            let idx = name_index[format!("y[{site_id}]").as_str()];
            let pooled = draws.pooled(idx);
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            means[j] = mean;
            sds[j] =
                (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            hdis[j] = hdi(&pooled, 0.95);
            sources[j] = "latent".to_string();
        } else {
            let pooled = mu_draws_for_site(
                draws,
                spec,
                &coef_idx,
                u_idx.as_deref(),
                eps_idx.as_deref(),
                j,
            );
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            means[j] = mean;
            sds[j] =
                (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            hdis[j] = hdi(&pooled, 0.95);
            sources[j] = "mean_proportion".to_string();
        }
    }
    let classes = quintile_classes(&means);
    (0..m)
        .map(|j| SitePosterior {
            site_id: site_partitions[j].0,
            partition: site_partitions[j].1,
            source: sources[j].clone(),
            mean: means[j],
            sd: sds[j],
            hdi_lo: hdis[j].0,
            hdi_hi: hdis[j].1,
            quintile: classes[j],
        })
        .collect()
}

/// Fits a model end to end: subject cleaning, prior derivation, sampling,
/// summaries, and per-site posteriors.
///
/// Convergence failure (`R-hat > 1.1` on a coefficient or `phi`) is not an
/// error: the result carries `diagnostics.converged = false`.
pub fn fit(
    dataset: &Dataset,
    model_config: &ModelConfig,
    sampler_config: &SamplerConfig,
    init: InitKind,
) -> Result<FitResult> {
    sampler_config.validate()?;
    let mut warnings = Vec::new();
    let mut working = dataset.clone();
    if let Some(threshold) = model_config.accuracy_exclusion_threshold {
        let scores = working.score_subjects_on_training();
        let outcome = exclude_low_accuracy(&scores, threshold);
        if !outcome.excluded.is_empty() {
            warnings.push(format!(
                "excluded {} low-accuracy subjects: {:?}",
                outcome.excluded.len(),
                outcome.excluded
            ));
            working.retain_subjects(&outcome.retained.iter().copied().collect());
        }
        if working.subject_ids.is_empty() {
            return Err(SdmeError::InvalidInput(
                "every subject fell below the accuracy threshold".into(),
            ));
        }
    }

    let (priors, prior_warnings) = derive_priors(&working, model_config)?;
    warnings.extend(prior_warnings);
    let spec = ModelSpec::bind(model_config.clone(), priors.clone(), &working)?;
    let posterior = Posterior::new(spec)?;

    // the weighted support constraint (mu < acc everywhere) rules out wide
    // jitter; its chains start tighter around the feasible centers
    let strategy = match init {
        InitKind::PriorJitter => InitStrategy::JitterAround {
            centers: posterior.prior_centers(),
            width: if model_config.kind == ModelKind::Weighted { 0.75 } else { 2.0 },
        },
        InitKind::DataInformed => InitStrategy::JitterAround {
            centers: posterior.data_informed_centers(),
            width: 0.5,
        },
    };
    let draws = run_chains(&posterior, &strategy, sampler_config)?;
    warnings.extend(draws.warnings.clone());
    if posterior.invalid_weight_warnings() > 0 {
        warnings.push(format!(
            "weighted likelihood rejected {} proposals with invalid shapes (mu/acc >= 1)",
            posterior.invalid_weight_warnings()
        ));
    }

    let summary = summarize(&draws);
    let spec = posterior.spec();

    // convergence gate on the core parameters
    let core: Vec<&ParamSummary> = summary
        .iter()
        .filter(|s| spec.coef_names.contains(&s.name) || s.name == "phi")
        .collect();
    let mut max_core_rhat: Option<f64> = None;
    let mut converged = true;
    for s in &core {
        match s.rhat {
            Some(r) => {
                max_core_rhat = Some(max_core_rhat.map_or(r, |m: f64| m.max(r)));
                if r > 1.1 {
                    converged = false;
                }
            }
            None => converged = false,
        }
    }
    if !converged {
        warnings.push(format!(
            "core parameters failed the R-hat gate (max {:?})",
            max_core_rhat
        ));
    }

    let site_partitions: Vec<(i64, Partition)> = working
        .sites
        .sites
        .iter()
        .map(|s| (s.site_id, s.partition))
        .collect();
    let sites = site_posteriors(&draws, spec, &site_partitions);

    let diagnostics = FitDiagnostics {
        converged,
        max_core_rhat,
        divergences: draws.post_warmup_divergences,
        divergence_rate: draws.divergence_rate(),
        warnings,
    };
    Ok(FitResult {
        kind: spec.config.kind,
        model_config: model_config.clone(),
        sampler_config: *sampler_config,
        priors,
        summary,
        sites,
        diagnostics,
        site_partitions,
        draws,
    })
}

/// Prediction report for the unsampled sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub sites: Vec<SitePosterior>,
    pub warnings: Vec<String>,
}

/// Posterior summaries and quintile classes at the unsampled sites.
/// Uses only the fitted posterior; withheld truths never enter.
pub fn predict_unsampled(fit: &FitResult, graph: &crate::spatial::SpatialGraph) -> PredictionReport {
    let mut warnings = Vec::new();
    let sites: Vec<SitePosterior> = fit
        .sites
        .iter()
        .filter(|s| s.partition == Partition::Unsampled)
        .cloned()
        .collect();
    for s in &sites {
        if let Some(j) = graph.site_ids.iter().position(|&id| id == s.site_id) {
            if graph.neighbor_counts[j] == 0 {
                warnings.push(format!(
                    "unsampled site {} has no neighbours; prediction degrades to the prior",
                    s.site_id
                ));
            }
        }
    }
    PredictionReport { sites, warnings }
}

/// Fraction of sites whose true proportion lies inside the 95% HDI of its
/// posterior. Known (training) sites are bound to their truth and count as
/// covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_sites: usize,
    pub n_covered: usize,
    pub fraction: f64,
    pub misses: Vec<i64>,
}

pub fn coverage_report(fit: &FitResult, truth: &SimulationTruth) -> Result<CoverageReport> {
    let mut covered = 0usize;
    let mut misses = Vec::new();
    for s in &fit.sites {
        let t = *truth.y.get(&s.site_id).ok_or_else(|| {
            SdmeError::InvalidInput(format!("truth has no y for site {}", s.site_id))
        })?;
        let ok = if s.source == "known" {
            true
        } else {
            s.hdi_lo <= t && t <= s.hdi_hi
        };
        if ok {
            covered += 1;
        } else {
            misses.push(s.site_id);
        }
    }
    let n = fit.sites.len();
    Ok(CoverageReport {
        n_sites: n,
        n_covered: covered,
        fraction: covered as f64 / n as f64,
        misses,
    })
}

/// Quintile-class recovery at the unsampled sites: the truth field is
/// classified by its own quintiles, the fitted field by its own, and a site
/// counts as recovered when the classes agree.
pub fn quintile_recovery(fit: &FitResult, truth: &SimulationTruth) -> (usize, usize) {
    let truth_field: Vec<f64> = fit.sites.iter().map(|s| truth.y[&s.site_id]).collect();
    let truth_classes = quintile_classes(&truth_field);
    let mut recovered = 0;
    let mut total = 0;
    for (s, &tc) in fit.sites.iter().zip(&truth_classes) {
        if s.partition == Partition::Unsampled {
            total += 1;
            if s.quintile == tc {
                recovered += 1;
            }
        }
    }
    (recovered, total)
}

/// OLS slope of `estimate` on `truth`.
fn slope(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
    let var = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n;
    cov / var
}

/// Slopes of the raw apparent values and of the fitted estimates against the
/// true proportions; misclassification attenuates the raw slope and the fit
/// should pull it back toward 1.
pub fn bias_correction_slopes(
    fit: &FitResult,
    dataset: &Dataset,
    truth: &SimulationTruth,
) -> (f64, f64) {
    let mut per_site: BTreeMap<usize, (f64, u32)> = BTreeMap::new();
    for o in &dataset.observations {
        let e = per_site.entry(o.site).or_insert((0.0, 0));
        e.0 += o.apparent();
        e.1 += 1;
    }
    let raw: Vec<(f64, f64)> = per_site
        .iter()
        .map(|(&j, &(sum, n))| {
            let id = dataset.sites.sites[j].site_id;
            (truth.y[&id], sum / f64::from(n))
        })
        .collect();
    let corrected: Vec<(f64, f64)> = fit
        .sites
        .iter()
        .filter(|s| s.source != "known")
        .map(|s| (truth.y[&s.site_id], s.mean))
        .collect();
    (slope(&raw), slope(&corrected))
}

/// One metric of one model fit in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub estimate: f64,
    pub truth: Option<f64>,
}

/// Posterior summary of one parameter with its simulated truth, mirroring
/// the usual recovery-table layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub param: String,
    pub truth: Option<f64>,
    pub mean: f64,
    pub se_mean: Option<f64>,
    pub sd: f64,
    pub p2_5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p97_5: f64,
}

/// Recovery rows for the headline parameters: coefficients, phi, and the
/// first two subjects' performance parameters.
pub fn recovery_rows(fit: &FitResult, truth: &SimulationTruth) -> Vec<RecoveryRow> {
    let mut wanted: Vec<(String, Option<f64>)> = vec![
        ("b0".to_string(), Some(truth.b0)),
        ("b1".to_string(), Some(truth.b1)),
        ("phi".to_string(), Some(truth.phi)),
    ];
    let subject_ids: Vec<i64> = truth.se.keys().copied().take(2).collect();
    match fit.kind {
        ModelKind::Sdme => {
            for &id in &subject_ids {
                wanted.push((format!("se[{id}]"), truth.se.get(&id).copied()));
            }
            for &id in &subject_ids {
                wanted.push((format!("sp[{id}]"), truth.sp.get(&id).copied()));
            }
        }
        ModelKind::Weighted => {
            for &id in &subject_ids {
                wanted.push((format!("acc[{id}]"), None));
            }
        }
        ModelKind::Naive => {}
    }
    wanted
        .into_iter()
        .filter_map(|(param, truth)| {
            fit.summary.iter().find(|s| s.name == param).map(|s| RecoveryRow {
                param,
                truth,
                mean: s.mean,
                se_mean: s.se_mean,
                sd: s.sd,
                p2_5: s.p2_5,
                p25: s.p25,
                p50: s.p50,
                p75: s.p75,
                p97_5: s.p97_5,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub model: ModelKind,
    /// Fit error, if the replicate failed outright.
    pub error: Option<String>,
    pub converged: bool,
    pub divergence_rate: f64,
    pub metrics: Vec<MetricRow>,
    /// Recovery-table rows for the headline parameters.
    pub table: Vec<RecoveryRow>,
}

/// Metrics of both models across replicated simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub outcomes: Vec<ReplicateOutcome>,
}

impl ComparisonReport {
    pub fn metric(&self, replicate: usize, model: ModelKind, name: &str) -> Option<f64> {
        self.outcomes
            .iter()
            .find(|o| o.replicate == replicate && o.model == model && o.error.is_none())
            .and_then(|o| o.metrics.iter().find(|m| m.name == name))
            .map(|m| m.estimate)
    }
}

fn group_means(
    truth_by_subject: &BTreeMap<i64, f64>,
    groups: &BTreeMap<i64, usize>,
    estimates: impl Fn(i64) -> Option<f64>,
) -> BTreeMap<usize, (f64, f64)> {
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for (&id, &g) in groups {
        let Some(est) = estimates(id) else { continue };
        let t = truth_by_subject[&id];
        let e = acc.entry(g).or_insert((0.0, 0.0, 0));
        e.0 += est;
        e.1 += t;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(g, (est, t, n))| (g, (est / n as f64, t / n as f64)))
        .collect()
}

/// Metrics of one fitted replicate.
pub fn replicate_metrics(
    fit: &FitResult,
    sim: &crate::simulate::SimulatedDataset,
) -> Vec<MetricRow> {
    let truth = &sim.truth;
    let mut rows = Vec::new();
    let mean_of = |name: &str| {
        fit.summary
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.mean)
            .unwrap_or(f64::NAN)
    };
    rows.push(MetricRow {
        name: "b0".into(),
        estimate: mean_of("b0"),
        truth: Some(truth.b0),
    });
    rows.push(MetricRow {
        name: "b1".into(),
        estimate: mean_of("b1"),
        truth: Some(truth.b1),
    });
    rows.push(MetricRow {
        name: "phi".into(),
        estimate: mean_of("phi"),
        truth: Some(truth.phi),
    });

    let per_subject = |prefix: &str, id: i64| {
        fit.summary
            .iter()
            .find(|s| s.name == format!("{prefix}[{id}]"))
            .map(|s| s.mean)
    };
    match fit.kind {
        ModelKind::Sdme => {
            for (what, truths) in [("se", &truth.se), ("sp", &truth.sp)] {
                for (g, (est, t)) in
                    group_means(truths, &truth.group, |id| per_subject(what, id))
                {
                    rows.push(MetricRow {
                        name: format!("{what}_group{g}"),
                        estimate: est,
                        truth: Some(t),
                    });
                }
            }
        }
        ModelKind::Weighted => {
            // expected accuracy of a subject depends on prevalence; report the
            // group-mean estimate against the se/sp midpoint as a soft anchor
            let acc_truthish: BTreeMap<i64, f64> = truth
                .se
                .iter()
                .map(|(&id, &se)| (id, 0.5 * (se + truth.sp[&id])))
                .collect();
            for (g, (est, t)) in
                group_means(&acc_truthish, &truth.group, |id| per_subject("acc", id))
            {
                rows.push(MetricRow {
                    name: format!("acc_group{g}"),
                    estimate: est,
                    truth: Some(t),
                });
            }
        }
        ModelKind::Naive => {}
    }

    if fit.kind == ModelKind::Sdme {
        if let Ok(cov) = coverage_report(fit, truth) {
            rows.push(MetricRow {
                name: "hdi95_coverage".into(),
                estimate: cov.fraction,
                truth: Some(0.95),
            });
        }
        let (rec, total) = quintile_recovery(fit, truth);
        if total > 0 {
            rows.push(MetricRow {
                name: "unsampled_quintile_recovered".into(),
                estimate: rec as f64,
                truth: Some(total as f64),
            });
        }
        let (raw, corrected) = bias_correction_slopes(fit, &sim.dataset, truth);
        rows.push(MetricRow {
            name: "bias_slope_raw".into(),
            estimate: raw,
            truth: Some(1.0),
        });
        rows.push(MetricRow {
            name: "bias_slope_corrected".into(),
            estimate: corrected,
            truth: Some(1.0),
        });
    }
    rows
}

/// Simulates `n_replicates` datasets and fits the SDME and weighted models to
/// each; failures are recorded per replicate, never fatal.
pub fn replicate_study(
    n_replicates: usize,
    sim_config: &SimulationConfig,
    sampler_config: &SamplerConfig,
    base_seed: u64,
) -> Result<ComparisonReport> {
    if n_replicates == 0 {
        return Err(SdmeError::InvalidInput("need at least one replicate".into()));
    }
    let mut outcomes = Vec::new();
    for rep in 0..n_replicates {
        let seed = base_seed.wrapping_add(rep as u64);
        let sim = simulate(sim_config, seed)?;
        for kind in [ModelKind::Sdme, ModelKind::Weighted] {
            let model_config = ModelConfig::for_kind(kind);
            let run_config = SamplerConfig { seed, ..*sampler_config };
            let outcome = match fit(&sim.dataset, &model_config, &run_config, InitKind::DataInformed)
            {
                Ok(f) => ReplicateOutcome {
                    replicate: rep,
                    seed,
                    model: kind,
                    error: None,
                    converged: f.diagnostics.converged,
                    divergence_rate: f.diagnostics.divergence_rate,
                    metrics: replicate_metrics(&f, &sim),
                    table: recovery_rows(&f, &sim.truth),
                },
                Err(e) => ReplicateOutcome {
                    replicate: rep,
                    seed,
                    model: kind,
                    error: Some(e.to_string()),
                    converged: false,
                    divergence_rate: f64::NAN,
                    metrics: Vec::new(),
                    table: Vec::new(),
                },
            };
            outcomes.push(outcome);
        }
    }
    Ok(ComparisonReport { outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hdi_is_shortest_window() {
        // right-skewed draws: HDI should hug the mass near zero
        let draws: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0).powi(3)).collect();
        let (lo, hi) = hdi(&draws, 0.95);
        assert!(lo <= draws[1]);
        assert!(hi < 0.96);
        // degenerate point mass
        let (lo, hi) = hdi(&[0.4; 50], 0.95);
        assert_eq!((lo, hi), (0.4, 0.4));
    }

    #[test]
    fn quintiles_partition_evenly() {
        let field: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let classes = quintile_classes(&field);
        for c in 1..=5 {
            let count = classes.iter().filter(|&&x| x == c).count();
            assert!((19..=21).contains(&count), "class {c}: {count}");
        }
        // monotone in the value
        for i in 1..100 {
            assert!(classes[i] >= classes[i - 1]);
        }
    }

    #[test]
    fn summary_of_constant_and_uniform_draws() {
        use crate::sampler::PosteriorDraws;
        // constant parameter alongside a uniform one
        let n = 500;
        let mut draws = Vec::new();
        let mut state = 0.123456789_f64;
        for _ in 0..2 * n {
            state = (state * 9301.0 + 49297.0) % 233280.0;
            let u = state / 233280.0;
            draws.push(3.0);
            draws.push(u);
        }
        let pd = PosteriorDraws {
            names: vec!["const".into(), "unif".into()],
            n_chains: 2,
            n_retained: n,
            n_params: 2,
            draws,
            log_density: vec![0.0; 2 * n],
            divergent: vec![false; 2 * n],
            post_warmup_divergences: 0,
            post_warmup_transitions: 2 * n,
            adaptation: Vec::new(),
            warnings: Vec::new(),
        };
        let summary = summarize(&pd);
        assert_eq!(summary[0].sd, 0.0);
        assert_eq!(summary[0].p2_5, summary[0].p97_5);
        assert!(summary[0].rhat.is_none());

        let u = &summary[1];
        let mcse = u.se_mean.unwrap();
        assert!((u.p50 - 0.5).abs() < 3.0 * mcse + 0.05, "median {}", u.p50);
        assert!(u.p2_5 <= u.p25 && u.p25 <= u.p50 && u.p50 <= u.p75 && u.p75 <= u.p97_5);
    }
}
