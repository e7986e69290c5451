//! Model definitions: the misclassification map, observation likelihoods,
//! priors, and the unnormalized log-posteriors with analytic gradients.

pub mod betareg;
pub mod icar;
pub mod math;
pub mod posterior;
pub mod transforms;

use serde::{Deserialize, Serialize};

use crate::domain::Dataset;
use crate::{Result, SdmeError};

pub use betareg::{mle_beta_regression, BetaRegressionFit};
pub use icar::{icar_lpdf, IcarModel, SumToZero};
pub use math::beta_lpdf_mean_precision;
pub use posterior::{LogDensity, Posterior};

/// Expected apparent proportion given the latent proportion and a subject's
/// sensitivity and specificity: `y*se + (1-y)*(1-sp)`.
pub fn expected_apparent(y: f64, se: f64, sp: f64) -> f64 {
    y * se + (1.0 - y) * (1.0 - sp)
}

/// Inverts [`expected_apparent`] to estimate the latent proportion directly
/// from an apparent proportion, clamped to `[0,1]`.
///
/// Requires `se + sp > 1`; at or below that the map is non-identifiable
/// (flat or direction-reversing).
pub fn direct_correction(yhat: f64, se: f64, sp: f64) -> Result<f64> {
    if se + sp <= 1.0 {
        return Err(SdmeError::InvalidInput(format!(
            "direct correction needs se + sp > 1, got {se} + {sp}"
        )));
    }
    Ok(((yhat - (1.0 - sp)) / (se + sp - 1.0)).clamp(0.0, 1.0))
}

/// Which observation model links the data to the latent structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Latent proportions distorted through each subject's se/sp.
    Sdme,
    /// Beta shapes scaled by `w_i = 1 / acc_i`; no latent proportions.
    Weighted,
    /// Beta regression applied to the apparent proportions as-is.
    Naive,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Sdme => "sdme",
            ModelKind::Weighted => "weighted",
            ModelKind::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sdme" => Ok(ModelKind::Sdme),
            "weighted" => Ok(ModelKind::Weighted),
            "naive" => Ok(ModelKind::Naive),
            other => Err(SdmeError::InvalidInput(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Observation likelihood for the SDME model.
///
/// The apparent proportion of an image is a count of `q` points, so the
/// default links `q * yhat ~ Binomial(q, expected_apparent)`, which is the
/// exact generative process. The beta alternative handles continuous inputs
/// with a configurable precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdmeLikelihood {
    Binomial,
    Beta { kappa: f64 },
}

impl Default for SdmeLikelihood {
    fn default() -> Self {
        SdmeLikelihood::Binomial
    }
}

/// Truncated-normal prior settings for the beta precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiPrior {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Default for PhiPrior {
    fn default() -> Self {
        Self {
            mean: 20.0,
            sd: 5.0,
            lower: 10.0,
            upper: 60.0,
        }
    }
}

/// Gamma prior settings for the spatial precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for TauPrior {
    fn default() -> Self {
        Self { shape: 0.1, rate: 0.1 }
    }
}

/// Serializable model configuration; everything data-independent needed to
/// rebuild a run from config + data + seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub likelihood: SdmeLikelihood,
    /// Include the CAR spatial effects (off reduces to plain beta regression).
    pub spatial_effects: bool,
    /// Include per-site unstructured noise eps_j with a half-normal scale.
    pub unstructured_noise: bool,
    pub b_prior_sd: f64,
    pub phi_prior: PhiPrior,
    pub tau_prior: TauPrior,
    pub sigma_eps_scale: f64,
    /// Beta precision used when a subject prior cannot be moment-matched.
    pub subject_prior_fallback_precision: f64,
    /// Training-accuracy threshold below which subjects are dropped before
    /// fitting; `None` disables the cleaning pass.
    pub accuracy_exclusion_threshold: Option<f64>,
    /// Standardize covariate columns to zero mean / unit sd before fitting.
    pub standardize_covariates: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Sdme,
            likelihood: SdmeLikelihood::default(),
            spatial_effects: true,
            unstructured_noise: false,
            b_prior_sd: 5.0,
            phi_prior: PhiPrior::default(),
            tau_prior: TauPrior::default(),
            sigma_eps_scale: 1.0,
            subject_prior_fallback_precision: 10.0,
            accuracy_exclusion_threshold: Some(0.40),
            standardize_covariates: false,
        }
    }
}

impl ModelConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        Self { kind, ..Self::default() }
    }
}

/// Numeric prior inputs, usually derived from the training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Normal prior means for the regression coefficients (length p).
    pub b_mean: Vec<f64>,
    pub b_sd: f64,
    pub phi: PhiPrior,
    pub tau: TauPrior,
    /// Per-subject beta shapes, indexed by dense subject index.
    pub se_shapes: Vec<(f64, f64)>,
    pub sp_shapes: Vec<(f64, f64)>,
    pub acc_shapes: Vec<(f64, f64)>,
    pub sigma_eps_scale: f64,
}

/// Fully bound model: configuration, priors, design, graph, and data.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub priors: Priors,
    /// Row-major design matrix (m x p), intercept first.
    pub design: Vec<f64>,
    pub p: usize,
    pub coef_names: Vec<String>,
    pub graph: crate::spatial::SpatialGraph,
    pub q: u32,
    pub observations: Vec<crate::domain::Observation>,
    /// Known latent value per site (training, boundary-nudged), else None.
    pub known_y: Vec<Option<f64>>,
    pub subject_ids: Vec<i64>,
}

impl ModelSpec {
    /// Binds config and priors to a dataset: builds the intercept-first
    /// design matrix, nudges known boundary values to `1/(2q)`, and checks
    /// dimensions.
    pub fn bind(config: ModelConfig, priors: Priors, dataset: &Dataset) -> Result<Self> {
        let m = dataset.n_sites();
        let p = dataset.sites.covariate_names.len() + 1;
        if priors.b_mean.len() != p {
            return Err(SdmeError::InvalidInput(format!(
                "prior b_mean has {} entries, design needs {p}",
                priors.b_mean.len()
            )));
        }
        let n_subjects = dataset.n_subjects();
        match config.kind {
            ModelKind::Sdme => {
                if priors.se_shapes.len() != n_subjects || priors.sp_shapes.len() != n_subjects {
                    return Err(SdmeError::InvalidInput(
                        "se/sp prior shapes must cover every subject".into(),
                    ));
                }
            }
            ModelKind::Weighted => {
                if priors.acc_shapes.len() != n_subjects {
                    return Err(SdmeError::InvalidInput(
                        "acc prior shapes must cover every subject".into(),
                    ));
                }
            }
            ModelKind::Naive => {}
        }
        for shapes in priors
            .se_shapes
            .iter()
            .chain(&priors.sp_shapes)
            .chain(&priors.acc_shapes)
        {
            if !(shapes.0 > 0.0 && shapes.1 > 0.0) {
                return Err(SdmeError::InvalidInput(format!(
                    "non-positive beta prior shapes {shapes:?}"
                )));
            }
        }

        let (mut means, mut sds) = (vec![0.0; p - 1], vec![1.0; p - 1]);
        if config.standardize_covariates {
            for k in 0..p - 1 {
                let vals: Vec<f64> = dataset.sites.sites.iter().map(|s| s.covariates[k]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var =
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                means[k] = mean;
                sds[k] = var.sqrt().max(1e-12);
            }
        }
        let mut design = Vec::with_capacity(m * p);
        for s in &dataset.sites.sites {
            design.push(1.0);
            for k in 0..p - 1 {
                design.push((s.covariates[k] - means[k]) / sds[k]);
            }
        }

        let nudge = 1.0 / (2.0 * f64::from(dataset.q));
        let known_y: Vec<Option<f64>> = dataset
            .sites
            .sites
            .iter()
            .map(|s| {
                s.y_true
                    .filter(|_| s.partition == crate::domain::Partition::Training)
                    .map(|y| y.clamp(nudge, 1.0 - nudge))
            })
            .collect();

        let coef_names = coefficient_names(&dataset.sites.covariate_names);
        Ok(Self {
            config,
            priors,
            design,
            p,
            coef_names,
            graph: dataset.graph.clone(),
            q: dataset.q,
            observations: dataset.observations.clone(),
            known_y,
            subject_ids: dataset.subject_ids.clone(),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.known_y.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    /// Dense site indices whose latent proportion is a parameter.
    pub fn latent_sites(&self) -> Vec<usize> {
        self.known_y
            .iter()
            .enumerate()
            .filter_map(|(j, y)| y.is_none().then_some(j))
            .collect()
    }
}

/// Coefficient names: intercept `b0`; a covariate named `x<k>` maps to
/// `b<k>`, anything else to `b_<name>`.
pub fn coefficient_names(covariates: &[String]) -> Vec<String> {
    let mut names = vec!["b0".to_string()];
    for c in covariates {
        let numbered = c
            .strip_prefix('x')
            .and_then(|rest| rest.parse::<u32>().ok())
            .map(|k| format!("b{k}"));
        names.push(numbered.unwrap_or_else(|| format!("b_{c}")));
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_apparent_fixed_points() {
        assert_eq!(expected_apparent(0.3, 1.0, 1.0), 0.3);
        assert_eq!(expected_apparent(1.0, 0.87, 0.4), 0.87);
        assert_eq!(expected_apparent(0.0, 0.87, 0.4), 0.6);
        assert!((expected_apparent(0.10, 0.80, 0.70) - 0.35).abs() < 1e-15);
    }

    #[test]
    fn expected_apparent_bounds_and_monotonicity() {
        let grid = [0.05, 0.2, 0.5, 0.8, 0.95];
        for &se in &grid {
            for &sp in &grid {
                let mut prev = f64::NEG_INFINITY;
                for &y in &grid {
                    let v = expected_apparent(y, se, sp);
                    assert!(v >= (1.0 - sp).min(se) - 1e-15 && v <= (1.0 - sp).max(se) + 1e-15);
                    if se + sp > 1.0 {
                        assert!(v >= prev);
                        prev = v;
                    }
                }
            }
        }
    }

    #[test]
    fn direct_correction_examples() {
        assert!((direct_correction(0.35, 0.80, 0.70).unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(direct_correction(0.42, 1.0, 1.0).unwrap(), 0.42);
        assert!(direct_correction(0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn correction_round_trips_expected_apparent() {
        let mut v = 0.1;
        for _ in 0..200 {
            // low-discrepancy sweep over (y, se, sp) with identifiable se+sp
            v = (v + 0.61803398875) % 1.0;
            let y = v;
            let se = 0.55 + 0.44 * ((v * 7.3) % 1.0);
            let sp = 0.55 + 0.44 * ((v * 13.7) % 1.0);
            let yhat = expected_apparent(y, se, sp);
            let back = direct_correction(yhat, se, sp).unwrap();
            assert!((back - y).abs() < 1e-12, "y={y} se={se} sp={sp}");
        }
    }

    #[test]
    fn coefficient_naming() {
        let names = coefficient_names(&["x1".into(), "DHW".into(), "x12".into()]);
        assert_eq!(names, vec!["b0", "b1", "b_DHW", "b12"]);
    }

    #[test]
    fn model_config_round_trips_through_json() {
        let config = ModelConfig {
            kind: ModelKind::Weighted,
            likelihood: SdmeLikelihood::Beta { kappa: 17.0 },
            ..ModelConfig::default()
        };
        let text = serde_json::to_string(&config).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
    }
}
