//! Synthetic dataset generation: a regular grid of sites on the unit square,
//! a spatially smooth latent proportion field, skill-grouped annotators, and
//! point-level elicitations, partitioned into training / testing / unsampled
//! sets.
//!
//! Generation is reproducible: one logical stream drives the field, subject
//! skills, partition, and assignments, while point-level elicitation uses a
//! substream keyed by `(seed, site)` so per-image work is order-independent.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    beta_shapes_mean_precision, ClassificationRecord, Dataset, Partition, SiteRecord, SiteTable,
};
use crate::spatial::{unit_square_grid, voronoi_tessellation, SpatialGraph};
use crate::{Result, SdmeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Sites form a grid_k x grid_k lattice on the unit square.
    pub grid_k: usize,
    pub sampled_fraction: f64,
    /// Fraction of sampled sites whose truth is revealed (training).
    pub training_fraction: f64,
    pub n_subjects: usize,
    pub group_se_means: Vec<f64>,
    pub group_sp_means: Vec<f64>,
    pub phi_se: f64,
    pub phi_sp: f64,
    pub b0: f64,
    pub b1: f64,
    /// Beta precision of the latent proportions.
    pub phi: f64,
    /// Points elicited per image.
    pub q: u32,
    pub classifiers_min: u32,
    pub classifiers_max: u32,
    /// Nominal per-user share of images from the protocol. The uniform
    /// classifiers-per-image rule takes precedence; the realized share is
    /// reported in the truth record.
    pub per_user_coverage: f64,
    pub sigma_x: f64,
    /// Proper-CAR surrogate parameters for the spatial effect generator.
    pub car_rho: f64,
    pub car_tau: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            grid_k: 15,
            sampled_fraction: 0.80,
            training_fraction: 67.0 / 180.0,
            n_subjects: 20,
            group_se_means: vec![0.99, 0.95, 0.90, 0.80],
            group_sp_means: vec![0.99, 0.90, 0.80, 0.70],
            phi_se: 50.0,
            phi_sp: 50.0,
            b0: 1.0,
            b1: -2.0,
            phi: 30.0,
            q: 15,
            classifiers_min: 5,
            classifiers_max: 20,
            per_user_coverage: 0.75,
            sigma_x: 1.0,
            car_rho: 0.99,
            car_tau: 1.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_k < 2 {
            return Err(SdmeError::InvalidInput("grid_k must be at least 2".into()));
        }
        if !(0.0 < self.sampled_fraction && self.sampled_fraction <= 1.0) {
            return Err(SdmeError::InvalidInput("sampled_fraction must be in (0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.training_fraction) {
            return Err(SdmeError::InvalidInput("training_fraction must be in [0,1]".into()));
        }
        if self.group_se_means.len() != self.group_sp_means.len() || self.group_se_means.is_empty() {
            return Err(SdmeError::InvalidInput(
                "group se/sp mean vectors must be nonempty and equal length".into(),
            ));
        }
        for &m in self.group_se_means.iter().chain(&self.group_sp_means) {
            if !(0.0 < m && m < 1.0) {
                return Err(SdmeError::InvalidInput(format!("group mean {m} outside (0,1)")));
            }
        }
        if self.n_subjects % self.group_se_means.len() != 0 {
            return Err(SdmeError::InvalidInput(format!(
                "n_subjects ({}) must divide evenly into {} skill groups",
                self.n_subjects,
                self.group_se_means.len()
            )));
        }
        if !(self.phi > 0.0 && self.phi_se > 0.0 && self.phi_sp > 0.0) {
            return Err(SdmeError::InvalidInput("precisions must be positive".into()));
        }
        if self.q == 0 {
            return Err(SdmeError::InvalidInput("q must be positive".into()));
        }
        if self.classifiers_min > self.classifiers_max {
            return Err(SdmeError::InvalidInput("classifier range is inverted".into()));
        }
        if (self.n_subjects as u32) < self.classifiers_min {
            return Err(SdmeError::InfeasibleAssignment(format!(
                "every image needs at least {} classifiers but only {} subjects exist",
                self.classifiers_min, self.n_subjects
            )));
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.grid_k * self.grid_k
    }
}

/// Everything the generator knows, for scoring fits later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub seed: u64,
    pub b0: f64,
    pub b1: f64,
    pub phi: f64,
    /// Keyed by site_id.
    pub y: BTreeMap<i64, f64>,
    pub mu: BTreeMap<i64, f64>,
    pub u: BTreeMap<i64, f64>,
    pub x: BTreeMap<i64, f64>,
    /// Keyed by subject_id.
    pub se: BTreeMap<i64, f64>,
    pub sp: BTreeMap<i64, f64>,
    pub group: BTreeMap<i64, usize>,
    /// Realized mean fraction of sampled images classified per subject.
    pub realized_coverage: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub dataset: Dataset,
    pub truth: SimulationTruth,
    pub config: SimulationConfig,
}

/// Latent field draw: covariate, spatial effect, beta mean, and proportion
/// per site (dense order).
#[derive(Debug, Clone)]
pub struct LatentField {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
    pub y: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Draws the spatial effects from a proper-CAR surrogate
/// (precision `tau * (D - rho W)`), centered to mean zero. Sites without
/// neighbours get a zero effect.
fn draw_spatial_effects(
    graph: &SpatialGraph,
    rho: f64,
    tau: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<f64>> {
    let m = graph.n_sites;
    let active: Vec<usize> = (0..m).filter(|&j| graph.neighbor_counts[j] > 0).collect();
    let mut u = vec![0.0; m];
    if active.is_empty() {
        return Ok(u);
    }
    let index: BTreeMap<usize, usize> = active.iter().enumerate().map(|(k, &j)| (j, k)).collect();
    let n = active.len();
    let mut q = DMatrix::zeros(n, n);
    for &j in &active {
        q[(index[&j], index[&j])] = tau * graph.neighbor_counts[j] as f64;
    }
    for &(l, t) in &graph.edges {
        let (a, b) = (index[&l], index[&t]);
        q[(a, b)] -= tau * rho;
        q[(b, a)] -= tau * rho;
    }
    let chol = nalgebra::Cholesky::new(q).ok_or_else(|| {
        SdmeError::InvalidInput("CAR surrogate precision is not positive definite".into())
    })?;
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    // x = L^-T z has covariance Q^-1
    let x = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| SdmeError::InvalidInput("triangular solve failed".into()))?;
    for (k, &j) in active.iter().enumerate() {
        u[j] = x[k];
    }
    let mean = u.iter().sum::<f64>() / m as f64;
    for v in &mut u {
        *v -= mean;
    }
    Ok(u)
}

/// Step 2/5/6 of the protocol: covariate, spatial effect, regression mean,
/// and latent proportion per site.
pub fn simulate_latent_field(
    config: &SimulationConfig,
    graph: &SpatialGraph,
    rng: &mut ChaCha20Rng,
) -> Result<LatentField> {
    let m = graph.n_sites;
    let mut warnings = Vec::new();
    if crate::spatial::connected_components(graph).len() > 1 {
        warnings.push("spatial graph is disconnected; effects drawn per component".to_string());
    }
    let x_dist = Normal::new(0.0, config.sigma_x)
        .map_err(|e| SdmeError::InvalidInput(format!("sigma_x: {e}")))?;
    let x: Vec<f64> = (0..m).map(|_| x_dist.sample(rng)).collect();
    let u = draw_spatial_effects(graph, config.car_rho, config.car_tau, rng)?;
    let mut mu = Vec::with_capacity(m);
    let mut clamped = 0usize;
    for j in 0..m {
        let raw = crate::model::math::logistic(config.b0 + config.b1 * x[j] + u[j]);
        let v = raw.clamp(1e-12, 1.0 - 1e-12);
        if v != raw {
            clamped += 1;
        }
        mu.push(v);
    }
    if clamped > 0 {
        warnings.push(format!("{clamped} beta means clamped away from {{0,1}}"));
    }
    let mut y = Vec::with_capacity(m);
    for &mu_j in &mu {
        let (a, b) = beta_shapes_mean_precision(mu_j, config.phi);
        let dist = Beta::new(a, b).map_err(|e| SdmeError::InvalidInput(format!("beta: {e}")))?;
        y.push(dist.sample(rng).clamp(1e-9, 1.0 - 1e-9));
    }
    Ok(LatentField { x, u, mu, y, warnings })
}

/// One annotator's ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub subject_id: i64,
    pub group: usize,
    pub se: f64,
    pub sp: f64,
}

/// Step 4: per-subject sensitivity/specificity drawn around the skill-group
/// means, subjects split evenly across groups.
pub fn simulate_subjects(config: &SimulationConfig, rng: &mut ChaCha20Rng) -> Result<Vec<SubjectTruth>> {
    config.validate()?;
    let n_groups = config.group_se_means.len();
    let per_group = config.n_subjects / n_groups;
    let mut out = Vec::with_capacity(config.n_subjects);
    for i in 0..config.n_subjects {
        let group = i / per_group;
        let draw = |mean: f64, precision: f64, rng: &mut ChaCha20Rng| -> Result<f64> {
            let (a, b) = beta_shapes_mean_precision(mean, precision);
            let dist =
                Beta::new(a, b).map_err(|e| SdmeError::InvalidInput(format!("beta: {e}")))?;
            Ok(dist.sample(rng).clamp(1e-6, 1.0 - 1e-6))
        };
        out.push(SubjectTruth {
            subject_id: (i + 1) as i64,
            group: group + 1,
            se: draw(config.group_se_means[group], config.phi_se, rng)?,
            sp: draw(config.group_sp_means[group], config.phi_sp, rng)?,
        });
    }
    Ok(out)
}

/// Step 7: shuffled site partition with the configured counts.
pub fn partition_sites(config: &SimulationConfig, rng: &mut ChaCha20Rng) -> Vec<Partition> {
    let m = config.n_sites();
    let n_sampled = (m as f64 * config.sampled_fraction).round() as usize;
    let n_training = (n_sampled as f64 * config.training_fraction).round() as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut partition = vec![Partition::Unsampled; m];
    for (rank, &j) in order.iter().enumerate() {
        partition[j] = if rank < n_training {
            Partition::Training
        } else if rank < n_sampled {
            Partition::Testing
        } else {
            Partition::Unsampled
        };
    }
    partition
}

/// Latent proportion below which a subject overestimates on average:
/// `(1 - sp) / (2 - se - sp)`. Undefined for a perfect classifier.
pub fn overestimation_threshold(se: f64, sp: f64) -> Result<f64> {
    if se + sp == 2.0 {
        return Err(SdmeError::InvalidInput(
            "perfect classifier has no over/underestimation region".into(),
        ));
    }
    Ok((1.0 - sp) / (2.0 - se - sp))
}

/// Elicits `q` points of one image for one subject: each point's true state
/// is Bernoulli(y), the label flips through the subject's se/sp.
pub fn elicit_points(
    y: f64,
    se: f64,
    sp: f64,
    q: u32,
    rng: &mut ChaCha20Rng,
) -> Vec<(u8, u8)> {
    (0..q)
        .map(|_| {
            let state = u8::from(rng.random::<f64>() < y);
            let z = if state == 1 {
                u8::from(rng.random::<f64>() < se)
            } else {
                u8::from(rng.random::<f64>() >= sp)
            };
            (z, state)
        })
        .collect()
}

fn image_stream(seed: u64, site_index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(0x5d_0000_0000 + site_index as u64);
    rng
}

/// Full protocol: grid, tessellation, latent field, subjects, partition,
/// assignments, and point-level elicitations.
pub fn simulate(config: &SimulationConfig, seed: u64) -> Result<SimulatedDataset> {
    config.validate()?;
    let coords = unit_square_grid(config.grid_k);
    let tess = voronoi_tessellation(&coords, None)?;
    let graph = tess.graph;
    let m = graph.n_sites;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let field = simulate_latent_field(config, &graph, &mut rng)?;
    let subjects = simulate_subjects(config, &mut rng)?;
    let partition = partition_sites(config, &mut rng);

    // assignment: per sampled image, a uniform 5..=20 classifier count,
    // subjects drawn without replacement
    let n_subjects = config.n_subjects;
    let max_cls = (config.classifiers_max as usize).min(n_subjects);
    let min_cls = (config.classifiers_min as usize).min(max_cls);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); m];
    for j in 0..m {
        if partition[j] == Partition::Unsampled {
            continue;
        }
        let n_cls = rng.random_range(min_cls..=max_cls);
        let mut chosen = rand::seq::index::sample(&mut rng, n_subjects, n_cls).into_vec();
        chosen.sort_unstable();
        assigned[j] = chosen;
    }

    let mut records = Vec::new();
    for j in 0..m {
        if assigned[j].is_empty() {
            continue;
        }
        let mut img_rng = image_stream(seed, j);
        let reveal_truth = partition[j] == Partition::Training;
        for &i in &assigned[j] {
            let subj = &subjects[i];
            let points = elicit_points(field.y[j], subj.se, subj.sp, config.q, &mut img_rng);
            for (k, (z, state)) in points.into_iter().enumerate() {
                records.push(ClassificationRecord {
                    subject_id: subj.subject_id,
                    image_id: graph.site_ids[j],
                    point_id: (k + 1) as u32,
                    z,
                    true_label: reveal_truth.then_some(state),
                });
            }
        }
    }

    let classified_per_subject = {
        let mut counts = vec![0usize; n_subjects];
        for a in &assigned {
            for &i in a {
                counts[i] += 1;
            }
        }
        counts
    };
    let n_sampled = partition.iter().filter(|&&p| p != Partition::Unsampled).count();
    let realized_coverage = if n_sampled == 0 {
        0.0
    } else {
        classified_per_subject.iter().map(|&c| c as f64).sum::<f64>()
            / (n_subjects as f64 * n_sampled as f64)
    };

    let sites = SiteTable {
        covariate_names: vec!["x1".to_string()],
        sites: (0..m)
            .map(|j| SiteRecord {
                site_id: graph.site_ids[j],
                lon: coords.points()[j][0],
                lat: coords.points()[j][1],
                partition: partition[j],
                y_true: (partition[j] == Partition::Training).then_some(field.y[j]),
                covariates: vec![field.x[j]],
            })
            .collect(),
    };

    let keyed = |values: &[f64]| -> BTreeMap<i64, f64> {
        values
            .iter()
            .enumerate()
            .map(|(j, &v)| (graph.site_ids[j], v))
            .collect()
    };
    let truth = SimulationTruth {
        seed,
        b0: config.b0,
        b1: config.b1,
        phi: config.phi,
        y: keyed(&field.y),
        mu: keyed(&field.mu),
        u: keyed(&field.u),
        x: keyed(&field.x),
        se: subjects.iter().map(|s| (s.subject_id, s.se)).collect(),
        sp: subjects.iter().map(|s| (s.subject_id, s.sp)).collect(),
        group: subjects.iter().map(|s| (s.subject_id, s.group)).collect(),
        realized_coverage,
        warnings: field.warnings.clone(),
    };

    let dataset = Dataset::assemble(sites, graph, records, config.q)?;
    Ok(SimulatedDataset {
        dataset,
        truth,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::expected_apparent;
    use crate::model::math::logistic;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn regression_mean_examples() {
        // u = 0, x = 0: mu = logistic(b0)
        assert!((logistic(1.0) - 0.7311).abs() < 1e-4);
        // b0 + b1 x = 1 - 2*0.5 = 0
        assert!((logistic(1.0 + -2.0 * 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn latent_variance_matches_beta_formula() {
        // Var(y | mu, phi) = mu(1-mu)/(1+phi)
        let mut r = rng(2);
        let (a, b) = beta_shapes_mean_precision(0.5, 30.0);
        let dist = Beta::new(a, b).unwrap();
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| dist.sample(&mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 0.25 / 31.0;
        assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn subjects_have_group_structure() {
        let config = SimulationConfig::default();
        let mut r = rng(3);
        let subjects = simulate_subjects(&config, &mut r).unwrap();
        assert_eq!(subjects.len(), 20);
        for (i, s) in subjects.iter().enumerate() {
            assert_eq!(s.group, i / 5 + 1);
            assert!(s.se > 0.0 && s.se < 1.0);
        }
        // group-1 expectation 0.99; group-4 sd = sqrt(0.8*0.2/51)
        let mut cfg = config.clone();
        cfg.n_subjects = 40_000;
        let subjects = simulate_subjects(&cfg, &mut r).unwrap();
        let group1: Vec<f64> = subjects.iter().filter(|s| s.group == 1).map(|s| s.se).collect();
        let mean1 = group1.iter().sum::<f64>() / group1.len() as f64;
        assert!((mean1 - 0.99).abs() < 0.001, "group-1 mean {mean1}");
        let group4: Vec<f64> = subjects.iter().filter(|s| s.group == 4).map(|s| s.se).collect();
        let mean4 = group4.iter().sum::<f64>() / group4.len() as f64;
        let sd4 = (group4.iter().map(|v| (v - mean4).powi(2)).sum::<f64>()
            / (group4.len() - 1) as f64)
            .sqrt();
        let expected_sd = (0.8 * 0.2 / 51.0f64).sqrt();
        assert!((sd4 - expected_sd).abs() / expected_sd < 0.05, "sd {sd4} vs {expected_sd}");
    }

    #[test]
    fn elicitation_expectation_follows_misclassification_map() {
        let q = 1500;
        let mut r = rng(4);
        let cases = [(0.37, 1.0, 1.0), (0.0, 0.9, 0.7), (0.10, 0.80, 0.70)];
        for (y, se, sp) in cases {
            let reps = 40;
            let mut acc = 0.0;
            for _ in 0..reps {
                let pts = elicit_points(y, se, sp, q, &mut r);
                acc += pts.iter().map(|&(z, _)| f64::from(z)).sum::<f64>() / f64::from(q);
            }
            let yhat = acc / reps as f64;
            let expected = expected_apparent(y, se, sp);
            assert!((yhat - expected).abs() < 0.01, "y={y}: {yhat} vs {expected}");
        }
    }

    #[test]
    fn partition_counts_match_protocol() {
        let config = SimulationConfig::default();
        let p = partition_sites(&config, &mut rng(5));
        let train = p.iter().filter(|&&x| x == Partition::Training).count();
        let test = p.iter().filter(|&&x| x == Partition::Testing).count();
        let unsampled = p.iter().filter(|&&x| x == Partition::Unsampled).count();
        assert_eq!((train, test, unsampled), (67, 113, 45));

        let full = SimulationConfig { sampled_fraction: 1.0, ..config.clone() };
        let p = partition_sites(&full, &mut rng(5));
        assert_eq!(p.iter().filter(|&&x| x == Partition::Unsampled).count(), 0);

        let no_train = SimulationConfig { training_fraction: 0.0, ..config };
        let p = partition_sites(&no_train, &mut rng(5));
        assert_eq!(p.iter().filter(|&&x| x == Partition::Training).count(), 0);
        assert_eq!(p.iter().filter(|&&x| x == Partition::Testing).count(), 180);
    }

    #[test]
    fn overestimation_threshold_examples() {
        assert!((overestimation_threshold(0.8, 0.8).unwrap() - 0.5).abs() < 1e-12);
        assert!((overestimation_threshold(0.80, 0.70).unwrap() - 0.6).abs() < 1e-12);
        assert!(overestimation_threshold(1.0, 1.0).is_err());
        // sign check: below the threshold the map overestimates, above it
        // underestimates
        for se in [0.6, 0.75, 0.9] {
            for sp in [0.55, 0.7, 0.95] {
                let t = overestimation_threshold(se, sp).unwrap();
                for y in [0.02, 0.2, 0.45, 0.7, 0.97] {
                    let yhat = expected_apparent(y, se, sp);
                    if y < t {
                        assert!(yhat > y, "se={se} sp={sp} y={y}");
                    } else if y > t {
                        assert!(yhat < y, "se={se} sp={sp} y={y}");
                    }
                }
            }
        }
    }

    #[test]
    fn simulate_is_deterministic_and_consistent() {
        let config = SimulationConfig { grid_k: 6, n_subjects: 8, ..Default::default() };
        let a = simulate(&config, 42).unwrap();
        let b = simulate(&config, 42).unwrap();
        assert_eq!(a.dataset.records, b.dataset.records);
        assert_eq!(a.truth, b.truth);
        let c = simulate(&config, 43).unwrap();
        assert_ne!(a.dataset.records, c.dataset.records);
    }

    #[test]
    fn every_sampled_image_has_enough_classifiers() {
        let config = SimulationConfig { grid_k: 8, ..Default::default() };
        let sim = simulate(&config, 9).unwrap();
        let mut per_site: BTreeMap<usize, usize> = BTreeMap::new();
        for o in &sim.dataset.observations {
            *per_site.entry(o.site).or_default() += 1;
        }
        for (j, s) in sim.dataset.sites.sites.iter().enumerate() {
            match s.partition {
                Partition::Unsampled => assert!(!per_site.contains_key(&j)),
                _ => assert!(per_site[&j] >= 5, "site {} has {}", s.site_id, per_site[&j]),
            }
        }
        assert!(sim.truth.realized_coverage > 0.3 && sim.truth.realized_coverage < 1.0);
    }

    #[test]
    fn latent_field_is_positively_autocorrelated() {
        // Moran-style check: y correlates with the mean of its neighbours
        let config = SimulationConfig { grid_k: 10, ..Default::default() };
        let coords = unit_square_grid(config.grid_k);
        let graph = crate::spatial::build_voronoi_adjacency(&coords, None).unwrap();
        let adj = graph.adjacency_lists();
        let mut acc = 0.0;
        let reps = 5;
        for rep in 0..reps {
            let mut r = rng(100 + rep);
            let field = simulate_latent_field(&config, &graph, &mut r).unwrap();
            let pairs: Vec<(f64, f64)> = (0..graph.n_sites)
                .filter(|&j| !adj[j].is_empty())
                .map(|j| {
                    let nb = adj[j].iter().map(|&t| field.y[t]).sum::<f64>() / adj[j].len() as f64;
                    (field.y[j], nb)
                })
                .collect();
            let n = pairs.len() as f64;
            let my = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let mn = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let cov = pairs.iter().map(|p| (p.0 - my) * (p.1 - mn)).sum::<f64>() / n;
            let vy = pairs.iter().map(|p| (p.0 - my).powi(2)).sum::<f64>() / n;
            let vn = pairs.iter().map(|p| (p.1 - mn).powi(2)).sum::<f64>() / n;
            acc += cov / (vy * vn).sqrt();
        }
        assert!(acc / reps as f64 > 0.0, "mean neighbour correlation {}", acc / reps as f64);
    }

    #[test]
    fn infeasible_assignment_is_rejected() {
        let config = SimulationConfig { n_subjects: 4, ..Default::default() };
        assert!(matches!(
            config.validate(),
            Err(SdmeError::InfeasibleAssignment(_))
        ));
    }
}
