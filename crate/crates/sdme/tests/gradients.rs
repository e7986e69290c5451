//! Finite-difference validation of every log-posterior gradient, plus
//! structural identities between the model variants.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use sdme::domain::{Dataset, Partition, SiteRecord, SiteTable};
use sdme::inference::derive_priors;
use sdme::model::{
    LogDensity, ModelConfig, ModelKind, ModelSpec, Posterior, Priors, SdmeLikelihood,
};
use sdme::simulate::{simulate, SimulationConfig};
use sdme::spatial::SpatialGraph;

fn toy_simulation() -> sdme::simulate::SimulatedDataset {
    let config = SimulationConfig {
        grid_k: 3,
        n_subjects: 4,
        classifiers_min: 2,
        classifiers_max: 4,
        q: 8,
        ..SimulationConfig::default()
    };
    simulate(&config, 7).unwrap()
}

fn posterior_for(config: ModelConfig, dataset: &Dataset) -> Posterior {
    let (priors, _) = derive_priors(dataset, &config).unwrap();
    let spec = ModelSpec::bind(config, priors, dataset).unwrap();
    Posterior::new(spec).unwrap()
}

/// Max relative error between the analytic gradient and central finite
/// differences over `n_points` random points near the prior centers.
fn max_gradient_error(posterior: &Posterior, n_points: usize, seed: u64) -> f64 {
    let dim = posterior.dim();
    let centers = posterior.prior_centers();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut grad = vec![0.0; dim];
    let mut checked = 0;
    while checked < n_points {
        let z: Vec<f64> = centers
            .iter()
            .map(|&c| c + rng.random_range(-1.5..1.5))
            .collect();
        let lp = posterior.log_density_and_grad(&z, &mut grad);
        if !lp.is_finite() {
            continue;
        }
        checked += 1;
        let analytic = grad.clone();
        for i in 0..dim {
            let h = 1e-5 * z[i].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let mut scratch = vec![0.0; dim];
            let fp = posterior.log_density_and_grad(&zp, &mut scratch);
            let fm = posterior.log_density_and_grad(&zm, &mut scratch);
            if !(fp.is_finite() && fm.is_finite()) {
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            let err = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn sdme_gradient_matches_finite_differences() {
    let sim = toy_simulation();
    let posterior = posterior_for(ModelConfig::for_kind(ModelKind::Sdme), &sim.dataset);
    let err = max_gradient_error(&posterior, 20, 1);
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn weighted_gradient_matches_finite_differences() {
    let sim = toy_simulation();
    let posterior = posterior_for(ModelConfig::for_kind(ModelKind::Weighted), &sim.dataset);
    let err = max_gradient_error(&posterior, 20, 2);
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn naive_gradient_matches_finite_differences() {
    let sim = toy_simulation();
    let posterior = posterior_for(ModelConfig::for_kind(ModelKind::Naive), &sim.dataset);
    let err = max_gradient_error(&posterior, 20, 3);
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn gradient_holds_with_noise_and_beta_likelihood() {
    let sim = toy_simulation();
    let with_noise = ModelConfig {
        unstructured_noise: true,
        ..ModelConfig::for_kind(ModelKind::Sdme)
    };
    let posterior = posterior_for(with_noise, &sim.dataset);
    let err = max_gradient_error(&posterior, 10, 4);
    assert!(err < 1e-5, "epsilon variant: {err}");

    let beta_lik = ModelConfig {
        likelihood: SdmeLikelihood::Beta { kappa: 15.0 },
        ..ModelConfig::for_kind(ModelKind::Sdme)
    };
    let posterior = posterior_for(beta_lik, &sim.dataset);
    let err = max_gradient_error(&posterior, 10, 5);
    assert!(err < 1e-5, "beta-likelihood variant: {err}");

    let flat = ModelConfig {
        spatial_effects: false,
        ..ModelConfig::for_kind(ModelKind::Weighted)
    };
    let posterior = posterior_for(flat, &sim.dataset);
    let err = max_gradient_error(&posterior, 10, 6);
    assert!(err < 1e-5, "non-spatial variant: {err}");
}

#[test]
fn non_finite_density_names_offending_term() {
    let sim = toy_simulation();
    let posterior = posterior_for(ModelConfig::for_kind(ModelKind::Sdme), &sim.dataset);
    let mut z = posterior.prior_centers();
    z[posterior.spec().p] = f64::MAX; // a spatial effect far beyond overflow
    let err = posterior.check(&z).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("non-finite log density"), "{text}");
}

/// With every proportion observed (all sites training) and no elicitations,
/// the SDME posterior is exactly the naive posterior on the same values: the
/// no-misclassification limit.
#[test]
fn sdme_reduces_to_naive_without_misclassification() {
    let k = 3;
    let coords = sdme::spatial::unit_square_grid(k);
    let tess = sdme::spatial::voronoi_tessellation(&coords, None).unwrap();
    let q = 10u32;

    // shared latent values on the q-grid, strictly interior
    let values: Vec<f64> = (0..k * k).map(|j| (1 + (j % (q as usize - 1))) as f64 / q as f64).collect();

    let site = |j: usize, partition: Partition, y: Option<f64>| SiteRecord {
        site_id: coords.ids()[j],
        lon: coords.points()[j][0],
        lat: coords.points()[j][1],
        partition,
        y_true: y,
        covariates: vec![j as f64 / 9.0 - 0.5],
    };

    // SDME view: every site training with known y, no classification records
    let sdme_sites = SiteTable {
        covariate_names: vec!["x1".into()],
        sites: (0..k * k)
            .map(|j| site(j, Partition::Training, Some(values[j])))
            .collect(),
    };
    let sdme_data =
        Dataset::assemble(sdme_sites, tess.graph.clone(), Vec::new(), q).unwrap();

    // naive view: the same values arrive as one apparent proportion per site
    let naive_sites = SiteTable {
        covariate_names: vec!["x1".into()],
        sites: (0..k * k).map(|j| site(j, Partition::Testing, None)).collect(),
    };
    let records: Vec<sdme::domain::ClassificationRecord> = (0..k * k)
        .flat_map(|j| {
            let positives = (values[j] * q as f64).round() as u32;
            (1..=q).map(move |point| sdme::domain::ClassificationRecord {
                subject_id: 1,
                image_id: (j + 1) as i64,
                point_id: point,
                z: u8::from(point <= positives),
                true_label: None,
            })
        })
        .collect();
    let naive_data = Dataset::assemble(naive_sites, tess.graph.clone(), records, q).unwrap();

    let priors = Priors {
        b_mean: vec![0.5, -1.0],
        b_sd: 5.0,
        phi: Default::default(),
        tau: Default::default(),
        se_shapes: Vec::new(),
        sp_shapes: Vec::new(),
        acc_shapes: Vec::new(),
        sigma_eps_scale: 1.0,
    };
    let sdme_post = Posterior::new(
        ModelSpec::bind(ModelConfig::for_kind(ModelKind::Sdme), priors.clone(), &sdme_data)
            .unwrap(),
    )
    .unwrap();
    let naive_priors = Priors {
        acc_shapes: Vec::new(),
        ..priors
    };
    let naive_post = Posterior::new(
        ModelSpec::bind(ModelConfig::for_kind(ModelKind::Naive), naive_priors, &naive_data)
            .unwrap(),
    )
    .unwrap();

    assert_eq!(sdme_post.dim(), naive_post.dim());
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let mut ga = vec![0.0; sdme_post.dim()];
    let mut gb = vec![0.0; naive_post.dim()];
    for _ in 0..20 {
        let z: Vec<f64> = (0..sdme_post.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = sdme_post.log_density_and_grad(&z, &mut ga);
        let b = naive_post.log_density_and_grad(&z, &mut gb);
        assert!(
            (a - b).abs() < 1e-9,
            "log densities diverge: {a} vs {b}"
        );
        for i in 0..sdme_post.dim() {
            assert!((ga[i] - gb[i]).abs() < 1e-9, "gradient {i}: {} vs {}", ga[i], gb[i]);
        }
    }
}

/// Density is invariant to relabeling of observation order.
#[test]
fn observation_order_does_not_matter() {
    let sim = toy_simulation();
    let config = ModelConfig::for_kind(ModelKind::Sdme);
    let (priors, _) = derive_priors(&sim.dataset, &config).unwrap();
    let spec_a = ModelSpec::bind(config.clone(), priors.clone(), &sim.dataset).unwrap();
    let mut reversed = sim.dataset.clone();
    reversed.observations.reverse();
    let spec_b = ModelSpec::bind(config, priors, &reversed).unwrap();
    let pa = Posterior::new(spec_a).unwrap();
    let pb = Posterior::new(spec_b).unwrap();
    let z = pa.prior_centers();
    let mut ga = vec![0.0; pa.dim()];
    let mut gb = vec![0.0; pb.dim()];
    let a = pa.log_density_and_grad(&z, &mut ga);
    let b = pb.log_density_and_grad(&z, &mut gb);
    assert!((a - b).abs() < 1e-9);
}

/// A lone latent site pulled far from both its observations and its
/// regression mean loses density monotonically (unimodality smoke test).
#[test]
fn single_site_density_decreases_away_from_data() {
    let ids = vec![1, 2];
    let graph = SpatialGraph::from_edges(ids, vec![(0, 1)]).unwrap();
    let q = 10;
    let sites = SiteTable {
        covariate_names: vec![],
        sites: (0..2)
            .map(|j| SiteRecord {
                site_id: (j + 1) as i64,
                lon: j as f64,
                lat: 0.0,
                partition: if j == 0 { Partition::Training } else { Partition::Testing },
                y_true: (j == 0).then_some(0.5),
                covariates: vec![],
            })
            .collect(),
    };
    // subject labels site 2 at about 0.5
    let records: Vec<sdme::domain::ClassificationRecord> = (1..=q)
        .map(|k| sdme::domain::ClassificationRecord {
            subject_id: 1,
            image_id: 2,
            point_id: k,
            z: u8::from(k % 2 == 0),
            true_label: None,
        })
        .chain((1..=q).map(|k| sdme::domain::ClassificationRecord {
            subject_id: 1,
            image_id: 1,
            point_id: k,
            z: u8::from(k % 2 == 0),
            true_label: Some(u8::from(k % 2 == 0)),
        }))
        .collect();
    let dataset = Dataset::assemble(sites, graph, records, q).unwrap();
    let config = ModelConfig::for_kind(ModelKind::Sdme);
    let (priors, _) = derive_priors(&dataset, &config).unwrap();
    let post =
        Posterior::new(ModelSpec::bind(config, priors, &dataset).unwrap()).unwrap();

    let names = post.parameter_names();
    let y_idx = names.iter().position(|n| n == "y[2]").unwrap();
    let base = post.prior_centers();
    let mut grad = vec![0.0; post.dim()];
    let mut previous = f64::INFINITY;
    // y[2] moving 0.5 -> ~0.002 walks steadily downhill
    for step in 0..6 {
        let mut z = base.clone();
        z[y_idx] = -(step as f64);
        let lp = post.log_density_and_grad(&z, &mut grad);
        if step >= 1 {
            assert!(lp < previous, "step {step}: {lp} !< {previous}");
        }
        previous = lp;
    }
}
