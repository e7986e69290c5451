//! Desk-scale end-to-end fits on small simulated datasets: summary
//! completeness, support invariants, determinism, prediction behaviour, and
//! prior reproduction.

use sdme::domain::{Dataset, Partition, SiteTable};
use sdme::inference::{fit, predict_unsampled, summarize, InitKind};
use sdme::model::{ModelConfig, ModelKind, ModelSpec, Posterior, Priors};
use sdme::sampler::{run_chains, InitStrategy, SamplerConfig};
use sdme::simulate::{simulate, SimulationConfig};

fn small_sim() -> sdme::simulate::SimulatedDataset {
    let config = SimulationConfig {
        grid_k: 5,
        n_subjects: 8,
        classifiers_min: 4,
        classifiers_max: 8,
        q: 10,
        ..SimulationConfig::default()
    };
    simulate(&config, 21).unwrap()
}

fn quick_sampler(seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_chains: 2,
        n_iter: 1200,
        n_warmup: 600,
        thin: 2,
        seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn sdme_fit_summary_is_complete_and_in_support() {
    let sim = small_sim();
    let result = fit(
        &sim.dataset,
        &ModelConfig::for_kind(ModelKind::Sdme),
        &quick_sampler(1),
        InitKind::DataInformed,
    )
    .unwrap();

    let names: Vec<&str> = result.summary.iter().map(|s| s.name.as_str()).collect();
    assert!(names.contains(&"b0") && names.contains(&"b1") && names.contains(&"phi"));
    for id in &sim.dataset.subject_ids {
        assert!(names.contains(&format!("se[{id}]").as_str()));
        assert!(names.contains(&format!("sp[{id}]").as_str()));
    }
    // every latent (testing/unsampled) site appears; training sites are known
    for s in &sim.dataset.sites.sites {
        let latent = s.partition != Partition::Training;
        assert_eq!(
            names.contains(&format!("y[{}]", s.site_id).as_str()),
            latent,
            "site {}",
            s.site_id
        );
    }
    assert_eq!(result.sites.len(), sim.dataset.n_sites());

    // support invariants on the retained constrained draws
    let draws = &result.draws;
    for (p, name) in draws.names.iter().enumerate() {
        let pooled = draws.pooled(p);
        if name == "phi" {
            assert!(pooled.iter().all(|&v| (10.0..=60.0).contains(&v)));
        } else if name == "tau_u" {
            assert!(pooled.iter().all(|&v| v > 0.0));
        } else if name.starts_with("y[") || name.starts_with("se[") || name.starts_with("sp[") {
            assert!(pooled.iter().all(|&v| v > 0.0 && v < 1.0), "{name}");
        }
    }

    // quantile columns are monotone
    for s in &result.summary {
        assert!(s.p2_5 <= s.p25 && s.p25 <= s.p50 && s.p50 <= s.p75 && s.p75 <= s.p97_5);
    }
}

#[test]
fn weighted_fit_reports_accuracy_parameters() {
    let sim = small_sim();
    let result = fit(
        &sim.dataset,
        &ModelConfig::for_kind(ModelKind::Weighted),
        &quick_sampler(2),
        InitKind::DataInformed,
    )
    .unwrap();
    let names: Vec<&str> = result.summary.iter().map(|s| s.name.as_str()).collect();
    for id in &sim.dataset.subject_ids {
        assert!(names.contains(&format!("acc[{id}]").as_str()));
        assert!(!names.contains(&format!("se[{id}]").as_str()));
    }
    // per-site posteriors exist even without a latent layer
    assert_eq!(result.sites.len(), sim.dataset.n_sites());
    assert!(result.sites.iter().all(|s| s.source == "mean_proportion"));
}

#[test]
fn perfect_subjects_and_full_truth_recover_coefficients() {
    // all sites training, subjects essentially perfect
    let config = SimulationConfig {
        grid_k: 7,
        n_subjects: 8,
        classifiers_min: 4,
        classifiers_max: 8,
        sampled_fraction: 1.0,
        training_fraction: 1.0,
        group_se_means: vec![0.999; 4],
        group_sp_means: vec![0.999; 4],
        phi_se: 5000.0,
        phi_sp: 5000.0,
        ..SimulationConfig::default()
    };
    let sim = simulate(&config, 3).unwrap();
    let result = fit(
        &sim.dataset,
        &ModelConfig::for_kind(ModelKind::Sdme),
        &quick_sampler(3),
        InitKind::DataInformed,
    )
    .unwrap();
    for (name, truth) in [("b0", 1.0), ("b1", -2.0)] {
        let s = result.summary.iter().find(|s| s.name == name).unwrap();
        assert!(
            (s.mean - truth).abs() < 2.0 * s.sd,
            "{name}: {} vs {truth} (sd {})",
            s.mean,
            s.sd
        );
    }
}

#[test]
fn fit_is_deterministic() {
    let sim = small_sim();
    let config = ModelConfig::for_kind(ModelKind::Sdme);
    let sampler = quick_sampler(9);
    let a = fit(&sim.dataset, &config, &sampler, InitKind::PriorJitter).unwrap();
    let b = fit(&sim.dataset, &config, &sampler, InitKind::PriorJitter).unwrap();
    assert_eq!(a.draws.draws, b.draws.draws);
    assert_eq!(a.draws.log_density, b.draws.log_density);
}

#[test]
fn prediction_ignores_withheld_truth_and_handles_empty() {
    let sim = small_sim();
    let result = fit(
        &sim.dataset,
        &ModelConfig::for_kind(ModelKind::Sdme),
        &quick_sampler(4),
        InitKind::DataInformed,
    )
    .unwrap();
    let report = predict_unsampled(&result, &sim.dataset.graph);
    let n_unsampled = sim
        .dataset
        .sites
        .sites
        .iter()
        .filter(|s| s.partition == Partition::Unsampled)
        .count();
    assert_eq!(report.sites.len(), n_unsampled);
    // predictions derive from the fit alone; permuting withheld truths
    // cannot change them (they are not an input)
    let again = predict_unsampled(&result, &sim.dataset.graph);
    assert_eq!(report.sites, again.sites);

    // no unsampled sites -> empty prediction
    let full = SimulationConfig {
        grid_k: 4,
        n_subjects: 8,
        classifiers_min: 4,
        classifiers_max: 8,
        sampled_fraction: 1.0,
        ..SimulationConfig::default()
    };
    let sim = simulate(&full, 5).unwrap();
    let result = fit(
        &sim.dataset,
        &ModelConfig::for_kind(ModelKind::Sdme),
        &quick_sampler(5),
        InitKind::DataInformed,
    )
    .unwrap();
    assert!(predict_unsampled(&result, &sim.dataset.graph).sites.is_empty());
}

#[test]
fn summaries_invariant_to_chain_order() {
    let sim = small_sim();
    let result = fit(
        &sim.dataset,
        &ModelConfig::for_kind(ModelKind::Sdme),
        &quick_sampler(6),
        InitKind::DataInformed,
    )
    .unwrap();
    let draws = &result.draws;
    // swap the two chains wholesale
    let stride = draws.n_retained * draws.n_params;
    let mut swapped = draws.clone();
    swapped.draws = draws.draws[stride..].to_vec();
    swapped.draws.extend_from_slice(&draws.draws[..stride]);
    let a = summarize(draws);
    let b = summarize(&swapped);
    for (x, y) in a.iter().zip(&b) {
        // summation order may differ by rounding; quantiles sort, so exact
        assert!((x.mean - y.mean).abs() <= 1e-12 * x.mean.abs().max(1.0), "{}", x.name);
        assert_eq!(x.p50, y.p50);
        match (x.rhat, y.rhat) {
            (Some(rx), Some(ry)) => assert!((rx - ry).abs() < 1e-9),
            (ox, oy) => assert_eq!(ox.is_none(), oy.is_none()),
        }
    }
}

/// Sampling a data-free model reproduces the prior means of `phi` and
/// `tau_u`, validating the transform Jacobians end to end.
#[test]
fn prior_only_model_reproduces_prior_means() {
    let sites = SiteTable {
        covariate_names: vec![],
        sites: vec![],
    };
    let graph = sdme::spatial::SpatialGraph::from_edges(vec![], std::iter::empty()).unwrap();
    let dataset = Dataset::assemble(sites, graph, Vec::new(), 15).unwrap();
    let priors = Priors {
        b_mean: vec![0.0],
        b_sd: 5.0,
        phi: Default::default(),
        tau: Default::default(),
        se_shapes: vec![],
        sp_shapes: vec![],
        acc_shapes: vec![],
        sigma_eps_scale: 1.0,
    };
    let spec = ModelSpec::bind(ModelConfig::for_kind(ModelKind::Sdme), priors, &dataset).unwrap();
    let posterior = Posterior::new(spec).unwrap();
    let config = SamplerConfig {
        n_chains: 3,
        n_iter: 6000,
        n_warmup: 1500,
        thin: 1,
        seed: 8,
        ..SamplerConfig::default()
    };
    let draws = run_chains(&posterior, &InitStrategy::Origin { width: 2.0 }, &config).unwrap();

    // E[phi] for a Normal(20,5) truncated to [10,60]
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};
    let std = Normal::new(0.0, 1.0).unwrap();
    let (a, b) = ((10.0 - 20.0) / 5.0, (60.0 - 20.0) / 5.0);
    let mass = std.cdf(b) - std.cdf(a);
    let phi_mean_expected = 20.0 + 5.0 * (std.pdf(a) - std.pdf(b)) / mass;

    let phi_idx = draws.param_index("phi").unwrap();
    let tau_idx = draws.param_index("tau_u").unwrap();
    for (idx, expected, label) in [
        (phi_idx, phi_mean_expected, "phi"),
        (tau_idx, 1.0, "tau_u"), // Gamma(0.1, 0.1) mean
    ] {
        let chains = draws.param_chains(idx);
        let pooled = draws.pooled(idx);
        let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
        let ess = sdme::sampler::diagnostics::ess_and_mcse(&chains).unwrap();
        assert!(
            (mean - expected).abs() < 4.0 * ess.mcse_mean,
            "{label}: {mean} vs {expected} (mcse {})",
            ess.mcse_mean
        );
    }
}
