//! Command implementations. Each writes its outputs plus a manifest that is
//! sufficient to reproduce the run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};

use sdme::files::{self, Manifest, SCHEMA_VERSION};
use sdme::inference::{self, InitKind};
use sdme::model::{ModelConfig, ModelKind};
use sdme::sampler::SamplerConfig;
use sdme::simulate::SimulationConfig;

use crate::report;
use crate::SamplerArgs;

const EXIT_OK: u8 = 0;
const EXIT_NOT_CONVERGED: u8 = 2;

/// Reads a config JSON that may be either the bare config or a manifest
/// envelope carrying `config` (and possibly `seed`).
fn read_config_maybe_manifest<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<(T, Option<u64>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("schema_version").is_some() && value.get("config").is_some() {
        let manifest: Manifest = serde_json::from_value(value)?;
        let config = serde_json::from_value(manifest.config)
            .with_context(|| "manifest config does not match the expected schema")?;
        Ok((config, Some(manifest.seed)))
    } else {
        Ok((serde_json::from_value(value)?, None))
    }
}

pub fn simulate(config_path: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<ExitCode> {
    let (config, manifest_seed) = match config_path {
        Some(p) => read_config_maybe_manifest::<SimulationConfig>(&p)?,
        None => (SimulationConfig::default(), None),
    };
    let Some(seed) = seed.or(manifest_seed) else {
        bail!("simulate requires --seed (or a manifest config that records one)");
    };
    let sim = sdme::simulate::simulate(&config, seed)?;
    files::write_simulation_dir(out, &sim)?;
    let (train, test, unsampled) = sim.dataset.sites.partition_counts();
    println!(
        "simulated {} sites ({train} training / {test} testing / {unsampled} unsampled), {} subjects, {} classifications -> {}",
        sim.dataset.n_sites(),
        sim.dataset.n_subjects(),
        sim.dataset.observations.len(),
        out.display()
    );
    Ok(ExitCode::from(EXIT_OK))
}

pub fn fit(
    data: &Path,
    model: &str,
    config_path: Option<PathBuf>,
    init: &str,
    standardize: bool,
    sampler_args: &SamplerArgs,
    out: &Path,
) -> Result<ExitCode> {
    let kind = ModelKind::parse(model)?;
    let mut model_config = match config_path {
        Some(p) => read_config_maybe_manifest::<ModelConfig>(&p)?.0,
        None => ModelConfig::default(),
    };
    model_config.kind = kind;
    if standardize {
        model_config.standardize_covariates = true;
    }
    let mut sampler_config = SamplerConfig::default();
    sampler_args.apply(&mut sampler_config);
    let init_kind = match init {
        "prior-jitter" => InitKind::PriorJitter,
        _ => InitKind::DataInformed,
    };

    let dataset = files::read_dataset_dir(data, None)?;
    let result = inference::fit(&dataset, &model_config, &sampler_config, init_kind)?;

    std::fs::create_dir_all(out)?;
    files::write_draws_csv(&out.join("draws.csv"), &result.draws)?;
    files::write_summary_csv(&out.join("summary.csv"), &result.summary)?;
    files::write_latent_posterior_csv(&out.join("latent_posterior.csv"), &result.sites)?;
    let diag = files::DiagnosticsFile {
        schema_version: SCHEMA_VERSION,
        converged: result.diagnostics.converged,
        max_core_rhat: result.diagnostics.max_core_rhat,
        divergences: result.diagnostics.divergences,
        divergence_rate: result.diagnostics.divergence_rate,
        warnings: result.diagnostics.warnings.clone(),
        params: result
            .summary
            .iter()
            .map(|s| files::ParamDiagnosticsRow {
                name: s.name.clone(),
                rhat: s.rhat,
                ess_bulk: s.ess_bulk,
                ess_tail: s.ess_tail,
                mcse_mean: s.se_mean,
            })
            .collect(),
        adaptation: result.draws.adaptation.clone(),
    };
    files::write_json(&out.join("diagnostics.json"), &diag)?;
    // performance summary of cleaned subjects, keyed by subject id
    files::write_performance_json(
        &out.join("performance.json"),
        &dataset.score_subjects_on_training(),
    )?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: "fit".to_string(),
        seed: sampler_config.seed,
        config: serde_json::json!({
            "model": model_config,
            "sampler": sampler_config,
            "init": init_kind,
            "data_dir": data.display().to_string(),
        }),
        files: vec![
            "draws.csv".into(),
            "summary.csv".into(),
            "latent_posterior.csv".into(),
            "diagnostics.json".into(),
            "performance.json".into(),
            "manifest.json".into(),
        ],
    };
    files::write_json(&out.join("manifest.json"), &manifest)?;

    for w in &result.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "fit {} model: {} parameters, divergence rate {:.2}%, converged: {}",
        kind.as_str(),
        result.summary.len(),
        100.0 * result.diagnostics.divergence_rate,
        result.diagnostics.converged
    );
    Ok(ExitCode::from(if result.diagnostics.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    }))
}

pub fn predict(fit_dir: &Path, data: &Path, out: &Path) -> Result<ExitCode> {
    let manifest: Manifest = files::read_json(&fit_dir.join("manifest.json"))?;
    if manifest.command != "fit" {
        bail!("{} was not written by `sdme fit`", fit_dir.display());
    }
    let model_config: ModelConfig = serde_json::from_value(
        manifest
            .config
            .get("model")
            .cloned()
            .context("manifest lacks a model config")?,
    )?;
    let dataset = files::read_dataset_dir(data, None)?;
    let draws = files::read_draws_csv(&fit_dir.join("draws.csv"))?;
    let (priors, _) = inference::derive_priors(&dataset, &model_config)?;
    let spec = sdme::model::ModelSpec::bind(model_config, priors, &dataset)?;
    let site_partitions: Vec<(i64, sdme::domain::Partition)> = dataset
        .sites
        .sites
        .iter()
        .map(|s| (s.site_id, s.partition))
        .collect();
    let sites = inference::site_posteriors(&draws, &spec, &site_partitions);
    let fake = inference::FitResult {
        kind: spec.config.kind,
        model_config: spec.config.clone(),
        sampler_config: SamplerConfig::default(),
        priors: spec.priors.clone(),
        draws,
        summary: Vec::new(),
        sites,
        diagnostics: inference::FitDiagnostics {
            converged: true,
            max_core_rhat: None,
            divergences: 0,
            divergence_rate: 0.0,
            warnings: Vec::new(),
        },
        site_partitions,
    };
    let prediction = inference::predict_unsampled(&fake, &dataset.graph);
    std::fs::create_dir_all(out)?;
    files::write_latent_posterior_csv(&out.join("predictions.csv"), &prediction.sites)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: "predict".to_string(),
        seed: 0,
        config: serde_json::json!({
            "fit_dir": fit_dir.display().to_string(),
            "data_dir": data.display().to_string(),
        }),
        files: vec!["predictions.csv".into(), "manifest.json".into()],
    };
    files::write_json(&out.join("manifest.json"), &manifest)?;
    for w in &prediction.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "predicted {} unsampled sites -> {}",
        prediction.sites.len(),
        out.display()
    );
    Ok(ExitCode::from(EXIT_OK))
}

pub fn compare(
    replicates: usize,
    config_path: Option<PathBuf>,
    sampler_args: &SamplerArgs,
    out: &Path,
) -> Result<ExitCode> {
    let (sim_config, manifest_seed) = match config_path {
        Some(p) => read_config_maybe_manifest::<SimulationConfig>(&p)?,
        None => (SimulationConfig::default(), None),
    };
    let mut sampler_config = SamplerConfig::default();
    sampler_args.apply(&mut sampler_config);
    let Some(seed) = sampler_args.seed.or(manifest_seed) else {
        bail!("compare requires --seed");
    };
    let report_data =
        inference::replicate_study(replicates, &sim_config, &sampler_config, seed)?;
    std::fs::create_dir_all(out)?;
    files::write_comparison_long_csv(&out.join("comparison_long.csv"), &report_data)?;
    let markdown = report::comparison_markdown(&report_data, &sim_config);
    files::write_atomic(&out.join("report.md"), markdown.as_bytes())?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: "compare".to_string(),
        seed,
        config: serde_json::json!({
            "replicates": replicates,
            "simulation": sim_config,
            "sampler": sampler_config,
        }),
        files: vec![
            "comparison_long.csv".into(),
            "report.md".into(),
            "manifest.json".into(),
        ],
    };
    files::write_json(&out.join("manifest.json"), &manifest)?;
    let failures = report_data.outcomes.iter().filter(|o| o.error.is_some()).count();
    println!(
        "compared {} replicates x 2 models ({} failures) -> {}",
        replicates,
        failures,
        out.display()
    );
    Ok(ExitCode::from(EXIT_OK))
}

pub fn diagnose(draws_path: &Path, out: &Path) -> Result<ExitCode> {
    let draws = files::read_draws_csv(draws_path)?;
    std::fs::create_dir_all(out)?;

    let mut params = Vec::new();
    let mut all_ok = true;
    for p in 0..draws.n_params {
        let chains = draws.param_chains(p);
        let rhat = sdme::sampler::diagnostics::split_rhat(&chains).ok();
        let ess = sdme::sampler::diagnostics::ess_and_mcse(&chains).ok();
        if rhat.map_or(true, |r| r > 1.1) {
            all_ok = false;
        }
        params.push(files::ParamDiagnosticsRow {
            name: draws.names[p].clone(),
            rhat,
            ess_bulk: ess.map(|e| e.bulk),
            ess_tail: ess.map(|e| e.tail),
            mcse_mean: ess.map(|e| e.mcse_mean),
        });
    }
    let diag = files::DiagnosticsFile {
        schema_version: SCHEMA_VERSION,
        converged: all_ok,
        max_core_rhat: params.iter().filter_map(|p| p.rhat).fold(None, |acc, r| {
            Some(acc.map_or(r, |a: f64| a.max(r)))
        }),
        divergences: draws.post_warmup_divergences,
        divergence_rate: draws.divergence_rate(),
        warnings: Vec::new(),
        params,
        adaptation: draws.adaptation.clone(),
    };
    files::write_json(&out.join("diagnostics.json"), &diag)?;
    // trace is the draws in plot-ready wide form
    files::write_draws_csv(&out.join("trace.csv"), &draws)?;
    report::write_density_csv(&out.join("density.csv"), &draws)?;
    println!(
        "diagnosed {} parameters ({} chains x {} draws) -> {}",
        draws.n_params,
        draws.n_chains,
        draws.n_retained,
        out.display()
    );
    Ok(ExitCode::from(EXIT_OK))
}

pub fn adjacency(
    sites_path: &Path,
    out: &Path,
    geojson: Option<PathBuf>,
    bbox: Option<String>,
) -> Result<ExitCode> {
    let table = files::read_sites_csv(sites_path)?;
    let coords = sdme::spatial::SiteCoordinates::new(
        table.sites.iter().map(|s| (s.site_id, s.lon, s.lat)).collect(),
    )?;
    let rect = match bbox {
        Some(text) => {
            let parts: Vec<f64> = text
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .context("bbox must be four comma-separated numbers")?;
            if parts.len() != 4 {
                bail!("bbox must be min_lon,min_lat,max_lon,max_lat");
            }
            Some(sdme::spatial::Rect {
                min_x: parts[0],
                min_y: parts[1],
                max_x: parts[2],
                max_y: parts[3],
            })
        }
        None => None,
    };
    let tess = sdme::spatial::voronoi_tessellation(&coords, rect)?;
    files::write_edges_csv(out, &tess.graph)?;
    if let Some(path) = geojson {
        let gj = sdme::spatial::cells_to_geojson(&tess);
        files::write_atomic(&path, (gj.to_string() + "\n").as_bytes())?;
    }
    println!(
        "{} sites, {} edges -> {}",
        tess.graph.n_sites,
        tess.graph.n_edges(),
        out.display()
    );
    Ok(ExitCode::from(EXIT_OK))
}
