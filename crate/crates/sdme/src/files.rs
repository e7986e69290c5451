//! Stable file schemas: the CSVs tying the simulator, the fitters, and the
//! CLI together, plus the JSON sidecars (truth, manifest, diagnostics).
//!
//! All CSVs are UTF-8 with LF line endings and a mandatory header; missing
//! values are empty fields. Floats are written in shortest round-trip form,
//! so write -> read -> write is byte-identical. Writes go through a
//! temporary file and a rename.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{ClassificationRecord, Dataset, Partition, SiteRecord, SiteTable};
use crate::inference::{ParamSummary, SitePosterior};
use crate::sampler::{ChainAdaptation, PosteriorDraws};
use crate::simulate::SimulationTruth;
use crate::spatial::SpatialGraph;
use crate::{Result, SdmeError};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_err(file: &Path, message: impl Into<String>) -> SdmeError {
    SdmeError::Schema {
        file: file.display().to_string(),
        message: message.into(),
    }
}

/// Writes bytes to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_f64(field: &str, file: &Path, line: u64) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| schema_err(file, format!("line {line}: '{field}' is not a number")))
}

fn parse_opt_f64(field: &str, file: &Path, line: u64) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, file, line).map(Some)
    }
}

// ---- sites.csv -----------------------------------------------------------

pub fn write_sites_csv(path: &Path, sites: &SiteTable) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec![
            "site_id".to_string(),
            "lon".to_string(),
            "lat".to_string(),
            "partition".to_string(),
            "y_true".to_string(),
        ];
        header.extend(sites.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for s in &sites.sites {
            let mut rec = vec![
                s.site_id.to_string(),
                s.lon.to_string(),
                s.lat.to_string(),
                s.partition.as_str().to_string(),
                fmt_opt(s.y_true),
            ];
            rec.extend(s.covariates.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    write_atomic(path, &out)
}

pub fn read_sites_csv(path: &Path) -> Result<SiteTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let fixed = ["site_id", "lon", "lat", "partition", "y_true"];
    if header.len() < fixed.len() {
        return Err(schema_err(path, "header too short"));
    }
    for (i, name) in fixed.iter().enumerate() {
        if &header[i] != *name {
            return Err(schema_err(
                path,
                format!("expected column {i} to be '{name}', found '{}'", &header[i]),
            ));
        }
    }
    let covariate_names: Vec<String> = header.iter().skip(fixed.len()).map(String::from).collect();
    let mut sites = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        if row.len() != header.len() {
            return Err(schema_err(path, format!("line {line}: wrong field count")));
        }
        let site_id = row[0]
            .parse::<i64>()
            .map_err(|_| schema_err(path, format!("line {line}: bad site_id '{}'", &row[0])))?;
        let partition = Partition::parse(&row[3])
            .map_err(|e| schema_err(path, format!("line {line}: {e}")))?;
        let covariates = (fixed.len()..header.len())
            .map(|i| parse_f64(&row[i], path, line))
            .collect::<Result<Vec<f64>>>()?;
        sites.push(SiteRecord {
            site_id,
            lon: parse_f64(&row[1], path, line)?,
            lat: parse_f64(&row[2], path, line)?,
            partition,
            y_true: parse_opt_f64(&row[4], path, line)?,
            covariates,
        });
    }
    Ok(SiteTable {
        sites,
        covariate_names,
    })
}

// ---- classifications.csv ---------------------------------------------------

pub fn write_classifications_csv(path: &Path, records: &[ClassificationRecord]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["subject_id", "image_id", "point_id", "z", "true_label"])?;
        for r in records {
            w.write_record(&[
                r.subject_id.to_string(),
                r.image_id.to_string(),
                r.point_id.to_string(),
                r.z.to_string(),
                r.true_label.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }
    write_atomic(path, &out)
}

pub fn read_classifications_csv(path: &Path) -> Result<Vec<ClassificationRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let expected = ["subject_id", "image_id", "point_id", "z", "true_label"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(schema_err(path, "unexpected header"));
    }
    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        let parse_int = |field: &str, what: &str| -> Result<i64> {
            field
                .parse::<i64>()
                .map_err(|_| schema_err(path, format!("line {line}: bad {what} '{field}'")))
        };
        records.push(ClassificationRecord {
            subject_id: parse_int(&row[0], "subject_id")?,
            image_id: parse_int(&row[1], "image_id")?,
            point_id: parse_int(&row[2], "point_id")? as u32,
            z: parse_int(&row[3], "z")? as u8,
            true_label: if row[4].is_empty() {
                None
            } else {
                Some(parse_int(&row[4], "true_label")? as u8)
            },
        });
    }
    Ok(records)
}

// ---- edges.csv -------------------------------------------------------------

/// Edge list by site_id, one `l,t` row per edge with `l < t`.
pub fn write_edges_csv(path: &Path, graph: &SpatialGraph) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["l", "t"])?;
        let mut rows: Vec<(i64, i64)> = graph
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (graph.site_ids[a], graph.site_ids[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        rows.sort_unstable();
        for (l, t) in rows {
            w.write_record(&[l.to_string(), t.to_string()])?;
        }
        w.flush()?;
    }
    write_atomic(path, &out)
}

pub fn read_edges_csv(path: &Path, sites: &SiteTable) -> Result<SpatialGraph> {
    let index: BTreeMap<i64, usize> = sites
        .sites
        .iter()
        .enumerate()
        .map(|(j, s)| (s.site_id, j))
        .collect();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["l", "t"] {
        return Err(schema_err(path, "unexpected header"));
    }
    let mut edges = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        let lookup = |field: &str| -> Result<usize> {
            let id = field
                .parse::<i64>()
                .map_err(|_| schema_err(path, format!("line {line}: bad site id '{field}'")))?;
            index
                .get(&id)
                .copied()
                .ok_or_else(|| schema_err(path, format!("line {line}: unknown site {id}")))
        };
        edges.push((lookup(&row[0])?, lookup(&row[1])?));
    }
    let site_ids: Vec<i64> = sites.sites.iter().map(|s| s.site_id).collect();
    SpatialGraph::from_edges(site_ids, edges)
}

// ---- JSON sidecars ----------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Run manifest: everything needed to reproduce a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    /// Effective configuration, fully defaulted.
    pub config: serde_json::Value,
    pub files: Vec<String>,
}

pub fn write_truth_json(path: &Path, truth: &SimulationTruth) -> Result<()> {
    write_json(path, truth)
}

pub fn read_truth_json(path: &Path) -> Result<SimulationTruth> {
    read_json(path)
}

// ---- draws.csv ---------------------------------------------------------------

/// Columnar draws: `chain,iter` then one column per parameter.
pub fn write_draws_csv(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["chain".to_string(), "iter".to_string()];
        header.extend(draws.names.iter().cloned());
        w.write_record(&header)?;
        for c in 0..draws.n_chains {
            for i in 0..draws.n_retained {
                let mut rec = vec![c.to_string(), i.to_string()];
                for p in 0..draws.n_params {
                    rec.push(draws.value(c, i, p).to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
    }
    write_atomic(path, &out)
}

/// Reads draws back; adaptation records and divergence flags are not part of
/// the CSV schema, so they come back empty.
pub fn read_draws_csv(path: &Path) -> Result<PosteriorDraws> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "iter" {
        return Err(schema_err(path, "expected 'chain,iter,<params...>' header"));
    }
    let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
    let n_params = names.len();
    let mut per_chain: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        if row.len() != header.len() {
            return Err(schema_err(path, format!("line {line}: wrong field count")));
        }
        let chain = row[0]
            .parse::<usize>()
            .map_err(|_| schema_err(path, format!("line {line}: bad chain '{}'", &row[0])))?;
        let values = per_chain.entry(chain).or_default();
        for p in 0..n_params {
            values.push(parse_f64(&row[p + 2], path, line)?);
        }
    }
    if per_chain.is_empty() {
        return Err(schema_err(path, "no draws"));
    }
    let n_chains = per_chain.len();
    let lens: Vec<usize> = per_chain.values().map(|v| v.len() / n_params).collect();
    let n_retained = lens[0];
    if lens.iter().any(|&l| l != n_retained) {
        return Err(schema_err(path, "chains have unequal lengths"));
    }
    let mut draws = Vec::with_capacity(n_chains * n_retained * n_params);
    for (_, values) in per_chain {
        draws.extend(values);
    }
    let total = n_chains * n_retained;
    Ok(PosteriorDraws {
        names,
        n_chains,
        n_retained,
        n_params,
        draws,
        log_density: vec![f64::NAN; total],
        divergent: vec![false; total],
        post_warmup_divergences: 0,
        post_warmup_transitions: 0,
        adaptation: Vec::new(),
        warnings: Vec::new(),
    })
}

// ---- summary.csv / latent_posterior.csv / comparison_long.csv -----------------

pub fn write_summary_csv(path: &Path, summary: &[ParamSummary]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record([
            "param", "mean", "se_mean", "sd", "p2.5", "p25", "p50", "p75", "p97.5", "rhat",
            "ess_bulk", "ess_tail",
        ])?;
        for s in summary {
            w.write_record(&[
                s.name.clone(),
                s.mean.to_string(),
                fmt_opt(s.se_mean),
                s.sd.to_string(),
                s.p2_5.to_string(),
                s.p25.to_string(),
                s.p50.to_string(),
                s.p75.to_string(),
                s.p97_5.to_string(),
                fmt_opt(s.rhat),
                fmt_opt(s.ess_bulk),
                fmt_opt(s.ess_tail),
            ])?;
        }
        w.flush()?;
    }
    write_atomic(path, &out)
}

pub fn write_latent_posterior_csv(path: &Path, sites: &[SitePosterior]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record([
            "site_id", "partition", "source", "mean", "sd", "hdi_lo", "hdi_hi", "quintile",
        ])?;
        for s in sites {
            w.write_record(&[
                s.site_id.to_string(),
                s.partition.as_str().to_string(),
                s.source.clone(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.hdi_lo.to_string(),
                s.hdi_hi.to_string(),
                s.quintile.to_string(),
            ])?;
        }
        w.flush()?;
    }
    write_atomic(path, &out)
}

pub fn write_comparison_long_csv(
    path: &Path,
    report: &crate::inference::ComparisonReport,
) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record([
            "replicate", "seed", "model", "converged", "metric", "estimate", "truth",
        ])?;
        for o in &report.outcomes {
            if let Some(err) = &o.error {
                w.write_record(&[
                    o.replicate.to_string(),
                    o.seed.to_string(),
                    o.model.as_str().to_string(),
                    "false".to_string(),
                    "error".to_string(),
                    String::new(),
                    err.clone(),
                ])?;
                continue;
            }
            for m in &o.metrics {
                w.write_record(&[
                    o.replicate.to_string(),
                    o.seed.to_string(),
                    o.model.as_str().to_string(),
                    o.converged.to_string(),
                    m.name.clone(),
                    m.estimate.to_string(),
                    fmt_opt(m.truth),
                ])?;
            }
        }
        w.flush()?;
    }
    write_atomic(path, &out)
}

/// Per-parameter diagnostics plus run-level convergence state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub schema_version: u32,
    pub converged: bool,
    pub max_core_rhat: Option<f64>,
    pub divergences: usize,
    pub divergence_rate: f64,
    pub warnings: Vec<String>,
    pub params: Vec<ParamDiagnosticsRow>,
    pub adaptation: Vec<ChainAdaptation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDiagnosticsRow {
    pub name: String,
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub ess_tail: Option<f64>,
    pub mcse_mean: Option<f64>,
}

/// Performance summary keyed by original subject id.
pub fn write_performance_json(
    path: &Path,
    perf: &BTreeMap<i64, crate::domain::PerformanceMeasures>,
) -> Result<()> {
    write_json(path, perf)
}

/// Loads `sites.csv`, `classifications.csv`, and `edges.csv` from a
/// directory and assembles the dataset. `q` is taken from the manifest when
/// present, else inferred from the records.
pub fn read_dataset_dir(dir: &Path, q_override: Option<u32>) -> Result<Dataset> {
    let sites = read_sites_csv(&dir.join("sites.csv"))?;
    let records = read_classifications_csv(&dir.join("classifications.csv"))?;
    let graph = read_edges_csv(&dir.join("edges.csv"), &sites)?;
    let q = match q_override {
        Some(q) => q,
        None => {
            let manifest_path = dir.join("manifest.json");
            let from_manifest = manifest_path
                .exists()
                .then(|| read_json::<Manifest>(&manifest_path).ok())
                .flatten()
                .and_then(|m| m.config.get("q").and_then(|v| v.as_u64()).map(|v| v as u32));
            match from_manifest {
                Some(q) => q,
                None => records.iter().map(|r| r.point_id).max().unwrap_or(0),
            }
        }
    };
    Dataset::assemble(sites, graph, records, q)
}

/// Writes the full simulated dataset directory: sites, classifications,
/// edges, truth, and the manifest.
pub fn write_simulation_dir(
    dir: &Path,
    sim: &crate::simulate::SimulatedDataset,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let files = vec![
        "sites.csv".to_string(),
        "classifications.csv".to_string(),
        "edges.csv".to_string(),
        "truth.json".to_string(),
        "manifest.json".to_string(),
    ];
    write_sites_csv(&dir.join("sites.csv"), &sim.dataset.sites)?;
    write_classifications_csv(&dir.join("classifications.csv"), &sim.dataset.records)?;
    write_edges_csv(&dir.join("edges.csv"), &sim.dataset.graph)?;
    write_truth_json(&dir.join("truth.json"), &sim.truth)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: "simulate".to_string(),
        seed: sim.truth.seed,
        config: serde_json::to_value(&sim.config)?,
        files: files.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, SimulationConfig};

    fn small_sim() -> crate::simulate::SimulatedDataset {
        let config = SimulationConfig {
            grid_k: 4,
            n_subjects: 8,
            ..SimulationConfig::default()
        };
        simulate(&config, 11).unwrap()
    }

    #[test]
    fn simulation_dir_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let sim = small_sim();
        write_simulation_dir(dir.path(), &sim).unwrap();
        let dataset = read_dataset_dir(dir.path(), None).unwrap();
        assert_eq!(dataset.sites, sim.dataset.sites);
        assert_eq!(dataset.records, sim.dataset.records);
        assert_eq!(dataset.graph.edges, sim.dataset.graph.edges);
        assert_eq!(dataset.q, sim.dataset.q);
        let truth = read_truth_json(&dir.path().join("truth.json")).unwrap();
        assert_eq!(truth, sim.truth);
    }

    #[test]
    fn csv_write_read_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let sim = small_sim();
        write_simulation_dir(dir.path(), &sim).unwrap();
        for name in ["sites.csv", "classifications.csv", "edges.csv"] {
            let first = std::fs::read(dir.path().join(name)).unwrap();
            let dataset = read_dataset_dir(dir.path(), None).unwrap();
            match name {
                "sites.csv" => write_sites_csv(&dir.path().join(name), &dataset.sites).unwrap(),
                "classifications.csv" => {
                    write_classifications_csv(&dir.path().join(name), &dataset.records).unwrap()
                }
                _ => write_edges_csv(&dir.path().join(name), &dataset.graph).unwrap(),
            }
            let second = std::fs::read(dir.path().join(name)).unwrap();
            assert_eq!(first, second, "{name} not byte-identical");
        }
    }

    #[test]
    fn schema_violation_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sites.csv");
        std::fs::write(
            &path,
            "site_id,lon,lat,partition,y_true,x1\n1,0.1,0.2,training,0.4,0.0\n2,0.3,oops,testing,,0.1\n",
        )
        .unwrap();
        match read_sites_csv(&path) {
            Err(SdmeError::Schema { message, .. }) => {
                assert!(message.contains("line 3"), "{message}")
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn draws_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let draws = PosteriorDraws {
            names: vec!["a".into(), "b".into()],
            n_chains: 2,
            n_retained: 3,
            n_params: 2,
            draws: (0..12).map(|i| i as f64 / 7.0).collect(),
            log_density: vec![0.0; 6],
            divergent: vec![false; 6],
            post_warmup_divergences: 0,
            post_warmup_transitions: 6,
            adaptation: Vec::new(),
            warnings: Vec::new(),
        };
        let path = dir.path().join("draws.csv");
        write_draws_csv(&path, &draws).unwrap();
        let back = read_draws_csv(&path).unwrap();
        assert_eq!(back.names, draws.names);
        assert_eq!(back.draws, draws.draws);
        // byte-identical on rewrite
        let first = std::fs::read(&path).unwrap();
        write_draws_csv(&path, &back).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
