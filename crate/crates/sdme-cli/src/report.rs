//! Markdown comparison report and the kernel-density CSV for plotting.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use sdme::inference::{ComparisonReport, RecoveryRow};
use sdme::model::ModelKind;
use sdme::sampler::PosteriorDraws;
use sdme::simulate::SimulationConfig;

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "-".to_string())
}

fn recovery_table(rows: &[RecoveryRow]) -> String {
    let mut out = String::new();
    out.push_str("| param | true value | mean | se_mean | sd | 2.5% | 25% | 50% | 75% | 97.5% |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.param,
            fmt_opt(r.truth),
            fmt(r.mean),
            fmt_opt(r.se_mean),
            fmt(r.sd),
            fmt(r.p2_5),
            fmt(r.p25),
            fmt(r.p50),
            fmt(r.p75),
            fmt(r.p97_5),
        );
    }
    out
}

/// Renders the comparison study: per-model recovery tables for the first
/// replicate and aggregate bias lines across replicates.
pub fn comparison_markdown(report: &ComparisonReport, sim: &SimulationConfig) -> String {
    let mut out = String::new();
    let n_replicates = report
        .outcomes
        .iter()
        .map(|o| o.replicate + 1)
        .max()
        .unwrap_or(0);
    let _ = writeln!(out, "# Model comparison ({n_replicates} replicates)\n");
    let _ = writeln!(
        out,
        "Simulated grid {k}x{k}, {n} subjects, q = {q}, true b0 = {b0}, b1 = {b1}, phi = {phi}.\n",
        k = sim.grid_k,
        n = sim.n_subjects,
        q = sim.q,
        b0 = sim.b0,
        b1 = sim.b1,
        phi = sim.phi,
    );

    for model in [ModelKind::Weighted, ModelKind::Sdme] {
        if let Some(first) = report
            .outcomes
            .iter()
            .find(|o| o.replicate == 0 && o.model == model && o.error.is_none())
        {
            let _ = writeln!(out, "## {} model (replicate 0)\n", model.as_str());
            out.push_str(&recovery_table(&first.table));
            out.push('\n');
        }
    }

    out.push_str("## Slope recovery across replicates\n\n");
    out.push_str("| replicate | sdme b1 | weighted b1 | closer to truth |\n");
    out.push_str("|---|---|---|---|\n");
    let truth = sim.b1;
    let mut sdme_wins = 0;
    let mut counted = 0;
    for rep in 0..n_replicates {
        let s = report.metric(rep, ModelKind::Sdme, "b1");
        let w = report.metric(rep, ModelKind::Weighted, "b1");
        let verdict = match (s, w) {
            (Some(s), Some(w)) => {
                counted += 1;
                if (s - truth).abs() <= (w - truth).abs() {
                    sdme_wins += 1;
                    "sdme"
                } else {
                    "weighted"
                }
            }
            _ => "n/a",
        };
        let _ = writeln!(
            out,
            "| {rep} | {} | {} | {verdict} |",
            fmt_opt(s),
            fmt_opt(w)
        );
    }
    if counted > 0 {
        let _ = writeln!(
            out,
            "\nSDME closer to the true slope in {sdme_wins} of {counted} replicates."
        );
    }
    for o in report.outcomes.iter().filter(|o| o.error.is_some()) {
        let _ = writeln!(
            out,
            "\n> replicate {} {} failed: {}",
            o.replicate,
            o.model.as_str(),
            o.error.as_deref().unwrap_or("")
        );
    }
    out
}

/// Gaussian kernel density per parameter on a 128-point grid, long format
/// `param,x,density`. Constant parameters are skipped.
pub fn write_density_csv(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().from_writer(&mut out);
        w.write_record(["param", "x", "density"])?;
        for p in 0..draws.n_params {
            let pooled = draws.pooled(p);
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if !(sd > 0.0) {
                continue;
            }
            let mut sorted = pooled.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let iqr = sdme::sampler::diagnostics::sorted_quantile(&sorted, 0.75)
                - sdme::sampler::diagnostics::sorted_quantile(&sorted, 0.25);
            let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
            let bw = (0.9 * spread * n.powf(-0.2)).max(1e-12);
            let (lo, hi) = (sorted[0] - 3.0 * bw, sorted[sorted.len() - 1] + 3.0 * bw);
            let grid = 128usize;
            for g in 0..grid {
                let x = lo + (hi - lo) * g as f64 / (grid - 1) as f64;
                let dens: f64 = pooled
                    .iter()
                    .map(|&v| {
                        let z = (x - v) / bw;
                        (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
                    / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
                w.write_record(&[draws.names[p].clone(), x.to_string(), dens.to_string()])?;
            }
        }
        w.flush()?;
    }
    sdme::files::write_atomic(path, &out)?;
    Ok(())
}
