//! `sdme` — simulate, fit, and compare spatial misclassification models from
//! the command line.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 run completed but failed
//! the convergence gate.

mod commands;
mod report;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sdme",
    about = "Spatially dependent misclassification error models for crowdsourced classification data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SamplerArgs {
    /// Number of MCMC chains.
    #[arg(long)]
    chains: Option<usize>,
    /// Total iterations per chain (warmup included).
    #[arg(long)]
    iter: Option<usize>,
    /// Warmup iterations per chain.
    #[arg(long)]
    warmup: Option<usize>,
    /// Keep one draw in this many.
    #[arg(long)]
    thin: Option<usize>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl SamplerArgs {
    fn apply(&self, config: &mut sdme::sampler::SamplerConfig) {
        if let Some(v) = self.chains {
            config.n_chains = v;
        }
        if let Some(v) = self.iter {
            config.n_iter = v;
        }
        if let Some(v) = self.warmup {
            config.n_warmup = v;
        }
        if let Some(v) = self.thin {
            config.thin = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset following the simulation protocol.
    Simulate {
        /// Simulation config JSON (plain config or a previous manifest).
        #[arg(long)]
        config: Option<PathBuf>,
        /// RNG seed (required unless the config is a manifest carrying one).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to a dataset directory.
    Fit {
        /// Directory with sites.csv, classifications.csv, edges.csv.
        #[arg(long)]
        data: PathBuf,
        /// Which observation model to fit.
        #[arg(long, value_parser = ["sdme", "weighted", "naive"], default_value = "sdme")]
        model: String,
        /// Model config JSON overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Chain initialization strategy.
        #[arg(long, value_parser = ["prior-jitter", "data-informed"], default_value = "data-informed")]
        init: String,
        /// Standardize covariates to zero mean / unit sd.
        #[arg(long)]
        standardize: bool,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize unsampled-site predictions from a previous fit.
    Predict {
        /// Directory written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// The dataset directory that fit used.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicated simulation study comparing the SDME and weighted models.
    Compare {
        /// Number of replicates.
        #[arg(short = 'n', long, default_value_t = 1)]
        replicates: usize,
        /// Simulation config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence diagnostics and plot-ready CSVs from a draws file.
    Diagnose {
        /// draws.csv produced by `fit`.
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voronoi adjacency of a site table.
    Adjacency {
        /// sites.csv (only site_id, lon, lat are used).
        #[arg(long)]
        sites: PathBuf,
        /// Output edges CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write the clipped cell polygons as GeoJSON.
        #[arg(long)]
        geojson: Option<PathBuf>,
        /// Clip box as min_lon,min_lat,max_lon,max_lat (default: padded extent).
        #[arg(long)]
        bbox: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Simulate { config, seed, out } => commands::simulate(config, seed, &out),
        Command::Fit {
            data,
            model,
            config,
            init,
            standardize,
            sampler,
            out,
        } => commands::fit(&data, &model, config, &init, standardize, &sampler, &out),
        Command::Predict { fit, data, out } => commands::predict(&fit, &data, &out),
        Command::Compare {
            replicates,
            config,
            sampler,
            out,
        } => commands::compare(replicates, config, &sampler, &out),
        Command::Diagnose { draws, out } => commands::diagnose(&draws, &out),
        Command::Adjacency {
            sites,
            out,
            geojson,
            bbox,
        } => commands::adjacency(&sites, &out, geojson, bbox),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
