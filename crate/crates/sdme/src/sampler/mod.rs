//! Multi-chain gradient-based MCMC: chain execution, adaptation, storage,
//! and convergence diagnostics.
//!
//! Chains run independently (in parallel, capped by `SDME_THREADS`), each
//! with a private RNG stream derived from `(seed, chain_id)`, and results are
//! merged by chain index, so a given `(config, data, seed)` is reproducible
//! bit-for-bit regardless of thread scheduling.

pub mod diagnostics;
pub mod nuts;
pub mod targets;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::model::LogDensity;
use crate::{Result, SdmeError};
use nuts::NutsChain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Total iterations per chain, warmup included.
    pub n_iter: usize,
    pub n_warmup: usize,
    pub thin: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            n_iter: 8000,
            n_warmup: 4000,
            thin: 3,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(SdmeError::InvalidInput("n_chains must be positive".into()));
        }
        if self.n_iter <= self.n_warmup {
            return Err(SdmeError::InvalidInput(format!(
                "n_iter ({}) must exceed n_warmup ({})",
                self.n_iter, self.n_warmup
            )));
        }
        if self.thin == 0 {
            return Err(SdmeError::InvalidInput("thin must be at least 1".into()));
        }
        if !(0.0 < self.target_accept && self.target_accept < 1.0) {
            return Err(SdmeError::InvalidInput("target_accept must be in (0,1)".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.n_iter - self.n_warmup) / self.thin
    }
}

/// Where chains start on the unconstrained scale.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    /// Uniform(-width, width) around the origin.
    Origin { width: f64 },
    /// Uniform(-width, width) around given transform-scale centers.
    JitterAround { centers: Vec<f64>, width: f64 },
}

/// Draws a finite starting point, retrying the jitter up to 100 times.
pub fn initialize<D: LogDensity + ?Sized>(
    density: &D,
    strategy: &InitStrategy,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<f64>> {
    const ATTEMPTS: usize = 100;
    let dim = density.dim();
    let mut grad = vec![0.0; dim];
    for _ in 0..ATTEMPTS {
        let z: Vec<f64> = match strategy {
            InitStrategy::Origin { width } => {
                (0..dim).map(|_| rng.random_range(-width..=*width)).collect()
            }
            InitStrategy::JitterAround { centers, width } => centers
                .iter()
                .map(|&c| c + rng.random_range(-width..=*width))
                .collect(),
        };
        if density.log_density_and_grad(&z, &mut grad).is_finite() {
            return Ok(z);
        }
    }
    Err(SdmeError::InitFailed(ATTEMPTS))
}

/// Final adaptation state of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainAdaptation {
    pub step_size: f64,
    pub inv_mass_diag: Vec<f64>,
}

/// Retained draws on the constrained scale, chain-major.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub n_chains: usize,
    pub n_retained: usize,
    pub n_params: usize,
    /// `[chain][retained_iter][param]`, flattened.
    pub draws: Vec<f64>,
    /// Unnormalized log density (Jacobian included) per retained draw.
    pub log_density: Vec<f64>,
    pub divergent: Vec<bool>,
    pub post_warmup_divergences: usize,
    pub post_warmup_transitions: usize,
    pub adaptation: Vec<ChainAdaptation>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn value(&self, chain: usize, iter: usize, param: usize) -> f64 {
        self.draws[(chain * self.n_retained + iter) * self.n_params + param]
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Per-chain series of one parameter.
    pub fn param_chains(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_retained).map(|i| self.value(c, i, param)).collect())
            .collect()
    }

    /// All chains concatenated (chain-major).
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_chains * self.n_retained);
        for c in 0..self.n_chains {
            for i in 0..self.n_retained {
                out.push(self.value(c, i, param));
            }
        }
        out
    }

    pub fn divergence_rate(&self) -> f64 {
        if self.post_warmup_transitions == 0 {
            0.0
        } else {
            self.post_warmup_divergences as f64 / self.post_warmup_transitions as f64
        }
    }
}

struct ChainOutput {
    constrained: Vec<f64>,
    log_density: Vec<f64>,
    divergent: Vec<bool>,
    divergences: usize,
    transitions: usize,
    adaptation: ChainAdaptation,
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

fn run_single_chain<D: LogDensity + ?Sized>(
    density: &D,
    init: &InitStrategy,
    config: &SamplerConfig,
    chain_id: usize,
) -> Result<ChainOutput> {
    let mut rng = chain_rng(config.seed, chain_id);
    let z0 = initialize(density, init, &mut rng)?;
    let mut chain = NutsChain::new(
        density,
        z0,
        config.n_warmup,
        config.target_accept,
        config.max_tree_depth,
        rng,
    );
    let dim = density.dim();
    let retained = config.retained_per_chain();
    let mut constrained = Vec::with_capacity(retained * dim);
    let mut log_density = Vec::with_capacity(retained);
    let mut divergent_flags = Vec::with_capacity(retained);
    let mut divergences = 0usize;
    let mut transitions = 0usize;
    let mut theta = vec![0.0; dim];
    for it in 1..=config.n_iter {
        let info = chain.step();
        if it > config.n_warmup {
            transitions += 1;
            if info.divergent {
                divergences += 1;
            }
            let k = it - config.n_warmup;
            if k % config.thin == 0 && constrained.len() < retained * dim {
                density.constrain(chain.position(), &mut theta);
                constrained.extend_from_slice(&theta);
                log_density.push(chain.log_density());
                divergent_flags.push(info.divergent);
            }
        }
    }
    Ok(ChainOutput {
        constrained,
        log_density,
        divergent: divergent_flags,
        divergences,
        transitions,
        adaptation: ChainAdaptation {
            step_size: chain.step_size(),
            inv_mass_diag: chain.inv_mass().to_vec(),
        },
    })
}

/// Number of worker threads: `SDME_THREADS` when set, else hardware
/// parallelism.
pub fn thread_cap() -> usize {
    std::env::var("SDME_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

/// Runs all chains and merges the retained, constrained draws.
pub fn run_chains<D: LogDensity + ?Sized>(
    density: &D,
    init: &InitStrategy,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let n_chains = config.n_chains;
    let mut outputs: Vec<Option<ChainOutput>> = (0..n_chains).map(|_| None).collect();
    let cap = thread_cap().max(1);
    let ids: Vec<usize> = (0..n_chains).collect();
    for wave in ids.chunks(cap) {
        let wave_results: Vec<(usize, Result<ChainOutput>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&c| scope.spawn(move || (c, run_single_chain(density, init, config, c))))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("chain thread panicked"))
                .collect()
        });
        for (c, result) in wave_results {
            outputs[c] = Some(result?);
        }
    }

    let retained = config.retained_per_chain();
    let dim = density.dim();
    let mut draws = Vec::with_capacity(n_chains * retained * dim);
    let mut log_density = Vec::with_capacity(n_chains * retained);
    let mut divergent = Vec::with_capacity(n_chains * retained);
    let mut post_warmup_divergences = 0;
    let mut post_warmup_transitions = 0;
    let mut adaptation = Vec::with_capacity(n_chains);
    for out in outputs.into_iter().map(|o| o.expect("all chains ran")) {
        draws.extend_from_slice(&out.constrained);
        log_density.extend_from_slice(&out.log_density);
        divergent.extend_from_slice(&out.divergent);
        post_warmup_divergences += out.divergences;
        post_warmup_transitions += out.transitions;
        adaptation.push(out.adaptation);
    }
    let mut warnings = Vec::new();
    let rate = if post_warmup_transitions == 0 {
        0.0
    } else {
        post_warmup_divergences as f64 / post_warmup_transitions as f64
    };
    if rate > 0.20 {
        warnings.push(format!(
            "divergence rate {:.1}% exceeds 20%; results are unreliable",
            rate * 100.0
        ));
    }
    Ok(PosteriorDraws {
        names: density.parameter_names(),
        n_chains,
        n_retained: retained,
        n_params: dim,
        draws,
        log_density,
        divergent,
        post_warmup_divergences,
        post_warmup_transitions,
        adaptation,
        warnings,
    })
}
