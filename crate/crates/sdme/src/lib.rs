//! Spatially dependent misclassification error (SDME) modelling for
//! crowdsourced point-classification data.
//!
//! The library covers the full pipeline:
//!
//! * [`spatial`] — Voronoi tessellation of site coordinates and the adjacency
//!   graph consumed by the CAR prior.
//! * [`domain`] — classification records, apparent proportions, per-annotator
//!   sensitivity/specificity/accuracy, and prior elicitation helpers.
//! * [`simulate`] — synthetic dataset generation: spatially correlated latent
//!   cover proportions, skill-grouped annotators, and the
//!   training/testing/unsampled partition.
//! * [`model`] — log-posterior densities with analytic gradients for the SDME,
//!   accuracy-weighted, and naive models, plus maximum-likelihood beta
//!   regression and the direct bias-correction formula.
//! * [`sampler`] — dynamic HMC (no-U-turn termination) with dual-averaging
//!   step size and diagonal mass adaptation, and rank-normalized convergence
//!   diagnostics.
//! * [`inference`] — end-to-end fits, posterior summaries, latent-field
//!   prediction, coverage reports, and replicated model comparisons.
//! * [`files`] — the CSV/JSON schemas shared by the simulator, the fitter,
//!   and the command-line interface.

pub mod domain;
pub mod error;
pub mod files;
pub mod inference;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod spatial;

pub use error::SdmeError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SdmeError>;
