//! Counterfactual outcome generators for time-varying treatments.
//!
//! The crate simulates longitudinal observational data from linear structural
//! causal models, estimates per-step treatment propensities, and trains
//! conditional generators (a conditional VAE and a classifier-free guided
//! diffusion model) on an inverse-probability-weighted objective so that the
//! learned conditional law of `y | ā` approximates the counterfactual law of
//! `Y(ā)`. Baselines, exact oracles and distributional metrics live alongside.
//!
//! Module map:
//!
//! * [`scm`] - data-generating processes, windowing and counterfactual oracles
//! * [`diffgraph`] - small reverse-mode autodiff core, MLPs and Adam
//! * [`propensity`] - propensity networks and stabilized IPTW weights
//! * [`generators`] - weighted CVAE and guided diffusion
//! * [`baselines`] - KDE, weighted plug-in KDE and MSM regression
//! * [`eval`] - mean distance, 1-Wasserstein, hotspot FID* and aggregation
//! * [`pipeline`] - experiment configuration, persisted stages and the CLI driver

pub mod baselines;
pub mod diffgraph;
pub mod error;
pub mod eval;
pub mod generators;
pub mod pipeline;
pub mod propensity;
pub mod rng;
pub mod scm;

pub use error::{Error, Result};
