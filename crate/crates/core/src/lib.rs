//! Bayesian ("informed") source separation.
//!
//! Estimators are written as MAP searches over explicitly stated posteriors:
//!
//! - [`separation`]: Infomax ICA as gradient ascent on the marginal posterior
//!   of the mixing matrix, with pluggable amplitude densities and mixing priors.
//! - [`propagation`]: the mixing-element prior implied by an inverse-square
//!   propagation law and a uniform source position.
//! - [`localization`]: forward-model gains replace the mixing matrix, leaving a
//!   chi-squared fit over source positions and waveshapes.
//! - [`dvca`]: trial-ensemble models, from plain averaging to per-trial
//!   amplitude and latency estimation.
//!
//! [`signalgen`] produces the synthetic data with ground truth that the test
//! suites run against.

pub mod densities;
pub mod dvca;
pub mod error;
pub mod localization;
pub mod metrics;
pub mod propagation;
pub mod separation;
pub mod signalgen;
pub mod types;

pub use error::{Error, Result};
pub use types::{MixingMatrix, RecordingMatrix, SourceMatrix};
