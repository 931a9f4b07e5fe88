//! Anomaly detection and attribute-level attribution for tabular records.
//!
//! The pipeline: encode a mixed categorical/numerical table into a dense
//! `[0, 1]` matrix ([`tabular`]), train a symmetric autoencoder on it and
//! flag rows whose reconstruction error clears a quantile threshold
//! ([`aenn`]), then explain each flagged row by distributing its error over
//! the attributes with Shapley values ([`shap`], [`explainers`]). The
//! [`synthesis`] module builds labelled benchmark tables and [`eval`] scores
//! competing explanation methods against the injected ground truth.
//!
//! Everything that draws randomness takes an explicit seed and produces
//! identical results across runs and thread counts.

pub mod aenn;
pub mod error;
pub mod eval;
pub mod explainers;
pub mod seeding;
pub mod shap;
pub mod synthesis;
pub mod tabular;

pub use error::{Error, Result};
