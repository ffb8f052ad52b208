//! Adaptive Kriging reliability analysis.
//!
//! A Kriging (Gaussian-process) surrogate of an expensive limit-state function
//! is enriched point by point (or batch by batch) from a Monte Carlo candidate
//! pool until the stochastic failure-probability estimator is precise enough.
//!
//! Module map:
//!
//! * [`rv`] - random-variable specification, LHS / Monte Carlo pools, joint pdf
//! * [`kriging`] - ordinary Kriging fit (MLE), marginal and joint prediction
//! * [`estimator`] - failure probability, estimator variance, stopping rule
//! * [`bernoulli`] - correlated failure-indicator statistics
//! * [`learning`] - learning functions and candidate selection
//! * [`enrich`] - fantasy-based multi-point enrichment
//! * [`bench`] - built-in limit states and the external evaluator protocol
//! * [`driver`] - the adaptive loop, replication studies and grid output

pub mod bench;
pub mod bernoulli;
pub mod driver;
pub mod enrich;
mod error;
pub mod estimator;
pub mod kriging;
mod linalg;
pub mod learning;
pub mod normal;
pub mod rng;
pub mod rv;

pub use error::{Error, Result};
