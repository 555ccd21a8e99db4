//! Core of a simulation-driven diabetes digital twin.
//!
//! The crate is organised along the data flow of the twin:
//!
//! - [`ingest`] parses CGM fixtures (XML/CSV) and the tabular benchmark, puts
//!   series on a canonical grid and summarises corpora.
//! - [`augment`] expands static benchmark rows into short, intervention
//!   annotated sequences.
//! - [`models`] holds the from-scratch supervised models (OLS, logistic
//!   regression, random forest, gradient boosting, MLP).
//! - [`eval`] provides splits, metrics and the multi-seed benchmark runner.
//! - [`twin`] maintains the rolling latent patient state and the declared
//!   causal graph that constrains interventions.
//! - [`counterfactual`] simulates postprandial trajectories under candidate
//!   interventions, scores them and ranks them.

pub mod augment;
pub mod counterfactual;
pub mod eval;
pub mod ingest;
pub mod matrix;
pub mod models;
pub mod rng;
pub mod twin;

/// The 442-row diabetes progression benchmark shipped with the crate
/// (10 standardized covariates plus `target`).
pub const BENCHMARK_CSV: &str = include_str!("../data/diabetes.csv");

/// Calibration targets for the three reference postprandial scenarios.
pub const REFERENCE_TARGETS_JSON: &str = include_str!("../data/reference_targets.json");

/// The three reference scenarios (baseline meal, reduced carbohydrates,
/// baseline plus walking) in the CLI scenario-file format.
pub const REFERENCE_SCENARIOS_JSON: &str = include_str!("../data/reference_scenarios.json");
