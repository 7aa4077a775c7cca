//! Score-based probabilistic group testing.
//!
//! Identifies K defective items among N by pooled Bernoulli tests: items are
//! assigned to tests at random, every (inclusion, outcome) pair contributes a
//! score, and items whose total crosses a threshold Z are accused. The crate
//! covers the traditional oracle plus noisy (dilution, additive) and
//! threshold (majority, Bernoulli-gap, linear-gap, unknown) variants, in both
//! one-shot and sequential designs, and validates the error budgets by
//! seeded Monte Carlo simulation.

mod binom;
pub mod cli;
pub mod design;
pub mod error;
pub mod models;
pub mod scores;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use models::{ModelKind, ModelSpec};
pub use scores::{best_score_table, finetune, generic_score_table, score_table, ScoreTable};
pub use stats::{
    asymptotic_code_length, code_length_adaptive, code_length_nonadaptive, code_length_unrounded,
    eta, moments, DesignParams, InclusionProbs, MomentSummary,
};
