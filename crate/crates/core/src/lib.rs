//! Cox proportional-hazards regression over horizontally partitioned data.
//!
//! Data partners reduce their rows to risk-set summaries (or, when the
//! model is stratified on the partner id, to per-stratum scores); the
//! analysis center sums them and runs Newton-Raphson. The arithmetic is
//! arranged so a distributed fit matches a pooled fit to rounding.

pub mod aggregate;
pub mod analysis;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod matrix;
pub mod model;
pub mod newton;
pub mod output;
pub mod partition;
pub mod site;
pub mod solver;
pub mod special;

pub use analysis::{fit_local, fit_pooled, Analysis, RunState, RunStatus};
pub use error::{Error, ErrorCategory, Result};
pub use matrix::Matrix;
pub use model::{ingest_dataset, select_computation_path, AnalysisDataset, ComputationPath, ModelSpec, StratumKey, Ties};
pub use newton::{run_fit, EvalPurpose, FitResult, LocalProvider, ScoreProvider};
