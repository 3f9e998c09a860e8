//! Detection, recoverability analysis and kNN correction of a single
//! noise-corrupted feature in a numeric table.
//!
//! The pipeline mirrors a self-driving-lab data-quality loop:
//!
//! 1. [`ingest`]: load a CSV, prune correlated features, split 8:1:1 and
//!    min-max scale each subset on its own.
//! 2. [`knn`]: a kd-tree over the training rows that imputes one feature from
//!    the remaining ones (Manhattan distance, inverse-distance weighting).
//! 3. [`noise`]: corrupt one feature of the test set with additive Gaussian noise.
//! 4. [`detect`]: compare per-feature imputation error distributions on clean
//!    validation data (`Δ_base`) and the noisy test set (`Δ_noise`) with the 1-D
//!    Earth Mover's Distance; the largest shift names the noisy feature.
//! 5. [`recover`]: flag samples whose error exceeds the 95th percentile of the
//!    baseline, re-impute them and score the correction.
//! 6. [`harness`]: deterministic, parallel sweeps over noise level, training
//!    size and seed with plot-ready JSON/CSV output.

pub mod detect;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod knn;
pub mod noise;
pub mod recover;
pub mod stats;
pub mod synth;
pub mod table;

pub use error::{Error, ErrorKind, Result};
pub use table::FeatureTable;
