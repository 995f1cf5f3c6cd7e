//! Merged-average classifiers via hashing.
//!
//! Compresses a K-class problem into R independent B-class problems using
//! 2-universal hashes, trains the R small models with zero communication,
//! and recovers per-class scores with sketch-style estimators. Includes a
//! reference count-min sketch, a capacity planner for picking B and R, and
//! ranking metrics for evaluation.

pub mod cli;
pub mod data;
pub mod dataio;
pub mod decoder;
pub mod error;
pub mod hashing;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod sketch;

pub use data::{LabeledSample, SparseVector};
pub use decoder::{decode, gather, predict_class, score_all, top_k, Estimator};
pub use error::{MachError, Result};
pub use hashing::{feature_hash, mix_seed, UniversalHash};
pub use metrics::{EvalQuery, RankedList};
pub use model::{train, train_with_log, MachConfig, MachModel, MetaClassifier, Mode};
pub use sketch::CountMinSketch;
