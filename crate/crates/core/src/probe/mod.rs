//! Linear probes on hidden states: feature assembly, L2 logistic regression
//! and the probe file format.

mod features;
mod io;
pub mod logreg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{assemble_features, FeatureIndex, FeatureSpec, TrainingSet};
pub use io::{load_probe, save_probe, PROBE_VERSION};
pub use logreg::{fit_probe, FitOptions, ProbeModel, Standardizer, TrainingMeta};

use crate::dataset_store::StoreError;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("no hidden state for id {id:?} at layer {layer}")]
    MissingRecord { id: String, layer: u16 },
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("feature length {got}, probe expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid feature spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training set: {0}")]
    InvalidTrainingSet(String),
    #[error("probe file does not match the schema: {0}")]
    SchemaMismatch(String),
    #[error("unsupported probe file version {0}")]
    VersionUnsupported(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

/// What the probe was supervised with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeTarget {
    /// Binarized semantic entropy; label 1 = high SE.
    #[serde(rename = "SE")]
    Se,
    /// Model correctness; label 1 = correct.
    #[serde(rename = "ACCURACY")]
    Accuracy,
}

impl std::fmt::Display for ProbeTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProbeTarget::Se => "SE",
            ProbeTarget::Accuracy => "ACCURACY",
        })
    }
}
