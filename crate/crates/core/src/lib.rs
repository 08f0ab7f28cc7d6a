//! Semantic uncertainty toolkit.
//!
//! Estimates semantic entropy for language-model generations by clustering
//! sampled answers under bidirectional entailment, and trains linear probes
//! on hidden states that predict binarized semantic entropy from a single
//! forward pass. The crate also ships the baselines (naive entropy,
//! length-normalized log-likelihood, p(True)), the evaluation protocols, and
//! a synthetic world with planted ground truth for offline validation.
//!
//! Data-parallel loops (per-query scoring, clustering, probe gradients,
//! evaluation cells, synthetic generation) run on rayon when the default
//! `parallel` feature is on and fall back to sequential iteration otherwise.
//! Results are identical under both modes.

pub mod binarization;
pub mod clustering;
pub mod dataset_store;
pub mod entailment;
pub mod evaluation;
pub mod gateway;
pub mod par;
pub mod probe;
pub mod synthetic;
#[doc(hidden)]
pub mod testing;
pub mod text;
pub mod uncertainty;

pub use binarization::{best_split, even_split, objective_curve, SplitResult};
pub use clustering::{cluster_generations, ClusterMode, SemanticClustering};
pub use dataset_store::{
    ArchiveManifest, DecodeConfig, GenerationSample, GenerationSet, HiddenStateRecord, Position,
    QARecord, Stream,
};
pub use entailment::{EntailmentLabel, Entailer};
pub use par::Execution;
pub use probe::{FeatureSpec, ProbeModel, ProbeTarget, TrainingSet};
pub use uncertainty::UncertaintyReport;
