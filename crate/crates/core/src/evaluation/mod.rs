//! Correctness labelling, AUROC and the evaluation protocols.

mod auroc;
mod output;
mod protocol;
mod task;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use auroc::{auroc, auroc_pairwise, auroc_ratio};
pub use output::{read_results_csv, render_table, write_results_csv, write_results_jsonl};
pub use protocol::{
    evaluate_probe, run_protocol, train_probe_on, ProbeKind, ProtocolConfig, ProtocolReport,
    SplitMethod, CellFailure,
};
pub use task::{load_task, load_task_with, test_split, SeSource, TaskData, TaskFeatures, TaskManifest};

use crate::binarization::SplitError;
use crate::dataset_store::{GenerationSet, QARecord, StoreError};
use crate::gateway::GatewayError;
use crate::par::{self, Execution};
use crate::probe::ProbeError;
use crate::text::normalized_tokens;

pub const DEFAULT_F1_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold labels contain a single class")]
    SingleClassGold,
    #[error("{scores} scores for {gold} gold labels")]
    LengthMismatch { scores: usize, gold: usize },
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("no greedy generation for {0:?}")]
    MissingGreedy(String),
    #[error("no references for {0:?}")]
    NoReferences(String),
    #[error("≥ 2 tasks required for {0}")]
    NotEnoughTasks(Protocol),
    #[error("task {task}: {message}")]
    BadTask { task: String, message: String },
    #[error("judge failed for {id:?}: {source}")]
    Judge { id: String, source: GatewayError },
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Protocol {
    InDist,
    HoldoutTrain,
    SingleTrainLoo,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::InDist => "IN_DIST",
            Protocol::HoldoutTrain => "HOLDOUT_TRAIN",
            Protocol::SingleTrainLoo => "SINGLE_TRAIN_LOO",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Gold {
    BinarizedSe,
    Correctness,
}

impl std::fmt::Display for Gold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Gold::BinarizedSe => "BINARIZED_SE",
            Gold::Correctness => "CORRECTNESS",
        })
    }
}

/// One AUROC cell. For CORRECTNESS gold the positive class is an incorrect
/// answer, and every predictor is oriented so that higher means "more
/// likely wrong".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub predictor: String,
    pub protocol: Protocol,
    pub train_tasks: Vec<String>,
    pub eval_task: String,
    pub gold: Gold,
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(default)]
    pub row: RowKind,
}

/// Plain cells, or the per-eval-task mean over single-train cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RowKind {
    #[default]
    Cell,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorrectnessMethod {
    F1Threshold,
    LlmJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessLabel {
    pub id: String,
    pub correct: bool,
    pub method: CorrectnessMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

fn token_f1(pred: &[String], reference: &[String]) -> f64 {
    if pred.is_empty() || reference.is_empty() {
        return if pred.is_empty() && reference.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-level F1 after answer normalization, maximized over references.
pub fn squad_f1<S: AsRef<str>>(prediction: &str, references: &[S]) -> f64 {
    let pred = normalized_tokens(prediction);
    references
        .iter()
        .map(|r| token_f1(&pred, &normalized_tokens(r.as_ref())))
        .fold(0.0, f64::max)
}

fn greedy_for<'a>(
    record: &QARecord,
    by_id: &HashMap<&str, &'a GenerationSet>,
) -> Result<&'a GenerationSet> {
    by_id
        .get(record.id.as_str())
        .copied()
        .ok_or_else(|| EvalError::MissingGreedy(record.id.clone()))
}

/// Short-form labels: the greedy answer is correct iff its F1 against the
/// references reaches `threshold`.
pub fn label_correctness_short(
    records: &[QARecord],
    gen_sets: &[GenerationSet],
    threshold: f64,
) -> Result<Vec<CorrectnessLabel>> {
    let by_id: HashMap<&str, &GenerationSet> = gen_sets.iter().map(|g| (g.id.as_str(), g)).collect();
    records
        .iter()
        .map(|r| {
            let g = greedy_for(r, &by_id)?;
            if r.answers.is_empty() {
                return Err(EvalError::NoReferences(r.id.clone()));
            }
            let f1 = squad_f1(&g.greedy.text, &r.answers);
            Ok(CorrectnessLabel {
                id: r.id.clone(),
                correct: f1 >= threshold,
                method: CorrectnessMethod::F1Threshold,
                f1: Some(f1),
            })
        })
        .collect()
}

/// Long-form labels from a judge (normally the gateway's correctness
/// prompt). Failures stay in place per record.
pub fn label_correctness_long<J>(
    exec: Execution,
    records: &[QARecord],
    gen_sets: &[GenerationSet],
    judge: J,
) -> Vec<Result<CorrectnessLabel>>
where
    J: Fn(&QARecord, &str) -> std::result::Result<bool, GatewayError> + Sync + Send,
{
    let by_id: HashMap<&str, &GenerationSet> = gen_sets.iter().map(|g| (g.id.as_str(), g)).collect();
    par::map(exec, records, |r| {
        let g = greedy_for(r, &by_id)?;
        let correct = judge(r, &g.greedy.text).map_err(|source| EvalError::Judge {
            id: r.id.clone(),
            source,
        })?;
        Ok(CorrectnessLabel {
            id: r.id.clone(),
            correct,
            method: CorrectnessMethod::LlmJudge,
            f1: None,
        })
    })
}
