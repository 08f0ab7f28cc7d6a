//! Directional entailment judgments behind a single trait.
//!
//! Backends: normalized lexical match (offline, deterministic), a remote NLI
//! classifier, and the gateway LLM judge. [`CachedEntailer`] adds a
//! persistent journal in front of any of them.

mod cache;
mod remote;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CachedEntailer, EntailmentCache};
pub use remote::{JudgeEntailer, NliHttpEntailer};

use crate::text::normalize_answer;

#[derive(Debug, Error)]
pub enum EntailmentError {
    #[error("entailment input is empty after trimming")]
    EmptyText,
    #[error("entailment backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("entailment cache is corrupt: {0}")]
    CacheCorrupt(String),
    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntailmentLabel {
    Entailment,
    Contradiction,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Lexical,
    NliHttp,
    LlmJudge,
    /// Ground-truth predicate of the synthetic lab.
    Oracle,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Lexical => "lexical",
            BackendKind::NliHttp => "nli_http",
            BackendKind::LlmJudge => "llm_judge",
            BackendKind::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntailmentJudgment {
    pub label: EntailmentLabel,
    pub source: BackendKind,
    pub cached: bool,
}

pub trait Entailer: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Raw directional judgment; inputs are already validated non-empty.
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<EntailmentJudgment, EntailmentError>;
}

impl<E: Entailer + ?Sized> Entailer for &E {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn judge(&self, a: &str, b: &str) -> Result<EntailmentJudgment, EntailmentError> {
        (**self).judge(a, b)
    }
}

impl<E: Entailer + ?Sized> Entailer for Box<E> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn judge(&self, a: &str, b: &str) -> Result<EntailmentJudgment, EntailmentError> {
        (**self).judge(a, b)
    }
}

/// Does `a` entail `b`? Order matters.
pub fn entails<E: Entailer + ?Sized>(
    backend: &E,
    a: &str,
    b: &str,
) -> Result<EntailmentJudgment, EntailmentError> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(EntailmentError::EmptyText);
    }
    backend.judge(a, b)
}

/// Mutual entailment: the meaning-equivalence predicate used for clustering.
pub fn bidirectional_equivalent<E: Entailer + ?Sized>(
    backend: &E,
    a: &str,
    b: &str,
) -> Result<bool, EntailmentError> {
    Ok(entails(backend, a, b)?.label == EntailmentLabel::Entailment
        && entails(backend, b, a)?.label == EntailmentLabel::Entailment)
}

/// Entailment iff both sides normalize to the same string.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalEntailer;

impl Entailer for LexicalEntailer {
    fn kind(&self) -> BackendKind {
        BackendKind::Lexical
    }

    fn judge(&self, a: &str, b: &str) -> Result<EntailmentJudgment, EntailmentError> {
        let label = if normalize_answer(a) == normalize_answer(b) {
            EntailmentLabel::Entailment
        } else {
            EntailmentLabel::Neutral
        };
        Ok(EntailmentJudgment {
            label,
            source: BackendKind::Lexical,
            cached: false,
        })
    }
}

/// Prefixes every answer with its question, for question-conditioned
/// entailment.
pub fn condition_on_question(question: &str, answers: &[&str]) -> Vec<String> {
    answers.iter().map(|a| format!("{question} {a}")).collect()
}
