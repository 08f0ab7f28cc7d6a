//! On-disk data model shared by every pipeline stage.
//!
//! Text records (QA items, generation sets, reports, labels) are JSONL, one
//! object per line. Hidden states live in a little-endian binary archive, see
//! [`archive`].

pub mod archive;
mod quantile;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{
    read_hidden_archive, write_hidden_archive, ArchiveFilter, ArchiveReader, ArchiveWriter,
};
pub use quantile::{filter_quantile_band, filter_quantile_band_by_task, linear_quantile};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid record on line {line}: {message}")]
    InvalidRecord { line: usize, message: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("vector for {id:?} has length {got}, manifest hidden_dim is {expected}")]
    DimMismatch { id: String, expected: usize, got: usize },
    #[error("record {id:?} is inconsistent with the manifest: {message}")]
    InconsistentRecord { id: String, message: String },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    VersionUnsupported(u32),
    #[error("archive is truncated")]
    TruncatedFile,
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid quantile band lo={lo} hi={hi}")]
    BadBand { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// One question with its ground-truth references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub answers: Vec<String>,
    pub dataset: String,
}

/// A single completion. Log-probs are natural-log, one per generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSample {
    pub text: String,
    #[serde(default)]
    pub token_log_probs: Vec<f64>,
    pub temperature: f64,
}

impl GenerationSample {
    pub fn has_log_probs(&self) -> bool {
        !self.token_log_probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub n_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            temperature: 1.0,
            top_p: 0.9,
            top_k: 50,
        }
    }
}

/// Greedy answer plus the high-temperature samples for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSet {
    pub id: String,
    pub greedy: GenerationSample,
    pub samples: Vec<GenerationSample>,
    pub decode_config: DecodeConfig,
}

impl GenerationSet {
    pub fn sample_texts(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.text.as_str()).collect()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.samples.len() != self.decode_config.n_samples {
            return Err(format!(
                "n_samples is {} but {} samples present",
                self.decode_config.n_samples,
                self.samples.len()
            ));
        }
        for s in std::iter::once(&self.greedy).chain(&self.samples) {
            if s.temperature < 0.0 {
                return Err("negative temperature".into());
            }
            if let Some(lp) = s.token_log_probs.iter().find(|lp| !(**lp <= 0.0)) {
                return Err(format!("token log-prob {lp} is not <= 0"));
            }
        }
        Ok(())
    }
}

/// Token position a hidden state was read at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Position {
    /// Last generated token before end-of-sequence.
    Slt,
    /// Last prompt token, before generation starts.
    Tbg,
}

impl Position {
    pub fn code(self) -> u8 {
        match self {
            Position::Slt => 0,
            Position::Tbg => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Position::Slt),
            1 => Some(Position::Tbg),
            _ => None,
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Position::Slt => "SLT",
            Position::Tbg => "TBG",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stream {
    Hidden,
    Residual,
    Mlp,
}

impl Stream {
    pub fn code(self) -> u8 {
        match self {
            Stream::Hidden => 0,
            Stream::Residual => 1,
            Stream::Mlp => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Stream::Hidden),
            1 => Some(Stream::Residual),
            2 => Some(Stream::Mlp),
            _ => None,
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Hidden => "HIDDEN",
            Stream::Residual => "RESIDUAL",
            Stream::Mlp => "MLP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStateRecord {
    pub id: String,
    pub position: Position,
    pub stream: Stream,
    pub layer: u16,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub model_name: String,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub positions: Vec<Position>,
    pub streams: Vec<Stream>,
    pub record_count: u64,
    pub dtype: String,
}

impl ArchiveManifest {
    pub const DTYPE: &'static str = "f32le";

    pub fn new(
        model_name: impl Into<String>,
        hidden_dim: usize,
        n_layers: usize,
        positions: Vec<Position>,
        streams: Vec<Stream>,
    ) -> Self {
        Self {
            model_name: model_name.into(),
            hidden_dim,
            n_layers,
            positions,
            streams,
            record_count: 0,
            dtype: Self::DTYPE.to_owned(),
        }
    }

    /// Checks a record against this manifest.
    pub fn check(&self, r: &HiddenStateRecord) -> Result<()> {
        if r.vector.len() != self.hidden_dim {
            return Err(StoreError::DimMismatch {
                id: r.id.clone(),
                expected: self.hidden_dim,
                got: r.vector.len(),
            });
        }
        let bad = |message: String| StoreError::InconsistentRecord {
            id: r.id.clone(),
            message,
        };
        if usize::from(r.layer) >= self.n_layers {
            return Err(bad(format!("layer {} >= n_layers {}", r.layer, self.n_layers)));
        }
        if !self.positions.contains(&r.position) {
            return Err(bad(format!("position {} not declared", r.position)));
        }
        if !self.streams.contains(&r.stream) {
            return Err(bad(format!("stream {} not declared", r.stream)));
        }
        if r.id.len() > usize::from(u16::MAX) {
            return Err(bad("id longer than 65535 bytes".into()));
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite component".into()));
        }
        Ok(())
    }
}

/// Reads every non-blank line of a JSONL file as `T`.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T, I>(path: impl AsRef<Path>, items: I) -> Result<usize>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Reads QA records in file order, rejecting duplicate ids.
pub fn read_qa_jsonl(path: impl AsRef<Path>) -> Result<Vec<QARecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<QARecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QARecord = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.question.trim().is_empty() {
            return Err(StoreError::InvalidRecord {
                line: i + 1,
                message: "empty question".into(),
            });
        }
        if rec.answers.is_empty() {
            return Err(StoreError::InvalidRecord {
                line: i + 1,
                message: "answers must be non-empty".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(StoreError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads generation sets, validating sample counts and log-prob signs.
pub fn read_generations_jsonl(path: impl AsRef<Path>) -> Result<Vec<GenerationSet>> {
    let sets: Vec<GenerationSet> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for (i, set) in sets.iter().enumerate() {
        set.validate().map_err(|message| StoreError::InvalidRecord {
            line: i + 1,
            message,
        })?;
        if !seen.insert(set.id.as_str()) {
            return Err(StoreError::DuplicateId(set.id.clone()));
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn reads_capital_of_france() {
        let f = write_lines(&[
            r#"{"id":"q1","question":"What is the capital of France?","answers":["Paris"],"dataset":"demo"}"#,
        ]);
        let recs = read_qa_jsonl(f.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, "q1");
        assert_eq!(recs[0].context, None);
        assert_eq!(recs[0].answers, vec!["Paris".to_string()]);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let f = write_lines(&[]);
        assert!(read_qa_jsonl(f.path()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let l = r#"{"id":"q1","question":"x?","answers":["y"],"dataset":"d"}"#;
        let f = write_lines(&[l, l]);
        assert!(matches!(read_qa_jsonl(f.path()), Err(StoreError::DuplicateId(id)) if id == "q1"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[
            r#"{"id":"q1","question":"x?","answers":["y"],"dataset":"d"}"#,
            "{not json",
        ]);
        assert!(matches!(read_qa_jsonl(f.path()), Err(StoreError::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_answers_rejected() {
        let f = write_lines(&[r#"{"id":"q1","question":"x?","answers":[],"dataset":"d"}"#]);
        assert!(matches!(
            read_qa_jsonl(f.path()),
            Err(StoreError::InvalidRecord { line: 1, .. })
        ));
    }

    #[test]
    fn generation_sets_validated() {
        let greedy = GenerationSample {
            text: "Paris".into(),
            token_log_probs: vec![-0.1],
            temperature: 0.0,
        };
        let mut set = GenerationSet {
            id: "q1".into(),
            greedy: greedy.clone(),
            samples: vec![greedy.clone()],
            decode_config: DecodeConfig {
                n_samples: 1,
                ..DecodeConfig::default()
            },
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_jsonl(f.path(), [&set]).unwrap();
        assert_eq!(read_generations_jsonl(f.path()).unwrap(), vec![set.clone()]);

        set.samples[0].token_log_probs = vec![0.5];
        write_jsonl(f.path(), [&set]).unwrap();
        assert!(read_generations_jsonl(f.path()).is_err());
    }

    #[test]
    fn default_decode_config() {
        let c = DecodeConfig::default();
        assert_eq!((c.n_samples, c.temperature, c.top_p, c.top_k), (10, 1.0, 0.9, 50));
    }
}
