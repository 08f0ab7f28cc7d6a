use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorrectnessLabel, EvalError, Result};
use crate::dataset_store::{read_hidden_archive, read_jsonl, ArchiveFilter, Position, Stream};
use crate::probe::{FeatureIndex, FeatureSpec};
use crate::uncertainty::UncertaintyReport;

/// Which semantic-entropy estimate supplies the SEP training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeSource {
    #[default]
    Discrete,
    Mc,
}

/// Everything the protocols need about one task, row-aligned by `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub ids: Vec<String>,
    /// Row-major, `ids.len() × feature_spec.concat_dim()`.
    pub features: Vec<f64>,
    pub feature_spec: FeatureSpec,
    pub se: Vec<f64>,
    pub correct: Vec<bool>,
    /// Baseline scores oriented so that higher means more uncertain.
    pub baselines: BTreeMap<String, Vec<f64>>,
    /// Held-out rows; every protocol evaluates on these only.
    pub test: Vec<bool>,
}

impl TaskData {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        ids: Vec<String>,
        features: Vec<f64>,
        feature_spec: FeatureSpec,
        se: Vec<f64>,
        correct: Vec<bool>,
        baselines: BTreeMap<String, Vec<f64>>,
        test: Vec<bool>,
    ) -> Result<Self> {
        let name = name.into();
        let n = ids.len();
        let bad = |message: String| EvalError::BadTask {
            task: name.clone(),
            message,
        };
        let dim = feature_spec.concat_dim();
        if features.len() != n * dim {
            return Err(bad(format!("{} feature values for {n} rows of dim {dim}", features.len())));
        }
        if se.len() != n || correct.len() != n || test.len() != n {
            return Err(bad("se/correct/test lengths differ from ids".into()));
        }
        if let Some((k, _)) = baselines.iter().find(|(_, v)| v.len() != n) {
            return Err(bad(format!("baseline {k} has the wrong length")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(bad(format!("duplicate id {dup:?}")));
        }
        Ok(Self {
            name,
            ids,
            features,
            feature_spec,
            se,
            correct,
            baselines,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.feature_spec.concat_dim();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn train_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.test[i])
    }

    pub fn test_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.test[i])
    }
}

/// Deterministic held-out mask: rows are ranked by a hash of
/// `(seed, id)` and the lowest `ceil(fraction·n)` become test rows. The
/// mask depends only on the id set, not on row order.
pub fn test_split<S: AsRef<str>>(ids: &[S], fraction: f64, seed: u64) -> Vec<bool> {
    let n = ids.len();
    let n_test = ((fraction.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n);
    let mut keyed: Vec<([u8; 32], usize)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(id.as_ref().as_bytes());
            (h.finalize().into(), i)
        })
        .collect();
    keyed.sort();
    let mut mask = vec![false; n];
    for (_, i) in keyed.into_iter().take(n_test) {
        mask[i] = true;
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFeatures {
    pub position: Position,
    pub stream: Stream,
    pub layers: Vec<u16>,
}

/// `task.json`: file locations for one task, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub name: String,
    pub reports: PathBuf,
    pub correctness: PathBuf,
    pub archive: PathBuf,
    pub features: TaskFeatures,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations: Option<PathBuf>,
}

impl TaskManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| EvalError::BadTask {
            task: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

fn baseline_columns(reports: &[&UncertaintyReport]) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    let mut column = |name: &str, f: &dyn Fn(&UncertaintyReport) -> Option<f64>| {
        let v: Option<Vec<f64>> = reports.iter().map(|r| f(r)).collect();
        if let Some(v) = v {
            out.insert(name.to_owned(), v);
        }
    };
    column("se_mc", &|r| r.semantic_entropy_mc);
    column("se_discrete", &|r| Some(r.semantic_entropy_discrete));
    column("naive_entropy", &|r| r.naive_entropy);
    column("neg_ll", &|r| r.neg_log_likelihood);
    column("p_true", &|r| r.p_true.map(|p| 1.0 - p));
    out
}

/// Loads a task from its `task.json` (or the directory holding one).
pub fn load_task(path: impl AsRef<Path>, se_source: SeSource, test_fraction: f64, split_seed: u64) -> Result<TaskData> {
    load_task_with(path, None, se_source, test_fraction, split_seed)
}

/// As [`load_task`], reading `features` from the archive instead of the
/// ones named in `task.json`.
pub fn load_task_with(
    path: impl AsRef<Path>,
    features: Option<&TaskFeatures>,
    se_source: SeSource,
    test_fraction: f64,
    split_seed: u64,
) -> Result<TaskData> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path.push("task.json");
    }
    let mut manifest = TaskManifest::read(&path)?;
    if let Some(f) = features {
        manifest.features = f.clone();
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |message: String| EvalError::BadTask {
        task: manifest.name.clone(),
        message,
    };

    let reports: Vec<UncertaintyReport> = read_jsonl(base.join(&manifest.reports))?;
    let labels: Vec<CorrectnessLabel> = read_jsonl(base.join(&manifest.correctness))?;
    let correct_by_id: HashMap<&str, bool> = labels.iter().map(|l| (l.id.as_str(), l.correct)).collect();

    let filter = ArchiveFilter {
        position: Some(manifest.features.position),
        stream: Some(manifest.features.stream),
        layers: Some(manifest.features.layers.iter().copied().collect()),
    };
    let (archive, records) = read_hidden_archive(base.join(&manifest.archive), &filter)?;
    let spec = FeatureSpec::new(
        manifest.features.position,
        manifest.features.stream,
        manifest.features.layers.clone(),
        archive.hidden_dim,
    )?;
    spec.validate(Some(archive.n_layers))?;
    let index = FeatureIndex::new(&records, &spec);

    let mut ids = Vec::with_capacity(reports.len());
    let mut se = Vec::with_capacity(reports.len());
    let mut correct = Vec::with_capacity(reports.len());
    let mut kept = Vec::with_capacity(reports.len());
    let mut features = Vec::with_capacity(reports.len() * spec.concat_dim());
    for r in &reports {
        let c = *correct_by_id
            .get(r.id.as_str())
            .ok_or_else(|| bad(format!("no correctness label for {:?}", r.id)))?;
        let s = match se_source {
            SeSource::Discrete => r.semantic_entropy_discrete,
            SeSource::Mc => r
                .semantic_entropy_mc
                .ok_or_else(|| bad(format!("no MC semantic entropy for {:?}", r.id)))?,
        };
        index.row_into(&r.id, &mut features)?;
        ids.push(r.id.clone());
        se.push(s);
        correct.push(c);
        kept.push(r);
    }
    let test = test_split(&ids, test_fraction, split_seed);
    TaskData::new(
        manifest.name.clone(),
        ids,
        features,
        spec,
        se,
        correct,
        baseline_columns(&kept),
        test,
    )
}
