use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ProbeError, Result};
use crate::dataset_store::{HiddenStateRecord, Position, Stream};

/// Which hidden states make up a probe's input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub position: Position,
    pub stream: Stream,
    pub layers: Vec<u16>,
    pub hidden_dim: usize,
}

impl FeatureSpec {
    pub fn new(position: Position, stream: Stream, layers: Vec<u16>, hidden_dim: usize) -> Result<Self> {
        let spec = Self {
            position,
            stream,
            layers,
            hidden_dim,
        };
        spec.validate(None)?;
        Ok(spec)
    }

    /// Length of a concatenated feature row.
    pub fn concat_dim(&self) -> usize {
        self.layers.len() * self.hidden_dim
    }

    pub fn validate(&self, n_layers: Option<usize>) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ProbeError::InvalidSpec("no layers".into()));
        }
        if self.hidden_dim == 0 {
            return Err(ProbeError::InvalidSpec("hidden_dim is 0".into()));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ProbeError::InvalidSpec(format!(
                "layers {:?} are not strictly increasing",
                self.layers
            )));
        }
        if let Some(n) = n_layers {
            if let Some(&l) = self.layers.iter().find(|&&l| usize::from(l) >= n) {
                return Err(ProbeError::InvalidSpec(format!("layer {l} >= n_layers {n}")));
            }
        }
        Ok(())
    }
}

/// Lookup from (id, layer) to a stored vector, for one position and stream.
pub struct FeatureIndex<'a> {
    spec: &'a FeatureSpec,
    vectors: HashMap<(&'a str, u16), &'a [f32]>,
}

impl<'a> FeatureIndex<'a> {
    pub fn new(records: &'a [HiddenStateRecord], spec: &'a FeatureSpec) -> Self {
        let vectors = records
            .iter()
            .filter(|r| r.position == spec.position && r.stream == spec.stream)
            .map(|r| ((r.id.as_str(), r.layer), r.vector.as_slice()))
            .collect();
        Self { spec, vectors }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.spec.layers.iter().all(|&l| self.vectors.contains_key(&(id, l)))
    }

    /// Concatenation of the selected layers for `id`, appended to `out`.
    pub fn row_into(&self, id: &str, out: &mut Vec<f64>) -> Result<()> {
        for &layer in &self.spec.layers {
            let v = self.vectors.get(&(id, layer)).ok_or_else(|| ProbeError::MissingRecord {
                id: id.to_owned(),
                layer,
            })?;
            if v.len() != self.spec.hidden_dim {
                return Err(ProbeError::DimMismatch {
                    expected: self.spec.hidden_dim,
                    got: v.len(),
                });
            }
            out.extend(v.iter().map(|&x| f64::from(x)));
        }
        Ok(())
    }

    pub fn row(&self, id: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.spec.concat_dim());
        self.row_into(id, &mut out)?;
        Ok(out)
    }

    pub fn matrix<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ids.len() * self.spec.concat_dim());
        for id in ids {
            self.row_into(id.as_ref(), &mut out)?;
        }
        Ok(out)
    }
}

/// Row-major feature matrix for `ids`, one concatenated row per id.
pub fn assemble_features<S: AsRef<str>>(
    records: &[HiddenStateRecord],
    spec: &FeatureSpec,
    ids: &[S],
) -> Result<Vec<f64>> {
    spec.validate(None)?;
    FeatureIndex::new(records, spec).matrix(ids)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// Row-major, `n × dim`.
    pub features: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
}

impl TrainingSet {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<u8>, ids: Vec<String>) -> Result<Self> {
        let n = labels.len();
        let bad = |m: String| Err(ProbeError::InvalidTrainingSet(m));
        if dim == 0 {
            return bad("zero feature dimension".into());
        }
        if ids.len() != n || features.len() != n * dim {
            return bad(format!(
                "{} labels, {} ids, {} feature values for dim {dim}",
                n,
                ids.len(),
                features.len()
            ));
        }
        if n < 2 {
            return bad(format!("{n} rows"));
        }
        if labels.iter().any(|&l| l > 1) {
            return bad("labels must be 0 or 1".into());
        }
        if labels.iter().all(|&l| l == labels[0]) {
            return Err(ProbeError::SingleClassTraining);
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(ProbeError::NonFiniteFeature {
                row: i / dim,
                col: i % dim,
            });
        }
        Ok(Self {
            features,
            n,
            dim,
            labels,
            ids,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}
