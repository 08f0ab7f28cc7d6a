use std::fs;
use std::path::Path;

use serde_json::Value;

use super::{ProbeError, ProbeModel, Result};

pub const PROBE_VERSION: u32 = 1;

/// Writes the probe as pretty JSON. Floats are printed in shortest
/// round-trip form, so loading gives back the same bits.
pub fn save_probe(path: impl AsRef<Path>, model: &ProbeModel) -> Result<()> {
    if model.weights.iter().chain([&model.bias]).any(|w| !w.is_finite()) {
        return Err(ProbeError::SchemaMismatch("non-finite weight".into()));
    }
    let text = serde_json::to_string_pretty(model)
        .map_err(|e| ProbeError::SchemaMismatch(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn parse_probe(text: &str) -> Result<ProbeModel> {
    let value: Value = serde_json::from_str(text).map_err(|e| ProbeError::SchemaMismatch(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| ProbeError::SchemaMismatch("missing version".into()))?;
    if version != u64::from(PROBE_VERSION) {
        return Err(ProbeError::VersionUnsupported(u32::try_from(version).unwrap_or(u32::MAX)));
    }
    let model: ProbeModel =
        serde_json::from_value(value).map_err(|e| ProbeError::SchemaMismatch(e.to_string()))?;
    if model.weights.len() != model.feature_spec.concat_dim() {
        return Err(ProbeError::SchemaMismatch(format!(
            "{} weights for feature dim {}",
            model.weights.len(),
            model.feature_spec.concat_dim()
        )));
    }
    if let Some(s) = &model.standardizer {
        if s.mean.len() != model.weights.len() || s.std.len() != model.weights.len() {
            return Err(ProbeError::SchemaMismatch("standardizer length".into()));
        }
        if s.std.iter().any(|v| !(*v > 0.0)) {
            return Err(ProbeError::SchemaMismatch("non-positive stddev".into()));
        }
    }
    Ok(model)
}

pub fn load_probe(path: impl AsRef<Path>) -> Result<ProbeModel> {
    parse_probe(&fs::read_to_string(path)?)
}
