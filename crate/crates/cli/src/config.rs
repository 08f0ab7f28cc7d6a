use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use semprobe::evaluation::{SeSource, SplitMethod, TaskFeatures};
use semprobe::gateway::GatewayConfig;
use semprobe::probe::FitOptions;
use semprobe::synthetic::SyntheticTaskConfig;
use semprobe::DecodeConfig;

/// Run configuration from `--config`. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub gateway: GatewayConfig,
    pub decode: DecodeConfig,
    pub synthetic: SyntheticTaskConfig,
    /// Features recorded in the `task.json` written by `synth`.
    pub features: Option<TaskFeatures>,
    pub probe: ProbeSettings,
    pub eval: EvalSettings,
    pub entailment: EntailmentSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub c: f64,
    pub standardize: bool,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        let f = FitOptions::default();
        Self {
            c: f.c,
            standardize: f.standardize,
            max_iter: f.max_iter,
            tol: f.tol,
            seed: f.seed,
        }
    }
}

impl ProbeSettings {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            c: self.c,
            standardize: self.standardize,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub test_fraction: f64,
    pub split_seed: u64,
    pub se_source: SeSource,
    pub split: SplitMethod,
    pub filter_quantiles: Option<(f64, f64)>,
    pub f1_threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            split_seed: 0,
            se_source: SeSource::Discrete,
            split: SplitMethod::Best,
            filter_quantiles: None,
            f1_threshold: semprobe::evaluation::DEFAULT_F1_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntailmentSettings {
    pub nli_url: Option<String>,
    pub nli_timeout_secs: f64,
    /// Journal file for the entailment cache.
    pub cache: Option<PathBuf>,
}

impl Default for EntailmentSettings {
    fn default() -> Self {
        Self {
            nli_url: None,
            nli_timeout_secs: 30.0,
            cache: None,
        }
    }
}

impl Config {
    /// Reads TOML or JSON, chosen by extension (TOML otherwise).
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        };
        if !(cfg.eval.test_fraction > 0.0 && cfg.eval.test_fraction < 1.0) {
            bail!("eval.test_fraction must be in (0, 1)");
        }
        Ok(cfg)
    }

    pub fn gateway(&self) -> GatewayConfig {
        self.gateway.clone().with_env_key()
    }
}
