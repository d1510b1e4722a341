//! Run configuration: one JSON document describing a whole run.
//!
//! Every section except `env` and `pair` may be omitted; missing fields take
//! their documented defaults and unknown keys are rejected.
//!
//! ```json
//! {
//!   "env": { "synthetic": { "rows": 8, "cols": 16 } },
//!   "pair": { "label_1": "cat", "label_2": "owl" },
//!   "output_dir": "runs/cat-owl"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{validate_labels, validate_template, DEFAULT_PROMPT_TEMPLATE};
use crate::env::{BridgeConfig, SyntheticConfig, BRIDGE_URL_ENV};
use crate::error::{Error, Result};
use crate::policy::{StateEncoding, SummaryMode, DEFAULT_HIDDEN};
use crate::reward::SimilarityMode;
use crate::rollout::EpisodeConfig;
use crate::selection::SelectionConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    Synthetic(SyntheticConfig),
    Bridge(BridgeConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub label_1: String,
    pub label_2: String,
    #[serde(default = "default_template")]
    pub prompt_template: String,
}

fn default_template() -> String {
    DEFAULT_PROMPT_TEMPLATE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExemplarConfig {
    /// Generation seeds of the reference images for each concept.
    pub seeds: Vec<u64>,
    pub similarity: SimilarityMode,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3],
            similarity: SimilarityMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub summary: SummaryMode,
    pub condition_on_sources: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let encoding = StateEncoding::default();
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            summary: encoding.mode,
            condition_on_sources: encoding.condition_on_sources,
        }
    }
}

impl PolicyConfig {
    pub fn encoding(&self) -> StateEncoding {
        StateEncoding {
            mode: self.summary,
            condition_on_sources: self.condition_on_sources,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub n: usize,
    /// Use the distribution mean instead of sampling.
    pub deterministic: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n: 100,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Also report the mean of per-pair rows.
    pub per_pair_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub pair: PairConfig,
    #[serde(default)]
    pub exemplars: ExemplarConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl RunConfig {
    /// Parses and validates without consulting the environment.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.env {
            EnvSpec::Synthetic(s) => {
                for (key, v) in [
                    ("env.synthetic.rows", s.rows),
                    ("env.synthetic.cols", s.cols),
                    ("env.synthetic.feature_dim", s.feature_dim),
                ] {
                    if v == 0 {
                        return Err(Error::config(key, "must be >= 1"));
                    }
                }
                if !(s.noise_sigma >= 0.0) || !s.noise_sigma.is_finite() {
                    return Err(Error::config("env.synthetic.noise_sigma", "must be finite and >= 0"));
                }
            }
            EnvSpec::Bridge(b) => {
                if b.url.is_empty() {
                    return Err(Error::config("env.bridge.url", "must not be empty"));
                }
                if b.max_attempts == 0 {
                    return Err(Error::config("env.bridge.max_attempts", "must be >= 1"));
                }
                if !(b.timeout_secs > 0.0) {
                    return Err(Error::config("env.bridge.timeout_secs", "must be > 0"));
                }
            }
        }
        validate_labels(&self.pair.label_1, &self.pair.label_2)
            .map_err(|e| Error::config("pair", e.to_string()))?;
        validate_template(&self.pair.prompt_template)
            .map_err(|e| Error::config("pair.prompt_template", e.to_string()))?;
        if self.exemplars.seeds.is_empty() {
            return Err(Error::config("exemplars.seeds", "at least one seed is required"));
        }
        if self.policy.hidden.contains(&0) {
            return Err(Error::config("policy.hidden", "layer widths must be >= 1"));
        }
        self.episode.validate()?;
        self.train.validate()?;
        self.selection.validate()?;
        if self.sample.n == 0 {
            return Err(Error::config("sample.n", "must be >= 1"));
        }
        Ok(())
    }

    /// Applies `RMIXER_BRIDGE_URL` to a bridge env.
    pub fn apply_env_overrides(&mut self) {
        if let (EnvSpec::Bridge(b), Ok(url)) = (&mut self.env, std::env::var(BRIDGE_URL_ENV)) {
            if !url.is_empty() {
                b.url = url;
            }
        }
    }

    /// SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Reads, parses, applies env overrides and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
    let mut cfg = RunConfig::from_json(&text)?;
    cfg.apply_env_overrides();
    cfg.validate()?;
    Ok(cfg)
}
