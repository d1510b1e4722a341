use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    EncodeRequest, EncodeResponse, ExemplarsRequest, ExemplarsResponse, FeaturesRequest, FeaturesResponse,
    HealthResponse, ENCODE_PATH, EXEMPLARS_PATH, FEATURES_PATH, HEALTH_PATH,
};
use super::{Backend, FeatureVector, Generated};
use crate::embedding::{fill_template, Concept, ConceptPair, Embedding};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Environment variable that overrides the configured bridge URL.
pub const BRIDGE_URL_ENV: &str = "RMIXER_BRIDGE_URL";

const NORM_WARN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    pub url: String,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000".into(),
            timeout_secs: 120.0,
            max_attempts: 3,
            backoff_ms: 250,
        }
    }
}

/// HTTP client backend. The service is treated as stateless.
pub struct BridgeBackend<S> {
    config: BridgeConfig,
    agent: ureq::Agent,
    pair: ConceptPair<S>,
    feature_dim: usize,
}

enum Attempt<T> {
    Done(T),
    Retry { status: Option<u16>, message: String },
}

impl<S: Scalar> BridgeBackend<S> {
    /// Checks `/health`, then encodes both concept prompts.
    pub fn connect(config: BridgeConfig, label_1: &str, label_2: &str, prompt_template: &str) -> Result<Self> {
        if config.max_attempts == 0 {
            return Err(Error::InvalidInput("bridge max_attempts must be >= 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = Self {
            config,
            agent,
            // placeholder replaced below once both prompts are encoded
            pair: ConceptPair::new(
                "first",
                "second",
                prompt_template,
                Embedding::zeros(1, 1)?,
                Embedding::zeros(1, 1)?,
            )?,
            feature_dim: 0,
        };
        let health = backend.health()?;
        if health.status != "ok" {
            return Err(backend.unavailable(None, format!("health status is {:?}", health.status)));
        }
        let e1 = backend.encode(&fill_template(prompt_template, label_1))?;
        let e2 = backend.encode(&fill_template(prompt_template, label_2))?;
        for e in [&e1, &e2] {
            if [e.rows(), e.cols()] != health.embedding_shape {
                return Err(backend.unavailable(
                    Some(200),
                    format!(
                        "encoded shape {:?} differs from advertised {:?}",
                        e.shape(),
                        health.embedding_shape
                    ),
                ));
            }
        }
        backend.pair = ConceptPair::new(label_1, label_2, prompt_template, e1, e2)?;
        backend.feature_dim = health.feature_dim;
        Ok(backend)
    }

    pub fn url(&self) -> &str {
        &self.config.url
    }

    fn unavailable(&self, status: Option<u16>, message: impl Into<String>) -> Error {
        Error::BackendUnavailable {
            url: self.config.url.clone(),
            status,
            message: message.into(),
        }
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.config.url.trim_end_matches('/'), path)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<Attempt<T>>) -> Result<T> {
        let mut last = (None, String::from("no attempt made"));
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match call()? {
                Attempt::Done(value) => return Ok(value),
                Attempt::Retry { status, message } => {
                    debug!("bridge attempt {} failed: {message}", attempt + 1);
                    last = (status, message);
                }
            }
        }
        Err(self.unavailable(
            last.0,
            format!("{} after {} attempts", last.1, self.config.max_attempts),
        ))
    }

    fn finish<T: DeserializeOwned>(
        &self,
        result: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<Attempt<T>> {
        match result {
            Err(e) => Ok(Attempt::Retry {
                status: None,
                message: e.to_string(),
            }),
            Ok(mut response) => {
                let status = response.status().as_u16();
                if (200..300).contains(&status) {
                    response
                        .body_mut()
                        .read_json::<T>()
                        .map(Attempt::Done)
                        .map_err(|e| self.unavailable(Some(status), format!("invalid response body: {e}")))
                } else if status >= 500 {
                    Ok(Attempt::Retry {
                        status: Some(status),
                        message: format!("server error {status}"),
                    })
                } else {
                    let body = response.body_mut().read_to_string().unwrap_or_default();
                    Err(self.unavailable(Some(status), format!("request rejected: {body}")))
                }
            }
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = self.endpoint(path);
        self.with_retries(|| self.finish(self.agent.post(&url).send_json(body)))
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let url = self.endpoint(HEALTH_PATH);
        self.with_retries(|| self.finish(self.agent.get(&url).call()))
    }

    pub fn encode(&self, prompt: &str) -> Result<Embedding<S>> {
        let resp: EncodeResponse = self.post(
            ENCODE_PATH,
            &EncodeRequest {
                prompt: prompt.to_string(),
            },
        )?;
        resp.embedding.cast()
    }

    fn checked_features(&self, values: Vec<f64>) -> Result<FeatureVector<S>> {
        if values.len() != self.feature_dim {
            return Err(self.unavailable(
                Some(200),
                format!("feature length {} differs from feature_dim {}", values.len(), self.feature_dim),
            ));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(self.unavailable(Some(200), "feature vector is not finite or zero"));
        }
        if (norm - 1.0).abs() > NORM_WARN_TOLERANCE {
            warn!("bridge returned feature vector with norm {norm}; renormalising");
        }
        let values: Vec<S> = values.into_iter().map(S::of).collect();
        match FeatureVector::from_unit(values.clone()) {
            Ok(unit) => Ok(unit),
            Err(_) => FeatureVector::normalize(values),
        }
    }
}

impl<S: Scalar> Backend<S> for BridgeBackend<S> {
    fn pair(&self) -> &ConceptPair<S> {
        &self.pair
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn generate(&self, embedding: &Embedding<S>, sample_seed: u64) -> Result<Generated<S>> {
        if embedding.shape() != self.pair.shape() {
            return Err(Error::InvalidInput(format!(
                "embedding shape {:?} does not match bridge shape {:?}",
                embedding.shape(),
                self.pair.shape()
            )));
        }
        let resp: FeaturesResponse = self.post(
            FEATURES_PATH,
            &FeaturesRequest {
                embedding: embedding.cast()?,
                seed: sample_seed,
            },
        )?;
        Ok(Generated {
            features: self.checked_features(resp.features)?,
            image_ref: Some(resp.image_ref),
        })
    }

    fn exemplar_features(&self, which: Concept, seeds: &[u64]) -> Result<Vec<FeatureVector<S>>> {
        let resp: ExemplarsResponse = self.post(
            EXEMPLARS_PATH,
            &ExemplarsRequest {
                label: self.pair.label(which).to_string(),
                prompt_template: self.pair.prompt_template().to_string(),
                seeds: seeds.to_vec(),
            },
        )?;
        if resp.features.len() != seeds.len() {
            return Err(self.unavailable(
                Some(200),
                format!("got {} exemplar features for {} seeds", resp.features.len(), seeds.len()),
            ));
        }
        resp.features.into_iter().map(|f| self.checked_features(f)).collect()
    }
}
