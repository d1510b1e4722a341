//! JSON bodies of the bridge protocol.
//!
//! ```text
//! POST /encode     {"prompt"}                         -> {"embedding"}
//! POST /features   {"embedding", "seed"}              -> {"features", "image_ref"}
//! POST /exemplars  {"label", "prompt_template", "seeds"} -> {"features", "image_refs"}
//! GET  /health                                        -> {"status", "feature_dim", "embedding_shape"}
//! ```

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;

pub const HEALTH_PATH: &str = "/health";
pub const ENCODE_PATH: &str = "/encode";
pub const FEATURES_PATH: &str = "/features";
pub const EXEMPLARS_PATH: &str = "/exemplars";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub feature_dim: usize,
    pub embedding_shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub embedding: Embedding<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesRequest {
    pub embedding: Embedding<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturesResponse {
    pub features: Vec<f64>,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarsRequest {
    pub label: String,
    pub prompt_template: String,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarsResponse {
    pub features: Vec<Vec<f64>>,
    pub image_refs: Vec<String>,
}
