//! Learned column-wise fusion of two text-conditioning embeddings.
//!
//! A stochastic policy emits per-column mixing coefficients, a generation
//! backend turns the fused embedding into image features, and a balance-aware
//! reward scores how well both concepts survive. Training uses a critic-free
//! clipped surrogate; a two-stage filter picks the final samples.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix it to `f64`, which the CLI uses.

pub mod config;
pub mod embedding;
pub mod env;
pub mod error;
pub mod pipeline;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod rng;
pub mod rollout;
pub mod scalar;
pub mod selection;
pub mod train;

pub use config::{load_config, RunConfig};
pub use embedding::{fuse, initial_state, ActionVector, Concept, ConceptPair, Embedding};
pub use env::{Backend, ExemplarSet, FeatureVector};
pub use error::{Error, Result};
pub use policy::{forward, grad_log_prob, log_prob, sample_action, ActionDistribution, PolicyParams, SamplingMode};
pub use ppo::{ppo_loss, BaselineMode};
pub use reward::{compute_metrics, compute_reward, MetricsReport, RewardBreakdown};
pub use rollout::{rollout_episode, EpisodeConfig, FusionEnv, StepRecord, Trajectory};
pub use scalar::Scalar;
pub use selection::{filter_candidates, rank_top_k, select, CandidateRecord, SelectionConfig};
pub use train::{train, AblationMode, RunArtifacts, TrainConfig};

pub type Embedding64 = Embedding<f64>;
pub type ConceptPair64 = ConceptPair<f64>;
pub type ActionVector64 = ActionVector<f64>;
pub type PolicyParams64 = PolicyParams<f64>;
pub type RewardBreakdown64 = RewardBreakdown<f64>;
pub type CandidateRecord64 = CandidateRecord<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type SyntheticEnv64 = env::SyntheticEnv<f64>;
pub type BridgeBackend64 = env::BridgeBackend<f64>;

pub type Embedding32 = Embedding<f32>;
pub type PolicyParams32 = PolicyParams<f32>;
