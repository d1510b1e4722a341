//! T-step fusion episodes.
//!
//! Per-step seeds are derived from the episode seed so any step can be
//! replayed on its own:
//!
//! - action draw at step `t`: `derive_seed(derive_seed(episode_seed, STEP_ACTION), t)`
//! - `n`-th generation at step `t`:
//!   `derive_seed(derive_seed(derive_seed(sample_seed_base, STEP_BACKEND), episode_seed), t·averaging_n + n)`

use serde::{Deserialize, Serialize};

use crate::embedding::{fuse, initial_state, ActionVector, Embedding};
use crate::env::{Backend, ExemplarSet};
use crate::error::{Error, Result};
use crate::policy::{forward, PolicyParams, SamplingMode, StateEncoding};
use crate::reward::{compute_reward_with, RewardBreakdown, SimilarityMode, DEFAULT_ALPHA};
use crate::rng::{derive_seed, streams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub steps: usize,
    /// Fixed at 1 (undiscounted); other values are rejected.
    pub gamma: f64,
    pub reward_alpha: f64,
    pub sample_seed_base: u64,
    /// Generations averaged per step.
    pub averaging_n: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            gamma: 1.0,
            reward_alpha: DEFAULT_ALPHA,
            sample_seed_base: 0,
            averaging_n: 1,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("episode.steps", "must be >= 1"));
        }
        if self.gamma != 1.0 {
            return Err(Error::config("episode.gamma", "rewards are undiscounted; gamma must be 1"));
        }
        if !(self.reward_alpha >= 0.0) || !self.reward_alpha.is_finite() {
            return Err(Error::config("episode.reward_alpha", "must be finite and >= 0"));
        }
        if self.averaging_n == 0 {
            return Err(Error::config("episode.averaging_n", "must be >= 1"));
        }
        Ok(())
    }
}

/// Seed of the policy draw at step `t`.
pub fn action_seed(episode_seed: u64, t: usize) -> u64 {
    derive_seed(derive_seed(episode_seed, streams::STEP_ACTION), t as u64)
}

/// Seed of the `n`-th generation at step `t`.
pub fn backend_seed(cfg: &EpisodeConfig, episode_seed: u64, t: usize, n: usize) -> u64 {
    let stream = derive_seed(derive_seed(cfg.sample_seed_base, streams::STEP_BACKEND), episode_seed);
    derive_seed(stream, (t * cfg.averaging_n + n) as u64)
}

/// Everything a rollout needs besides the policy.
pub struct FusionEnv<'a, S: Scalar> {
    pub backend: &'a dyn Backend<S>,
    pub exemplars: (ExemplarSet<S>, ExemplarSet<S>),
    pub encoding: StateEncoding,
    pub similarity: SimilarityMode,
    /// Keep fused embeddings inline in step records.
    pub keep_embeddings: bool,
}

impl<'a, S: Scalar> FusionEnv<'a, S> {
    pub fn new(backend: &'a dyn Backend<S>, exemplars: (ExemplarSet<S>, ExemplarSet<S>)) -> Self {
        Self {
            backend,
            exemplars,
            encoding: StateEncoding::default(),
            similarity: SimilarityMode::default(),
            keep_embeddings: false,
        }
    }

    /// Reward of one fused embedding, averaging `s1`/`s2` over `seeds`.
    pub fn score(&self, fused: &Embedding<S>, seeds: &[u64], alpha: S) -> Result<(RewardBreakdown<S>, Option<String>)> {
        let (mut s1, mut s2, mut image_ref) = (S::zero(), S::zero(), None);
        for &seed in seeds {
            let generated = self.backend.generate(fused, seed)?;
            let b = compute_reward_with(
                &generated.features,
                &self.exemplars.0,
                &self.exemplars.1,
                alpha,
                self.similarity,
            )?;
            s1 += b.s1;
            s2 += b.s2;
            image_ref = image_ref.or(generated.image_ref);
        }
        let n = S::from_usize(seeds.len()).unwrap();
        Ok((RewardBreakdown::from_similarities(s1 / n, s2 / n, alpha), image_ref))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct StepRecord<S> {
    pub t: usize,
    pub state_summary: Vec<S>,
    pub action: ActionVector<S>,
    /// Log-density under the rollout-time parameters (π_old).
    pub log_prob_old: S,
    pub reward: RewardBreakdown<S>,
    pub fused_embedding_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_embedding: Option<Embedding<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Trajectory<S> {
    pub episode_seed: u64,
    pub steps: Vec<StepRecord<S>>,
    /// First step with the highest reward.
    pub best_step_index: usize,
}

impl<S: Scalar> Trajectory<S> {
    /// Undiscounted sum of step rewards.
    pub fn total_return(&self) -> S {
        self.steps.iter().map(|s| s.reward.reward).sum()
    }

    pub fn best_reward(&self) -> S {
        self.steps[self.best_step_index].reward.reward
    }

    pub fn best_step(&self) -> &StepRecord<S> {
        &self.steps[self.best_step_index]
    }
}

fn best_index<S: Scalar>(steps: &[StepRecord<S>]) -> usize {
    let mut best = 0;
    for (i, s) in steps.iter().enumerate().skip(1) {
        if s.reward.reward > steps[best].reward.reward {
            best = i;
        }
    }
    best
}

/// Runs one episode: `s0` is the source average, and each step fuses the
/// original pair with the sampled action.
pub fn rollout_episode<S: Scalar>(
    params: &PolicyParams<S>,
    env: &FusionEnv<'_, S>,
    cfg: &EpisodeConfig,
    mode: SamplingMode,
    episode_seed: u64,
) -> Result<Trajectory<S>> {
    cfg.validate()?;
    let pair = env.backend.pair();
    if params.action_dim() != pair.cols() {
        return Err(Error::InvalidInput(format!(
            "policy emits {} columns, pair has {}",
            params.action_dim(),
            pair.cols()
        )));
    }
    let alpha = S::of(cfg.reward_alpha);
    let mut state = initial_state(pair)?;
    let mut steps = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let step = (|| -> Result<(StepRecord<S>, Embedding<S>)> {
            let summary = env.encoding.encode(&state, pair)?;
            let dist = forward(params, &summary)?;
            let (action, log_prob_old) = dist.sample(action_seed(episode_seed, t), mode)?;
            let next = fuse(&action, pair)?;
            let seeds: Vec<u64> = (0..cfg.averaging_n).map(|n| backend_seed(cfg, episode_seed, t, n)).collect();
            let (reward, image_ref) = env.score(&next, &seeds, alpha)?;
            let record = StepRecord {
                t,
                state_summary: summary,
                action,
                log_prob_old,
                reward,
                fused_embedding_ref: next.content_ref(),
                fused_embedding: env.keep_embeddings.then(|| next.clone()),
                image_ref,
            };
            Ok((record, next))
        })()
        .map_err(|source| Error::EpisodeAborted {
            step: t,
            source: Box::new(source),
        })?;
        steps.push(step.0);
        state = step.1;
    }
    Ok(Trajectory {
        episode_seed,
        best_step_index: best_index(&steps),
        steps,
    })
}
