//! Critic-free clipped surrogate.
//!
//! Each step contributes `-min(k·R, clip(k, 1-ξ, 1+ξ)·R)` with
//! `k = π_θ(a|s) / π_old(a|s)` and `R` the raw step reward (optionally
//! minus the batch mean). No value network is involved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ParamGrad, PolicyParams};
use crate::rollout::StepRecord;
use crate::scalar::Scalar;

pub const DEFAULT_CLIP_XI: f64 = 0.2;

/// Steps whose `|log π_θ - log π_old|` exceeds this are skipped.
pub const MAX_LOG_RATIO: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Raw rewards.
    #[default]
    None,
    /// Rewards minus their mean over the batch.
    BatchMean,
}

/// Per-step surrogate term `-min(k·R, clip(k)·R)`.
#[inline]
pub fn clipped_term<S: Scalar>(ratio: S, reward: S, xi: S) -> S {
    let clipped = ratio.max(S::one() - xi).min(S::one() + xi);
    -(ratio * reward).min(clipped * reward)
}

/// Per-step term with no clipping, `-k·R`.
#[inline]
pub fn unclipped_term<S: Scalar>(ratio: S, reward: S) -> S {
    -(ratio * reward)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLoss<S> {
    pub loss: S,
    pub grad: ParamGrad<S>,
    /// Steps that entered the mean.
    pub used: usize,
    /// Steps dropped for a non-finite ratio.
    pub skipped: usize,
}

fn shaped_rewards<S: Scalar>(batch: &[StepRecord<S>], baseline: BaselineMode) -> Vec<S> {
    let rewards: Vec<S> = batch.iter().map(|s| s.reward.reward).collect();
    match baseline {
        BaselineMode::None => rewards,
        BaselineMode::BatchMean => {
            let mean = rewards.iter().copied().sum::<S>() / S::from_usize(rewards.len().max(1)).unwrap();
            rewards.into_iter().map(|r| r - mean).collect()
        }
    }
}

/// Loss and gradient of the clipped surrogate, averaged over the batch.
///
/// Where the clipped branch is the binding minimum the step contributes no
/// gradient; otherwise it contributes `-R·k·∇log π_θ`.
pub fn ppo_loss<S: Scalar>(
    params: &PolicyParams<S>,
    batch: &[StepRecord<S>],
    xi: S,
    baseline: BaselineMode,
) -> Result<SurrogateLoss<S>> {
    if !(xi > S::zero() && xi < S::one()) {
        return Err(Error::InvalidInput(format!("clip ξ must lie in (0, 1), got {xi}")));
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput("PPO batch is empty".into()));
    }
    let rewards = shaped_rewards(batch, baseline);
    let mut grad = ParamGrad::zeros_like(params);
    let mut total = S::zero();
    // (activations, action, scale) of the steps that carry gradient
    let mut pending = Vec::new();
    let mut skipped = 0usize;
    for (step, &reward) in batch.iter().zip(&rewards) {
        let activations = params.activations(&step.state_summary)?;
        let log_prob = params.distribution_from(&activations).log_density(&step.action)?;
        let log_ratio = log_prob - step.log_prob_old;
        if !log_ratio.is_finite() || log_ratio.abs() > S::of(MAX_LOG_RATIO) {
            skipped += 1;
            continue;
        }
        let ratio = log_ratio.exp();
        let clipped = ratio.max(S::one() - xi).min(S::one() + xi);
        let (surrogate, pessimistic) = (ratio * reward, clipped * reward);
        if surrogate <= pessimistic {
            total += -surrogate;
            pending.push((activations, &step.action, -reward * ratio));
        } else {
            total += -pessimistic;
        }
    }
    let used = batch.len() - skipped;
    if used == 0 {
        return Err(Error::DegenerateBatch { skipped });
    }
    let n = S::from_usize(used).unwrap();
    for (activations, action, scale) in pending {
        params.backprop_log_prob(&activations, action, scale / n, &mut grad)?;
    }
    Ok(SurrogateLoss {
        loss: total / n,
        grad,
        used,
        skipped,
    })
}

/// Score-function objective `-mean(R · log π_θ)` used by the reward-only
/// ablation: plain gradient ascent on expected reward, no ratio or clip.
pub fn reinforce_loss<S: Scalar>(
    params: &PolicyParams<S>,
    batch: &[StepRecord<S>],
    baseline: BaselineMode,
) -> Result<SurrogateLoss<S>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch is empty".into()));
    }
    let rewards = shaped_rewards(batch, baseline);
    let n = S::from_usize(batch.len()).unwrap();
    let mut grad = ParamGrad::zeros_like(params);
    let mut total = S::zero();
    for (step, &reward) in batch.iter().zip(&rewards) {
        let activations = params.activations(&step.state_summary)?;
        let log_prob = params.distribution_from(&activations).log_density(&step.action)?;
        total += -reward * log_prob;
        params.backprop_log_prob(&activations, &step.action, -reward / n, &mut grad)?;
    }
    Ok(SurrogateLoss {
        loss: total / n,
        grad,
        used: batch.len(),
        skipped: 0,
    })
}
