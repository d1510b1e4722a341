//! Outer loop: collect a batch of episodes, optimise the surrogate for a few
//! epochs, keep the best checkpoint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::policy::{ParamGrad, PolicyParams, SamplingMode};
use crate::ppo::{ppo_loss, reinforce_loss, BaselineMode, SurrogateLoss, DEFAULT_CLIP_XI};
use crate::rng::{derive_seed, streams, SeededRng};
use crate::rollout::{rollout_episode, EpisodeConfig, FusionEnv, StepRecord, Trajectory};
use crate::scalar::Scalar;

const STALL_LIMIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    #[default]
    Full,
    /// Actions are the distribution mean; no sampling.
    DeterministicAction,
    /// No ratio or clipping: one score-function ascent step per batch.
    RewardOnly,
}

impl AblationMode {
    pub fn sampling(self) -> SamplingMode {
        match self {
            AblationMode::DeterministicAction => SamplingMode::Deterministic,
            _ => SamplingMode::Stochastic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub episodes_per_batch: usize,
    pub epochs_per_batch: usize,
    /// Minibatch size in steps.
    pub minibatch_size: usize,
    pub clip_xi: f64,
    pub learning_rate: f64,
    pub baseline_mode: BaselineMode,
    pub ablation_mode: AblationMode,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip_norm: Option<f64>,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            episodes_per_batch: 16,
            epochs_per_batch: 4,
            minibatch_size: 64,
            clip_xi: DEFAULT_CLIP_XI,
            learning_rate: 3e-4,
            baseline_mode: BaselineMode::None,
            ablation_mode: AblationMode::Full,
            grad_clip_norm: Some(10.0),
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_xi > 0.0 && self.clip_xi < 1.0) {
            return Err(Error::config("train.clip_xi", "must lie in (0, 1)"));
        }
        for (key, v) in [
            ("train.episodes_per_batch", self.episodes_per_batch),
            ("train.epochs_per_batch", self.epochs_per_batch),
            ("train.minibatch_size", self.minibatch_size),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("train.learning_rate", "must be > 0"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("train.grad_clip_norm", "must be > 0 when set"));
            }
        }
        Ok(())
    }

    /// Seed of episode `index` within batch `iteration`.
    pub fn episode_seed(&self, iteration: usize, index: usize) -> u64 {
        derive_seed(
            derive_seed(self.master_seed, streams::EPISODE),
            (iteration * self.episodes_per_batch + index) as u64,
        )
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    step: i32,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(n_params: usize, lr: S) -> Self {
        Self {
            lr,
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            step: 0,
            m: vec![S::zero(); n_params],
            v: vec![S::zero(); n_params],
        }
    }

    /// Descends along `grad`.
    pub fn apply(&mut self, params: &mut PolicyParams<S>, grad: &ParamGrad<S>) {
        self.step += 1;
        let c1 = S::one() - self.beta1.powi(self.step);
        let c2 = S::one() - self.beta2.powi(self.step);
        for (((p, &g), m), v) in params.values_mut().zip(grad.values()).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (S::one() - self.beta1) * g;
            *v = self.beta2 * *v + (S::one() - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    /// Highest step reward in this iteration's batch.
    pub batch_max_reward: f64,
    /// Highest step reward seen so far.
    pub best_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts<S> {
    /// Parameters that produced the best step reward.
    pub best_params: PolicyParams<S>,
    pub best_iteration: usize,
    pub best_reward: f64,
    pub reward_curve: Vec<CurvePoint>,
    pub final_params: PolicyParams<S>,
    pub degenerate_batches: usize,
}

/// Training error plus whatever was produced before it.
#[derive(Error)]
#[error("{error}")]
pub struct TrainFailure<S> {
    #[source]
    pub error: Error,
    pub partial: Option<Box<RunArtifacts<S>>>,
}

impl<S> std::fmt::Debug for TrainFailure<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainFailure")
            .field("error", &self.error)
            .field("has_partial", &self.partial.is_some())
            .finish()
    }
}

struct Progress<S> {
    best: Option<(PolicyParams<S>, usize, f64)>,
    curve: Vec<CurvePoint>,
    degenerate: usize,
}

impl<S: Scalar> Progress<S> {
    fn artifacts(&self, final_params: &PolicyParams<S>) -> Option<RunArtifacts<S>> {
        let (best_params, best_iteration, best_reward) = self.best.clone()?;
        Some(RunArtifacts {
            best_params,
            best_iteration,
            best_reward,
            reward_curve: self.curve.clone(),
            final_params: final_params.clone(),
            degenerate_batches: self.degenerate,
        })
    }
}

/// Clips `grad` to `max_norm`, returning the pre-clip norm.
pub fn clip_grad_norm<S: Scalar>(grad: &mut ParamGrad<S>, max_norm: Option<f64>) -> S {
    let norm = grad.l2_norm();
    if let Some(limit) = max_norm.map(S::of) {
        if norm > limit {
            grad.scale(limit / norm);
        }
    }
    norm
}

/// Trains from `initial`. `on_batch` sees every collected batch (for logging).
pub fn train<S: Scalar>(
    cfg: &TrainConfig,
    initial: PolicyParams<S>,
    env: &FusionEnv<'_, S>,
    episode_cfg: &EpisodeConfig,
    on_batch: &mut dyn FnMut(usize, &[Trajectory<S>]) -> Result<()>,
) -> std::result::Result<RunArtifacts<S>, TrainFailure<S>> {
    let fail = |error: Error, progress: &Progress<S>, params: &PolicyParams<S>| TrainFailure {
        error,
        partial: progress.artifacts(params).map(Box::new),
    };
    let mut params = initial;
    let mut progress = Progress {
        best: None,
        curve: Vec::new(),
        degenerate: 0,
    };
    if let Err(e) = cfg.validate().and_then(|_| episode_cfg.validate()) {
        return Err(fail(e, &progress, &params));
    }
    let mut adam = Adam::new(params.num_params(), S::of(cfg.learning_rate));
    let mode = cfg.ablation_mode.sampling();
    let mut consecutive_degenerate = 0;

    for iteration in 0..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.episodes_per_batch);
        for b in 0..cfg.episodes_per_batch {
            match rollout_episode(&params, env, episode_cfg, mode, cfg.episode_seed(iteration, b)) {
                Ok(traj) => batch.push(traj),
                Err(e) => return Err(fail(e, &progress, &params)),
            }
        }
        if let Err(e) = on_batch(iteration, &batch) {
            return Err(fail(e, &progress, &params));
        }

        let rewards: Vec<f64> = batch
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.reward.reward.as_f64()))
            .collect();
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let batch_max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if progress.best.as_ref().is_none_or(|b| batch_max > b.2) {
            progress.best = Some((params.clone(), iteration, batch_max));
        }
        let best_reward = progress.best.as_ref().unwrap().2;
        progress.curve.push(CurvePoint {
            iteration,
            mean_reward,
            batch_max_reward: batch_max,
            best_reward,
        });
        log::debug!("iteration {iteration}: mean {mean_reward:.5} max {batch_max:.5} best {best_reward:.5}");

        if iteration == cfg.iterations {
            break;
        }

        let mut steps: Vec<StepRecord<S>> = batch.into_iter().flat_map(|t| t.steps).collect();
        let degenerate = match optimise(cfg, &mut params, &mut adam, &mut steps, iteration) {
            Ok(d) => d,
            Err(e) => return Err(fail(e, &progress, &params)),
        };
        if degenerate {
            progress.degenerate += 1;
            consecutive_degenerate += 1;
            if consecutive_degenerate >= STALL_LIMIT {
                let error = Error::TrainingStalled {
                    iteration,
                    consecutive: consecutive_degenerate,
                };
                return Err(fail(error, &progress, &params));
            }
        } else {
            consecutive_degenerate = 0;
        }
    }
    Ok(progress.artifacts(&params).expect("at least one batch was collected"))
}

/// One optimisation phase over a collected batch. Returns whether any
/// minibatch was degenerate.
fn optimise<S: Scalar>(
    cfg: &TrainConfig,
    params: &mut PolicyParams<S>,
    adam: &mut Adam<S>,
    steps: &mut [StepRecord<S>],
    iteration: usize,
) -> Result<bool> {
    let mut update = |loss: SurrogateLoss<S>, params: &mut PolicyParams<S>| {
        let mut grad = loss.grad;
        clip_grad_norm(&mut grad, cfg.grad_clip_norm);
        if grad.is_finite() {
            adam.apply(params, &grad);
        }
    };
    if cfg.ablation_mode == AblationMode::RewardOnly {
        let loss = reinforce_loss(params, steps, cfg.baseline_mode)?;
        update(loss, params);
        return Ok(false);
    }
    let xi = S::of(cfg.clip_xi);
    let mut degenerate = false;
    for epoch in 0..cfg.epochs_per_batch {
        let mut rng = SeededRng::new(derive_seed(
            derive_seed(cfg.master_seed, streams::MINIBATCH),
            (iteration * cfg.epochs_per_batch + epoch) as u64,
        ));
        rng.shuffle(steps);
        for chunk in steps.chunks(cfg.minibatch_size) {
            match ppo_loss(params, chunk, xi, cfg.baseline_mode) {
                Ok(loss) => update(loss, params),
                Err(Error::DegenerateBatch { .. }) => degenerate = true,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(degenerate)
}

/// Writes `iteration,mean_reward,best_reward`.
pub fn write_reward_curve(path: &std::path::Path, curve: &[CurvePoint]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        iteration: usize,
        mean_reward: f64,
        best_reward: f64,
    }
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(Row {
            iteration: p.iteration,
            mean_reward: p.mean_reward,
            best_reward: p.best_reward,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = PolicyParams::<f64>::from_parts(vec![1, 2], vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]]).unwrap();
        let mut grad = ParamGrad::zeros_like(&params);
        grad.weights[0] = vec![2.0, -3.0];
        let mut adam = Adam::new(params.num_params(), 0.1);
        adam.apply(&mut params, &grad);
        assert!((params.weights()[0][0] + 0.1).abs() < 1e-6);
        assert!((params.weights()[0][1] - 0.1).abs() < 1e-6);
        assert_eq!(params.biases()[0], vec![0.0, 0.0]);
    }

    #[test]
    fn grad_clip_scales_down() {
        let params = PolicyParams::<f64>::from_parts(vec![1, 2], vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]]).unwrap();
        let mut grad = ParamGrad::zeros_like(&params);
        grad.weights[0] = vec![30.0, 40.0];
        assert_eq!(clip_grad_norm(&mut grad, Some(10.0)), 50.0);
        assert!((grad.l2_norm() - 10.0).abs() < 1e-12);
        let mut g2 = grad.clone();
        clip_grad_norm(&mut g2, None);
        assert_eq!(g2, grad);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            clip_xi: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            minibatch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
