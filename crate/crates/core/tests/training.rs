use rmixer_core::embedding::DEFAULT_PROMPT_TEMPLATE;
use rmixer_core::env::{exemplar_pair, SyntheticConfig, SyntheticEnv};
use rmixer_core::policy::{grad_log_prob, init_policy, SamplingMode};
use rmixer_core::ppo::{ppo_loss, reinforce_loss, BaselineMode};
use rmixer_core::rollout::{rollout_episode, EpisodeConfig, FusionEnv, StepRecord};
use rmixer_core::train::{train, AblationMode, TrainConfig};
use rmixer_core::{Error, PolicyParams};

fn env() -> SyntheticEnv<f64> {
    let cfg = SyntheticConfig {
        rows: 2,
        cols: 4,
        feature_dim: 6,
        noise_sigma: 0.02,
        master_seed: 11,
    };
    SyntheticEnv::generate(&cfg, "cat", "owl", DEFAULT_PROMPT_TEMPLATE).unwrap()
}

fn batch(params: &PolicyParams<f64>, fusion: &FusionEnv<'_, f64>) -> Vec<StepRecord<f64>> {
    let cfg = EpisodeConfig {
        steps: 3,
        ..EpisodeConfig::default()
    };
    (0..4)
        .flat_map(|seed| rollout_episode(params, fusion, &cfg, SamplingMode::Stochastic, seed).unwrap().steps)
        .collect()
}

fn small_train(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        episodes_per_batch: 4,
        epochs_per_batch: 2,
        minibatch_size: 8,
        master_seed: 3,
        ..TrainConfig::default()
    }
}

fn episode() -> EpisodeConfig {
    EpisodeConfig {
        steps: 3,
        ..EpisodeConfig::default()
    }
}

#[test]
fn surrogate_at_rollout_params_is_the_policy_gradient() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0, 1]).unwrap());
    let mut params = init_policy::<f64>(4, &[6], 2).unwrap();
    for (k, v) in params.values_mut().enumerate() {
        *v += 0.05 * ((k % 7) as f64 - 3.0);
    }
    let steps = batch(&params, &fusion);
    let n = steps.len() as f64;
    let mean_reward = steps.iter().map(|s| s.reward.reward).sum::<f64>() / n;

    // vanilla estimator mean(-R ∇log π), assembled independently
    let mut expected = vec![0.0; params.num_params()];
    for s in &steps {
        let g = grad_log_prob(&params, &s.state_summary, &s.action).unwrap().to_flat();
        for (e, gi) in expected.iter_mut().zip(g) {
            *e -= s.reward.reward * gi / n;
        }
    }
    for xi in [0.2, 0.5, 0.9] {
        let loss = ppo_loss(&params, &steps, xi, BaselineMode::None).unwrap();
        assert!((loss.loss + mean_reward).abs() < 1e-12);
        assert_eq!(loss.skipped, 0);
        for (a, b) in loss.grad.to_flat().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
    let reinforce = reinforce_loss(&params, &steps, BaselineMode::None).unwrap();
    for (a, b) in reinforce.grad.to_flat().iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn batch_mean_baseline_centres_the_rewards() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0]).unwrap());
    let params = init_policy::<f64>(4, &[6], 2).unwrap();
    let steps = batch(&params, &fusion);
    let loss = ppo_loss(&params, &steps, 0.2, BaselineMode::BatchMean).unwrap();
    assert!(loss.loss.abs() < 1e-12);
}

#[test]
fn hopeless_ratios_make_a_degenerate_batch() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0]).unwrap());
    let params = init_policy::<f64>(4, &[6], 2).unwrap();
    let mut steps = batch(&params, &fusion);
    for s in &mut steps {
        s.log_prob_old -= 40.0;
    }
    let n = steps.len();
    match ppo_loss(&params, &steps, 0.2, BaselineMode::None) {
        Err(Error::DegenerateBatch { skipped }) => assert_eq!(skipped, n),
        other => panic!("unexpected {other:?}"),
    }
    // one sane step is enough to go on
    steps[0].log_prob_old += 40.0;
    let loss = ppo_loss(&params, &steps, 0.2, BaselineMode::None).unwrap();
    assert_eq!((loss.used, loss.skipped), (1, n - 1));
}

#[test]
fn training_is_reproducible() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0, 1]).unwrap());
    let params = init_policy::<f64>(4, &[8], 4).unwrap();
    let a = train(&small_train(3), params.clone(), &fusion, &episode(), &mut |_, _| Ok(())).unwrap();
    let b = train(&small_train(3), params.clone(), &fusion, &episode(), &mut |_, _| Ok(())).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.reward_curve.len(), 4);
    assert_ne!(a.final_params, params);
}

#[test]
fn zero_iterations_only_evaluates() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0]).unwrap());
    let params = init_policy::<f64>(4, &[8], 4).unwrap();
    let mut batches = 0;
    let out = train(&small_train(0), params.clone(), &fusion, &episode(), &mut |it, b| {
        assert_eq!((it, b.len()), (0, 4));
        batches += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(batches, 1);
    assert_eq!(out.final_params, params);
    assert_eq!(out.best_params, params);
    assert_eq!(out.reward_curve.len(), 1);
}

#[test]
fn best_reward_is_a_running_max() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0]).unwrap());
    let params = init_policy::<f64>(4, &[8], 4).unwrap();
    let out = train(&small_train(6), params, &fusion, &episode(), &mut |_, _| Ok(())).unwrap();
    let mut running = f64::NEG_INFINITY;
    for p in &out.reward_curve {
        running = running.max(p.batch_max_reward);
        assert_eq!(p.best_reward, running);
        assert!(p.mean_reward <= p.batch_max_reward);
    }
    assert_eq!(out.best_reward, running);
}

#[test]
fn ablations_run() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0]).unwrap());
    let params = init_policy::<f64>(4, &[8], 4).unwrap();
    for mode in [AblationMode::DeterministicAction, AblationMode::RewardOnly] {
        let cfg = TrainConfig {
            ablation_mode: mode,
            ..small_train(2)
        };
        let out = train(&cfg, params.clone(), &fusion, &episode(), &mut |_, _| Ok(())).unwrap();
        assert_eq!(out.reward_curve.len(), 3);
        assert_ne!(out.final_params, params, "{mode:?}");
    }
}

#[test]
fn deterministic_ablation_batches_repeat_one_action() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0]).unwrap());
    let params = init_policy::<f64>(4, &[8], 4).unwrap();
    let cfg = TrainConfig {
        ablation_mode: AblationMode::DeterministicAction,
        ..small_train(0)
    };
    train(&cfg, params, &fusion, &episode(), &mut |_, batch| {
        let first = &batch[0].steps[0].action;
        assert!(batch.iter().all(|t| &t.steps[0].action == first));
        Ok(())
    })
    .unwrap();
}

#[test]
fn runaway_updates_stall_with_partial_artifacts() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0]).unwrap());
    let params = init_policy::<f64>(4, &[8], 4).unwrap();
    let cfg = TrainConfig {
        learning_rate: 5.0,
        grad_clip_norm: None,
        epochs_per_batch: 8,
        ..small_train(40)
    };
    let failure = train(&cfg, params, &fusion, &episode(), &mut |_, _| Ok(())).unwrap_err();
    match failure.error {
        Error::TrainingStalled { consecutive, .. } => assert_eq!(consecutive, 3),
        ref other => panic!("unexpected {other:?}"),
    }
    let partial = failure.partial.expect("partial artifacts");
    assert!(!partial.reward_curve.is_empty());
    assert!(partial.degenerate_batches >= 3);
}

#[test]
fn callback_errors_abort_training() {
    let e = env();
    let fusion = FusionEnv::new(&e, exemplar_pair(&e, &[0]).unwrap());
    let params = init_policy::<f64>(4, &[8], 4).unwrap();
    let failure = train(&small_train(3), params, &fusion, &episode(), &mut |it, _| {
        if it == 2 {
            Err(Error::InvalidInput("stop".into()))
        } else {
            Ok(())
        }
    })
    .unwrap_err();
    assert!(matches!(failure.error, Error::InvalidInput(_)));
    assert_eq!(failure.partial.unwrap().reward_curve.len(), 2);
}
