use serde::{Deserialize, Serialize};

use super::{ExemplarSet, SyntheticEnv};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::reward::{compute_reward, RewardBreakdown};
use crate::scalar::Scalar;
use crate::Backend;

/// Best uniform mixing weight found by [`grid_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub best_lambda: f64,
    pub best_reward: f64,
    pub resolution: usize,
}

/// `λ·e1 + (1-λ)·e2` for `λ ∈ [0, 1]`, endpoints included.
fn blend<S: Scalar>(env: &SyntheticEnv<S>, lambda: S) -> Result<Embedding<S>> {
    let (e1, e2) = (env.pair().first(), env.pair().second());
    let data = e1
        .as_slice()
        .iter()
        .zip(e2.as_slice())
        .map(|(&x, &y)| lambda * x + (S::one() - lambda) * y)
        .collect();
    Embedding::new(e1.rows(), e1.cols(), data)
}

/// Noise-free reward of the uniform action `λ·1`.
pub fn uniform_reward<S: Scalar>(
    env: &SyntheticEnv<S>,
    exemplars: (&ExemplarSet<S>, &ExemplarSet<S>),
    alpha: S,
    lambda: S,
) -> Result<RewardBreakdown<S>> {
    let features = env.noiseless_features(&blend(env, lambda)?)?;
    compute_reward(&features, exemplars.0, exemplars.1, alpha)
}

/// Brute-force sweep of uniform actions `λ ∈ {0, 1/(n-1), …, 1}`.
///
/// Ties go to the smaller `λ`. Since uniform vectors are a subset of the
/// action space, the result lower-bounds the reachable reward.
pub fn grid_oracle<S: Scalar>(
    env: &SyntheticEnv<S>,
    exemplars: (&ExemplarSet<S>, &ExemplarSet<S>),
    alpha: S,
    resolution: usize,
) -> Result<GridOptimum> {
    if resolution < 2 {
        return Err(Error::InvalidInput(format!("grid resolution must be >= 2, got {resolution}")));
    }
    let mut best: Option<(f64, S)> = None;
    for k in 0..resolution {
        let lambda = k as f64 / (resolution - 1) as f64;
        let reward = uniform_reward(env, exemplars, alpha, S::of(lambda))?.reward;
        if best.is_none_or(|(_, r)| reward > r) {
            best = Some((lambda, reward));
        }
    }
    let (best_lambda, best_reward) = best.unwrap();
    Ok(GridOptimum {
        best_lambda,
        best_reward: best_reward.as_f64(),
        resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{ConceptPair, DEFAULT_PROMPT_TEMPLATE};
    use crate::env::{exemplar_pair, SyntheticConfig};

    /// e2 is e1 with its two columns swapped and M commutes with the swap
    /// (up to a permutation of feature rows).
    fn symmetric_env() -> SyntheticEnv<f64> {
        let e1 = Embedding::new(1, 2, vec![1.0, 0.2]).unwrap();
        let e2 = Embedding::new(1, 2, vec![0.2, 1.0]).unwrap();
        let pair = ConceptPair::new("a", "b", DEFAULT_PROMPT_TEMPLATE, e1, e2).unwrap();
        let rows = [(0.9, -0.3), (0.1, 0.7), (-0.4, 0.5)];
        let mut map = Vec::new();
        for (p, q) in rows {
            map.extend([p, q, q, p]);
        }
        SyntheticEnv::from_parts(pair, map, 6, 0.0, 0).unwrap()
    }

    #[test]
    fn symmetric_env_peaks_at_midpoint() {
        let env = symmetric_env();
        let (ex1, ex2) = exemplar_pair(&env, &[0]).unwrap();
        let opt = grid_oracle(&env, (&ex1, &ex2), 5.0, 101).unwrap();
        assert_eq!(opt.best_lambda, 0.5);
    }

    #[test]
    fn resolution_two_picks_better_endpoint() {
        let env = SyntheticEnv::<f64>::generate(&SyntheticConfig::default(), "a", "b", DEFAULT_PROMPT_TEMPLATE)
            .unwrap()
            .with_noise(0.0);
        let (ex1, ex2) = exemplar_pair(&env, &[0]).unwrap();
        let opt = grid_oracle(&env, (&ex1, &ex2), 5.0, 2).unwrap();
        let r0 = uniform_reward(&env, (&ex1, &ex2), 5.0, 0.0).unwrap().reward;
        let r1 = uniform_reward(&env, (&ex1, &ex2), 5.0, 1.0).unwrap().reward;
        assert!(opt.best_lambda == 0.0 || opt.best_lambda == 1.0);
        assert_eq!(opt.best_reward, r0.max(r1));
        assert!(grid_oracle(&env, (&ex1, &ex2), 5.0, 1).is_err());
    }

    #[test]
    fn finer_grid_dominates() {
        let cfg = SyntheticConfig {
            noise_sigma: 0.0,
            ..SyntheticConfig::default()
        };
        let env = SyntheticEnv::<f64>::generate(&cfg, "a", "b", DEFAULT_PROMPT_TEMPLATE).unwrap();
        let (ex1, ex2) = exemplar_pair(&env, &[0, 1, 2, 3]).unwrap();
        let coarse = grid_oracle(&env, (&ex1, &ex2), 5.0, 101).unwrap();
        let fine = grid_oracle(&env, (&ex1, &ex2), 5.0, 1001).unwrap();
        assert!(coarse.best_reward <= fine.best_reward + 1e-6);
    }
}
