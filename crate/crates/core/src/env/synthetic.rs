use serde::{Deserialize, Serialize};

use super::{Backend, FeatureVector, Generated};
use crate::embedding::{Concept, ConceptPair, Embedding};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, streams, SeededRng};
use crate::scalar::Scalar;

/// Dimensions and seeds of a synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub cols: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub master_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 16,
            feature_dim: 32,
            noise_sigma: 0.01,
            master_seed: 42,
        }
    }
}

/// Deterministic linear feature map: `normalize(M · vec(e) + σ·η(seed))`.
///
/// From `SeededRng::new(master_seed)` the generator draws, in order, the
/// `d × (h·w)` map `M` (row-major), then `e1`, then `e2`, all i.i.d.
/// standard normal. The noise vector for sample seed `s` comes from
/// `SeededRng::new(derive_seed(derive_seed(master_seed, FEATURE_NOISE), s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnv<S> {
    pair: ConceptPair<S>,
    map_matrix: Vec<S>,
    feature_dim: usize,
    noise_sigma: S,
    master_seed: u64,
}

impl<S: Scalar> SyntheticEnv<S> {
    pub fn generate(
        cfg: &SyntheticConfig,
        label_1: &str,
        label_2: &str,
        prompt_template: &str,
    ) -> Result<Self> {
        if cfg.rows == 0 || cfg.cols == 0 || cfg.feature_dim == 0 {
            return Err(Error::InvalidInput("synthetic dims must be positive".into()));
        }
        let n = cfg.rows * cfg.cols;
        let mut rng = SeededRng::new(cfg.master_seed);
        let to_s = |v: Vec<f64>| v.into_iter().map(S::of).collect::<Vec<S>>();
        let map_matrix = to_s(rng.normals(cfg.feature_dim * n));
        let e1 = Embedding::new(cfg.rows, cfg.cols, to_s(rng.normals(n)))?;
        let e2 = Embedding::new(cfg.rows, cfg.cols, to_s(rng.normals(n)))?;
        let pair = ConceptPair::new(label_1, label_2, prompt_template, e1, e2)?;
        Self::from_parts(pair, map_matrix, cfg.feature_dim, S::of(cfg.noise_sigma), cfg.master_seed)
    }

    pub fn from_parts(
        pair: ConceptPair<S>,
        map_matrix: Vec<S>,
        feature_dim: usize,
        noise_sigma: S,
        master_seed: u64,
    ) -> Result<Self> {
        let (h, w) = pair.shape();
        if map_matrix.len() != feature_dim * h * w {
            return Err(Error::InvalidInput(format!(
                "map matrix needs {} entries, got {}",
                feature_dim * h * w,
                map_matrix.len()
            )));
        }
        if map_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("map matrix is not finite".into()));
        }
        if !(noise_sigma >= S::zero()) {
            return Err(Error::InvalidInput("noise sigma must be >= 0".into()));
        }
        Ok(Self {
            pair,
            map_matrix,
            feature_dim,
            noise_sigma,
            master_seed,
        })
    }

    pub fn noise_sigma(&self) -> S {
        self.noise_sigma
    }

    pub fn map_matrix(&self) -> &[S] {
        &self.map_matrix
    }

    /// Same environment with a different noise level.
    pub fn with_noise(&self, noise_sigma: S) -> Self {
        Self {
            noise_sigma,
            ..self.clone()
        }
    }

    fn linear_image(&self, embedding: &Embedding<S>) -> Result<Vec<S>> {
        if embedding.shape() != self.pair.shape() {
            return Err(Error::InvalidInput(format!(
                "embedding shape {:?} does not match environment shape {:?}",
                embedding.shape(),
                self.pair.shape()
            )));
        }
        let x = embedding.as_slice();
        let n = x.len();
        Ok(self
            .map_matrix
            .chunks_exact(n)
            .map(|row| row.iter().zip(x).map(|(&m, &v)| m * v).sum())
            .collect())
    }

    /// Features with the noise term switched off.
    pub fn noiseless_features(&self, embedding: &Embedding<S>) -> Result<FeatureVector<S>> {
        FeatureVector::normalize(self.linear_image(embedding)?)
    }

    fn noisy_features(&self, embedding: &Embedding<S>, sample_seed: u64) -> Result<FeatureVector<S>> {
        let mut y = self.linear_image(embedding)?;
        if self.noise_sigma > S::zero() {
            let mut rng = SeededRng::new(derive_seed(
                derive_seed(self.master_seed, streams::FEATURE_NOISE),
                sample_seed,
            ));
            for v in &mut y {
                *v += self.noise_sigma * S::of(rng.normal());
            }
        }
        FeatureVector::normalize(y)
    }
}

impl<S: Scalar> Backend<S> for SyntheticEnv<S> {
    fn pair(&self) -> &ConceptPair<S> {
        &self.pair
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn generate(&self, embedding: &Embedding<S>, sample_seed: u64) -> Result<Generated<S>> {
        Ok(Generated {
            features: self.noisy_features(embedding, sample_seed)?,
            image_ref: None,
        })
    }

    fn exemplar_features(&self, which: Concept, seeds: &[u64]) -> Result<Vec<FeatureVector<S>>> {
        let e = self.pair.embedding(which);
        seeds.iter().map(|&s| self.noisy_features(e, s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::DEFAULT_PROMPT_TEMPLATE;
    use crate::env::exemplar_set;

    fn env(sigma: f64) -> SyntheticEnv<f64> {
        let cfg = SyntheticConfig {
            noise_sigma: sigma,
            ..SyntheticConfig::default()
        };
        SyntheticEnv::generate(&cfg, "giraffe", "peacock", DEFAULT_PROMPT_TEMPLATE).unwrap()
    }

    #[test]
    fn noiseless_ignores_sample_seed() {
        let env = env(0.0);
        let e = env.pair().first().clone();
        assert_eq!(env.features(&e, 1).unwrap(), env.features(&e, 2).unwrap());
    }

    #[test]
    fn noisy_is_seeded() {
        let env = env(0.05);
        let e = env.pair().second().clone();
        assert_eq!(env.features(&e, 9).unwrap(), env.features(&e, 9).unwrap());
        assert_ne!(env.features(&e, 9).unwrap(), env.features(&e, 10).unwrap());
    }

    #[test]
    fn outputs_are_unit_norm() {
        let env = env(0.01);
        let mut rng = SeededRng::new(17);
        for k in 0..100 {
            let e = Embedding::new(8, 16, rng.normals(128)).unwrap();
            let f = env.features(&e, k).unwrap();
            assert!((f.norm() - 1.0).abs() <= 1e-9);
            assert_eq!(f.dim(), 32);
        }
    }

    #[test]
    fn concept_features_match_exemplar_aggregate() {
        let env = env(0.0);
        let ex = exemplar_set(&env, Concept::First, &[1, 2, 3]).unwrap();
        let direct = env.features(env.pair().first(), 0).unwrap();
        for (a, b) in ex.aggregate.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ex.features.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn derivation_order_is_map_then_e1_then_e2() {
        let env = env(0.0);
        let mut rng = SeededRng::new(42);
        let m = rng.normals(32 * 128);
        let e1 = rng.normals(128);
        let e2 = rng.normals(128);
        assert_eq!(env.map_matrix(), &m[..]);
        assert_eq!(env.pair().first().as_slice(), &e1[..]);
        assert_eq!(env.pair().second().as_slice(), &e2[..]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let env = env(0.0);
        let e = Embedding::zeros(2, 2).unwrap();
        assert!(env.features(&e, 0).is_err());
    }

    #[test]
    fn exemplar_aggregate_brute_force() {
        let env = env(0.05);
        let ex = exemplar_set(&env, Concept::Second, &[1, 2, 3]).unwrap();
        let feats: Vec<_> = [1u64, 2, 3]
            .iter()
            .map(|&s| env.features(env.pair().second(), s).unwrap())
            .collect();
        let mut mean = vec![0.0; 32];
        for f in &feats {
            for i in 0..32 {
                mean[i] += f.as_slice()[i] / 3.0;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..32 {
            assert!((ex.aggregate.as_slice()[i] - mean[i] / norm).abs() < 1e-12);
        }
        let reversed = exemplar_set(&env, Concept::Second, &[3, 2, 1]).unwrap();
        for (a, b) in ex.aggregate.as_slice().iter().zip(reversed.aggregate.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exemplar_set_needs_seeds() {
        let env = env(0.0);
        assert!(exemplar_set(&env, Concept::First, &[]).is_err());
    }
}
