//! Generation backends: embedding in, unit-norm feature vector out.
//!
//! [`SyntheticEnv`] is a seeded linear stand-in for the generate → segment →
//! encode pipeline; [`BridgeBackend`] forwards the same calls to an HTTP
//! service speaking the [`wire`] protocol.

mod bridge;
mod oracle;
mod synthetic;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::embedding::{Concept, ConceptPair, Embedding};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use bridge::{BridgeBackend, BridgeConfig, BRIDGE_URL_ENV};
pub use oracle::{grid_oracle, uniform_reward, GridOptimum};
pub use synthetic::{SyntheticConfig, SyntheticEnv};

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct FeatureVector<S> {
    values: Vec<S>,
}

impl<S: Scalar> FeatureVector<S> {
    /// Scales `values` to unit length.
    pub fn normalize(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("feature vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("feature vector is not finite".into()));
        }
        let norm = l2_norm(&values);
        if !(norm > S::zero()) || !norm.is_finite() {
            return Err(Error::NumericDomain(format!("cannot normalise vector with norm {norm}")));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// Accepts an already-normalised vector (norm within `sqrt(eps)`-scaled slack).
    pub fn from_unit(values: Vec<S>) -> Result<Self> {
        let norm = l2_norm(&values);
        let tol = S::epsilon().sqrt() * S::of(1e-1);
        if values.is_empty() || (norm - S::one()).abs() > tol {
            return Err(Error::InvalidInput(format!("feature vector norm {norm} is not 1")));
        }
        Ok(Self { values })
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> S {
        l2_norm(&self.values)
    }
}

pub(crate) fn l2_norm<S: Scalar>(values: &[S]) -> S {
    values.iter().map(|&v| v * v).sum::<S>().sqrt()
}

/// Features of `K` seeded exemplars of one concept plus their normalised mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ExemplarSet<S> {
    pub concept_label: String,
    pub features: Vec<FeatureVector<S>>,
    pub aggregate: FeatureVector<S>,
}

impl<S: Scalar> ExemplarSet<S> {
    pub fn from_features(concept_label: impl Into<String>, features: Vec<FeatureVector<S>>) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::EmptyInput("exemplar set needs at least one feature".into()))?;
        let d = first.dim();
        if features.iter().any(|f| f.dim() != d) {
            return Err(Error::InvalidInput("exemplar features differ in dimension".into()));
        }
        let k = S::from_usize(features.len()).unwrap();
        let mean = (0..d)
            .map(|i| features.iter().map(|f| f.values[i]).sum::<S>() / k)
            .collect();
        Ok(Self {
            concept_label: concept_label.into(),
            aggregate: FeatureVector::normalize(mean)?,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// One backend generation: features plus an optional opaque image reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated<S> {
    pub features: FeatureVector<S>,
    pub image_ref: Option<String>,
}

/// Embedding → features pipeline bound to one concept pair.
pub trait Backend<S: Scalar>: Send + Sync {
    fn pair(&self) -> &ConceptPair<S>;

    fn feature_dim(&self) -> usize;

    /// One generation from `embedding` with noise seed `sample_seed`.
    fn generate(&self, embedding: &Embedding<S>, sample_seed: u64) -> Result<Generated<S>>;

    /// Features of exemplars of `which`, one per seed, in seed order.
    fn exemplar_features(&self, which: Concept, seeds: &[u64]) -> Result<Vec<FeatureVector<S>>>;

    fn features(&self, embedding: &Embedding<S>, sample_seed: u64) -> Result<FeatureVector<S>> {
        Ok(self.generate(embedding, sample_seed)?.features)
    }
}

/// Builds the exemplar set of `which` from `seeds` (one exemplar per seed).
pub fn exemplar_set<S: Scalar, B: Backend<S> + ?Sized>(
    backend: &B,
    which: Concept,
    seeds: &[u64],
) -> Result<ExemplarSet<S>> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("exemplar set needs at least one seed".into()));
    }
    let features = backend.exemplar_features(which, seeds)?;
    if features.len() != seeds.len() {
        return Err(Error::InvalidInput(format!(
            "backend returned {} exemplars for {} seeds",
            features.len(),
            seeds.len()
        )));
    }
    ExemplarSet::from_features(backend.pair().label(which), features)
}

/// Both exemplar sets for a backend's pair.
pub fn exemplar_pair<S: Scalar, B: Backend<S> + ?Sized>(
    backend: &B,
    seeds: &[u64],
) -> Result<(ExemplarSet<S>, ExemplarSet<S>)> {
    Ok((
        exemplar_set(backend, Concept::First, seeds)?,
        exemplar_set(backend, Concept::Second, seeds)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_gives_unit_norm() {
        let f = FeatureVector::normalize(vec![3.0f64, 4.0]).unwrap();
        assert_eq!(f.as_slice(), &[0.6, 0.8]);
        assert!(FeatureVector::normalize(vec![0.0f64, 0.0]).is_err());
        assert!(FeatureVector::from_unit(vec![0.6f64, 0.8]).is_ok());
        assert!(FeatureVector::from_unit(vec![0.6f64, 0.9]).is_err());
    }

    #[test]
    fn single_exemplar_aggregate_is_itself() {
        let f = FeatureVector::normalize(vec![1.0f64, 2.0, 2.0]).unwrap();
        let set = ExemplarSet::from_features("x", vec![f.clone()]).unwrap();
        for (a, b) in set.aggregate.as_slice().iter().zip(f.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(ExemplarSet::<f64>::from_features("x", vec![]).is_err());
    }
}
