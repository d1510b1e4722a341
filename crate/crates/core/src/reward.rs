//! Similarity-plus-balance fusion reward and the summary metrics built on it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{ExemplarSet, FeatureVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::selection::CandidateRecord;

/// Default weight of the `|s1 - s2|` penalty.
pub const DEFAULT_ALPHA: f64 = 5.0;

/// Similarities to both concepts and the reward derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct RewardBreakdown<S> {
    pub s1: S,
    pub s2: S,
    pub reward: S,
    pub alpha: S,
}

/// `(s1 + s2) - alpha * |s1 - s2|`
#[inline]
pub fn fusion_reward<S: Scalar>(s1: S, s2: S, alpha: S) -> S {
    (s1 + s2) - alpha * (s1 - s2).abs()
}

impl<S: Scalar> RewardBreakdown<S> {
    pub fn from_similarities(s1: S, s2: S, alpha: S) -> Self {
        Self {
            s1,
            s2,
            reward: fusion_reward(s1, s2, alpha),
            alpha,
        }
    }

    /// `s1 + s2`, the ranking key of the selection stage.
    #[inline]
    pub fn total_similarity(&self) -> S {
        self.s1 + self.s2
    }

    #[inline]
    pub fn gap(&self) -> S {
        (self.s1 - self.s2).abs()
    }
}

/// How similarity to an exemplar set is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// Cosine to the normalised mean exemplar feature.
    #[default]
    Aggregate,
    /// Mean of the cosines to each exemplar.
    PerExemplarMean,
}

/// Dot product of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity<S: Scalar>(u: &FeatureVector<S>, v: &FeatureVector<S>) -> Result<S> {
    if u.dim() != v.dim() {
        return Err(Error::InvalidInput(format!(
            "feature dims differ: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let dot: S = u.as_slice().iter().zip(v.as_slice()).map(|(&a, &b)| a * b).sum();
    Ok(dot.max(-S::one()).min(S::one()))
}

fn similarity_to<S: Scalar>(fused: &FeatureVector<S>, set: &ExemplarSet<S>, mode: SimilarityMode) -> Result<S> {
    match mode {
        SimilarityMode::Aggregate => cosine_similarity(fused, &set.aggregate),
        SimilarityMode::PerExemplarMean => {
            let mut acc = S::zero();
            for f in &set.features {
                acc += cosine_similarity(fused, f)?;
            }
            Ok(acc / S::from_usize(set.features.len()).unwrap())
        }
    }
}

fn check_alpha<S: Scalar>(alpha: S) -> Result<()> {
    if alpha.is_finite() && alpha >= S::zero() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

pub fn compute_reward<S: Scalar>(
    fused: &FeatureVector<S>,
    ex1: &ExemplarSet<S>,
    ex2: &ExemplarSet<S>,
    alpha: S,
) -> Result<RewardBreakdown<S>> {
    compute_reward_with(fused, ex1, ex2, alpha, SimilarityMode::Aggregate)
}

pub fn compute_reward_with<S: Scalar>(
    fused: &FeatureVector<S>,
    ex1: &ExemplarSet<S>,
    ex2: &ExemplarSet<S>,
    alpha: S,
    mode: SimilarityMode,
) -> Result<RewardBreakdown<S>> {
    check_alpha(alpha)?;
    let s1 = similarity_to(fused, ex1, mode)?;
    let s2 = similarity_to(fused, ex2, mode)?;
    Ok(RewardBreakdown::from_similarities(s1, s2, alpha))
}

/// Aggregate scores over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MetricsReport<S> {
    /// Mean over samples of `(s1 + s2) / 2`.
    pub avg_sim: S,
    /// Mean over samples of `|s1 - s2|`.
    pub balance: S,
    pub mean_reward: S,
    pub n_samples: usize,
}

pub fn metrics_from_breakdowns<'a, S: Scalar>(
    breakdowns: impl IntoIterator<Item = &'a RewardBreakdown<S>>,
) -> Result<MetricsReport<S>> {
    let (mut sim, mut gap, mut reward, mut n) = (S::zero(), S::zero(), S::zero(), 0usize);
    for b in breakdowns {
        sim += b.total_similarity() / S::two();
        gap += b.gap();
        reward += b.reward;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("metrics need at least one record".into()));
    }
    let count = S::from_usize(n).unwrap();
    Ok(MetricsReport {
        avg_sim: sim / count,
        balance: gap / count,
        mean_reward: reward / count,
        n_samples: n,
    })
}

pub fn compute_metrics<S: Scalar>(records: &[CandidateRecord<S>]) -> Result<MetricsReport<S>> {
    metrics_from_breakdowns(records.iter().map(|r| &r.breakdown))
}

/// Pair id used for the overall row of a metrics table.
pub const ALL_PAIRS_ID: &str = "all";

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub pair_id: String,
    pub n: usize,
    pub avg_sim: f64,
    pub balance: f64,
    pub mean_reward: f64,
}

impl MetricsRow {
    pub fn new<S: Scalar>(pair_id: impl Into<String>, report: &MetricsReport<S>) -> Self {
        Self {
            pair_id: pair_id.into(),
            n: report.n_samples,
            avg_sim: report.avg_sim.as_f64(),
            balance: report.balance.as_f64(),
            mean_reward: report.mean_reward.as_f64(),
        }
    }
}

/// Per-pair rows (first-appearance order) followed by an overall row.
///
/// The overall row is a flat mean over every record, or the mean of the
/// per-pair rows when `per_pair_mean` is set.
pub fn metrics_table<S: Scalar>(records: &[CandidateRecord<S>], per_pair_mean: bool) -> Result<Vec<MetricsRow>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("metrics need at least one record".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.pair_id.as_str()) {
            order.push(&r.pair_id);
        }
    }
    let mut rows = Vec::with_capacity(order.len() + 1);
    for id in &order {
        let report = metrics_from_breakdowns(records.iter().filter(|r| r.pair_id == *id).map(|r| &r.breakdown))?;
        rows.push(MetricsRow::new(*id, &report));
    }
    let overall = if per_pair_mean {
        let k = rows.len() as f64;
        MetricsRow {
            pair_id: ALL_PAIRS_ID.into(),
            n: records.len(),
            avg_sim: rows.iter().map(|r| r.avg_sim).sum::<f64>() / k,
            balance: rows.iter().map(|r| r.balance).sum::<f64>() / k,
            mean_reward: rows.iter().map(|r| r.mean_reward).sum::<f64>() / k,
        }
    } else {
        MetricsRow::new(ALL_PAIRS_ID, &compute_metrics(records)?)
    };
    rows.push(overall);
    Ok(rows)
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
