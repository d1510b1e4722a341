//! Two-stage candidate selection: threshold filter, then rank by `s1 + s2`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::ActionVector;
use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;
use crate::scalar::Scalar;

pub const DEFAULT_TAU_PRESENCE: f64 = 0.63;
pub const DEFAULT_TAU_BALANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleSeeds {
    pub policy_seed: u64,
    pub sample_seed: u64,
}

/// One generated sample and its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CandidateRecord<S> {
    /// Index in generation order, unique within a sample file.
    pub candidate_id: u64,
    pub pair_id: String,
    pub breakdown: RewardBreakdown<S>,
    #[serde(default)]
    pub image_ref: String,
    #[serde(default)]
    pub action_used: Option<ActionVector<S>>,
    #[serde(default)]
    pub seeds: SampleSeeds,
}

impl<S: Scalar> CandidateRecord<S> {
    pub fn new(candidate_id: u64, pair_id: impl Into<String>, breakdown: RewardBreakdown<S>) -> Self {
        Self {
            candidate_id,
            pair_id: pair_id.into(),
            breakdown,
            image_ref: String::new(),
            action_used: None,
            seeds: SampleSeeds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub tau_presence: f64,
    pub tau_balance: f64,
    pub top_k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            tau_presence: DEFAULT_TAU_PRESENCE,
            tau_balance: DEFAULT_TAU_BALANCE,
            top_k: 1,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_presence > 0.0 && self.tau_presence < 1.0) {
            return Err(Error::config("selection.tau_presence", "must lie in (0, 1)"));
        }
        if !(self.tau_balance > 0.0) || !self.tau_balance.is_finite() {
            return Err(Error::config("selection.tau_balance", "must be > 0"));
        }
        if self.top_k == 0 {
            return Err(Error::config("selection.top_k", "must be >= 1"));
        }
        Ok(())
    }

    /// `s1 > τp && s2 > τp && |s1 - s2| < τb`, strict on every side.
    pub fn admits<S: Scalar>(&self, b: &RewardBreakdown<S>) -> bool {
        let tau_p = S::of(self.tau_presence);
        b.s1 > tau_p && b.s2 > tau_p && (b.s1 - b.s2).abs() < S::of(self.tau_balance)
    }
}

/// Records passing all three thresholds, in input order.
pub fn filter_candidates<S: Scalar>(records: &[CandidateRecord<S>], cfg: &SelectionConfig) -> Vec<CandidateRecord<S>> {
    records.iter().filter(|r| cfg.admits(&r.breakdown)).cloned().collect()
}

/// Descending `s1 + s2`, then ascending `candidate_id`.
fn rank_order<S: Scalar>(a: &CandidateRecord<S>, b: &CandidateRecord<S>) -> Ordering {
    b.breakdown
        .total_similarity()
        .partial_cmp(&a.breakdown.total_similarity())
        .unwrap_or(Ordering::Equal)
        .then(a.candidate_id.cmp(&b.candidate_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking<S> {
    pub selected: Vec<CandidateRecord<S>>,
    /// Set when there was nothing to rank.
    pub empty: bool,
}

pub fn rank_top_k<S: Scalar>(candidates: &[CandidateRecord<S>], k: usize) -> Ranking<S> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(rank_order);
    sorted.truncate(k);
    Ranking {
        empty: sorted.is_empty(),
        selected: sorted,
    }
}

/// How close an unsuccessful pool came to the thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearMiss {
    pub n_records: usize,
    pub n_candidates: usize,
    /// Largest `min(s1, s2)` over all records.
    pub best_min_similarity: Option<f64>,
    /// Smallest `|s1 - s2|` over all records.
    pub smallest_gap: Option<f64>,
}

impl NearMiss {
    pub fn of<S: Scalar>(records: &[CandidateRecord<S>], n_candidates: usize) -> Self {
        let best_min = records
            .iter()
            .map(|r| r.breakdown.s1.min(r.breakdown.s2).as_f64())
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
        let gap = records
            .iter()
            .map(|r| r.breakdown.gap().as_f64())
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
        Self {
            n_records: records.len(),
            n_candidates,
            best_min_similarity: best_min,
            smallest_gap: gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome<S> {
    pub selected: Vec<CandidateRecord<S>>,
    pub diagnostics: NearMiss,
}

impl<S> SelectionOutcome<S> {
    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Filter then rank. Thresholds are never relaxed; an empty result comes
/// back with near-miss diagnostics.
pub fn select<S: Scalar>(records: &[CandidateRecord<S>], cfg: &SelectionConfig) -> Result<SelectionOutcome<S>> {
    cfg.validate()?;
    let candidates = filter_candidates(records, cfg);
    let ranking = rank_top_k(&candidates, cfg.top_k);
    debug_assert!(ranking.selected.iter().all(|r| cfg.admits(&r.breakdown)));
    Ok(SelectionOutcome {
        diagnostics: NearMiss::of(records, candidates.len()),
        selected: ranking.selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, s1: f64, s2: f64) -> CandidateRecord<f64> {
        CandidateRecord::new(id, "p", RewardBreakdown::from_similarities(s1, s2, 5.0))
    }

    #[test]
    fn threshold_examples() {
        let cfg = SelectionConfig::default();
        assert_eq!(cfg.tau_presence, 0.63);
        assert_eq!(cfg.tau_balance, 0.05);
        assert!(cfg.admits(&rec(0, 0.70, 0.68).breakdown));
        assert!(!cfg.admits(&rec(0, 0.70, 0.60).breakdown));
        assert!(!cfg.admits(&rec(0, 0.70, 0.64).breakdown));
    }

    #[test]
    fn boundaries_are_excluded() {
        let cfg = SelectionConfig::default();
        assert!(!cfg.admits(&rec(0, 0.63, 0.65).breakdown));
        assert!(!cfg.admits(&rec(0, 0.65, 0.63).breakdown));
    }

    #[test]
    fn filter_preserves_order() {
        let records = vec![rec(0, 0.70, 0.68), rec(1, 0.1, 0.1), rec(2, 0.66, 0.67)];
        let kept = filter_candidates(&records, &SelectionConfig::default());
        assert_eq!(kept.iter().map(|r| r.candidate_id).collect::<Vec<_>>(), [0, 2]);
    }

    #[test]
    fn rank_examples() {
        let one = rank_top_k(&[rec(4, 0.7, 0.7)], 3);
        assert_eq!(one.selected.len(), 1);
        let scores = [rec(0, 0.675, 0.675), rec(1, 0.705, 0.705), rec(2, 0.69, 0.69)];
        assert_eq!(rank_top_k(&scores, 1).selected[0].candidate_id, 1);
        let tied = [rec(7, 0.7, 0.7), rec(3, 0.7, 0.7)];
        assert_eq!(rank_top_k(&tied, 1).selected[0].candidate_id, 3);
        let empty = rank_top_k::<f64>(&[], 1);
        assert!(empty.empty && empty.selected.is_empty());
    }

    #[test]
    fn empty_selection_reports_near_miss() {
        let out = select(&[rec(0, 0.70, 0.60), rec(1, 0.62, 0.62)], &SelectionConfig::default()).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.diagnostics.best_min_similarity, Some(0.62));
        assert_eq!(out.diagnostics.smallest_gap, Some(0.0));
        assert_eq!(out.diagnostics.n_candidates, 0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = SelectionConfig {
            tau_presence: 1.2,
            ..SelectionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SelectionConfig {
            top_k: 0,
            ..SelectionConfig::default()
        };
        assert!(select::<f64>(&[], &bad).is_err());
    }

    #[test]
    fn record_json_roundtrip() {
        let mut r = rec(5, 0.7, 0.68);
        r.action_used = Some(ActionVector::new(vec![0.25, 0.5]).unwrap());
        r.seeds = SampleSeeds {
            policy_seed: 1,
            sample_seed: 2,
        };
        let json = serde_json::to_string(&r).unwrap();
        let back: CandidateRecord<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
