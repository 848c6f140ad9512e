//! Greedy binned-classifier baseline.
//!
//! The verifier-score axis is cut into uniform bins; each bin stores the
//! empirical distribution over three outcome classes and a step escalates
//! when the probability that only the expensive generator succeeds outweighs
//! the expected regeneration cost.

use super::{PolicyError, Router, StepPolicy};
use crate::seed::SeedTree;
use crate::trace::{AggFeatures, RoutingAction, TraceState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    SolvableByWeak,
    UnsolvableByBoth,
    SolvableOnlyByStrong,
}

impl OutcomeClass {
    fn index(self) -> usize {
        match self {
            OutcomeClass::SolvableByWeak => 0,
            OutcomeClass::UnsolvableByBoth => 1,
            OutcomeClass::SolvableOnlyByStrong => 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutomixError {
    #[error("calibration set is empty")]
    EmptyDataset,
    #[error("n_bins must be positive")]
    ZeroBins,
    #[error("invalid classifier: {0}")]
    Invalid(String),
}

/// Per-bin outcome distributions over a uniform partition of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedClassifier {
    pub n_bins: usize,
    /// `(solvable-by-weak, unsolvable-by-both, solvable-only-by-strong)` per bin.
    pub bins: Vec<[f64; 3]>,
}

impl BinnedClassifier {
    pub fn bin_of(&self, score: f64) -> usize {
        ((score * self.n_bins as f64).floor() as usize).min(self.n_bins - 1)
    }

    pub fn lookup(&self, score: f64) -> [f64; 3] {
        self.bins[self.bin_of(score.clamp(0.0, 1.0))]
    }

    pub fn validate(&self) -> Result<(), AutomixError> {
        if self.n_bins == 0 || self.bins.len() != self.n_bins {
            return Err(AutomixError::Invalid(format!(
                "expected {} bins, found {}",
                self.n_bins,
                self.bins.len()
            )));
        }
        for (i, row) in self.bins.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                return Err(AutomixError::Invalid(format!("bin {i} is not a distribution")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AutomixError> {
        let clf: BinnedClassifier =
            serde_json::from_str(text).map_err(|e| AutomixError::Invalid(e.to_string()))?;
        clf.validate()?;
        Ok(clf)
    }
}

/// Empirical per-bin class frequencies; empty bins take the global marginal.
pub fn fit_automix_bins(
    labeled: &[(f64, OutcomeClass)],
    n_bins: usize,
) -> Result<BinnedClassifier, AutomixError> {
    if n_bins == 0 {
        return Err(AutomixError::ZeroBins);
    }
    if labeled.is_empty() {
        return Err(AutomixError::EmptyDataset);
    }
    let mut counts = vec![[0u64; 3]; n_bins];
    let mut total = [0u64; 3];
    let probe = BinnedClassifier {
        n_bins,
        bins: Vec::new(),
    };
    for &(score, class) in labeled {
        let b = probe.bin_of(score.clamp(0.0, 1.0));
        counts[b][class.index()] += 1;
        total[class.index()] += 1;
    }
    let normalize = |c: &[u64; 3]| -> [f64; 3] {
        let n = (c[0] + c[1] + c[2]) as f64;
        [c[0] as f64 / n, c[1] as f64 / n, c[2] as f64 / n]
    };
    let marginal = normalize(&total);
    let bins = counts
        .iter()
        .map(|c| if c.iter().sum::<u64>() == 0 { marginal } else { normalize(c) })
        .collect();
    Ok(BinnedClassifier { n_bins, bins })
}

/// Escalates iff `P(solvable only by strong) - lambda * E[strong tokens] > 0`.
pub fn decide_automix(
    clf: &BinnedClassifier,
    score: f64,
    lambda: f64,
    expected_strong_tokens: f64,
) -> RoutingAction {
    let gain = clf.lookup(score)[OutcomeClass::SolvableOnlyByStrong.index()];
    if gain - lambda * expected_strong_tokens > 0.0 {
        RoutingAction::Regenerate
    } else {
        RoutingAction::Continue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomixRouter {
    pub classifier: BinnedClassifier,
    pub lambda: f64,
    pub expected_strong_tokens: f64,
}

impl StepPolicy for &AutomixRouter {
    fn decide(&mut self, feats: &AggFeatures, _: &TraceState) -> Result<RoutingAction, PolicyError> {
        Ok(decide_automix(
            &self.classifier,
            feats.current_score,
            self.lambda,
            self.expected_strong_tokens,
        ))
    }
}

impl Router for AutomixRouter {
    fn label(&self) -> String {
        format!("automix(lambda={})", self.lambda)
    }

    fn session<'a>(&'a self, _: SeedTree) -> Box<dyn StepPolicy + 'a> {
        Box::new(self)
    }
}
