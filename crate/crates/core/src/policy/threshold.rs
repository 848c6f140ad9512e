use super::{PolicyError, Router, StepPolicy};
use crate::seed::SeedTree;
use crate::trace::{AggFeatures, Origin, RoutingAction, TraceState};
use serde::{Deserialize, Serialize};

/// Myopic threshold router.
///
/// With `takeover` set the expensive generator keeps every remaining step
/// once it has been called in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub k: f64,
    #[serde(default)]
    pub takeover: bool,
}

impl ThresholdPolicy {
    pub fn new(k: f64) -> Self {
        assert!((0.0..=1.0).contains(&k), "threshold {k} outside [0, 1]");
        Self { k, takeover: false }
    }

    pub fn one_step_takeover(k: f64) -> Self {
        Self {
            takeover: true,
            ..Self::new(k)
        }
    }
}

/// Regenerates iff the current score is strictly below `k`, or the policy is
/// in takeover mode and has already escalated.
pub fn decide_threshold(
    policy: &ThresholdPolicy,
    feats: &AggFeatures,
    escalated_before: bool,
) -> RoutingAction {
    if (policy.takeover && escalated_before) || feats.current_score < policy.k {
        RoutingAction::Regenerate
    } else {
        RoutingAction::Continue
    }
}

impl StepPolicy for ThresholdPolicy {
    fn decide(
        &mut self,
        feats: &AggFeatures,
        trace: &TraceState,
    ) -> Result<RoutingAction, PolicyError> {
        // The last step is the pending proposal.
        let accepted = &trace.steps()[..trace.steps().len().saturating_sub(1)];
        let escalated = accepted.iter().any(|s| s.origin == Origin::Strong);
        Ok(decide_threshold(self, feats, escalated))
    }
}

impl Router for ThresholdPolicy {
    fn label(&self) -> String {
        if self.takeover {
            format!("one-step-threshold(k={})", self.k)
        } else {
            format!("threshold(k={})", self.k)
        }
    }

    fn session<'a>(&'a self, _: SeedTree) -> Box<dyn StepPolicy + 'a> {
        Box::new(*self)
    }
}
