//! Routing policies and the callback surface the episode loop drives.

pub mod automix;
pub mod threshold;

use crate::seed::SeedTree;
use crate::trace::{AggFeatures, RoutingAction, TraceState};
use thiserror::Error;

pub use automix::{
    decide_automix, fit_automix_bins, AutomixRouter, BinnedClassifier, OutcomeClass,
};
pub use threshold::{decide_threshold, ThresholdPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("policy failure: {0}")]
pub struct PolicyError(pub String);

/// Per-episode decision maker.
///
/// `decide` sees the trace with the cheap generator's proposal as its last
/// step. After a regeneration the episode loop reports the replacement step
/// through `observe_regenerated`, with the trace already updated.
pub trait StepPolicy {
    fn decide(
        &mut self,
        feats: &AggFeatures,
        trace: &TraceState,
    ) -> Result<RoutingAction, PolicyError>;

    fn observe_regenerated(&mut self, _feats: &AggFeatures, _trace: &TraceState) {}
}

impl<F> StepPolicy for F
where
    F: FnMut(&AggFeatures, &TraceState) -> Result<RoutingAction, PolicyError>,
{
    fn decide(
        &mut self,
        feats: &AggFeatures,
        trace: &TraceState,
    ) -> Result<RoutingAction, PolicyError> {
        self(feats, trace)
    }
}

/// A policy family member that can spawn independent per-episode sessions.
pub trait Router: Sync {
    fn label(&self) -> String;

    /// `seed` feeds any internal randomness (stochastic policies).
    fn session<'a>(&'a self, seed: SeedTree) -> Box<dyn StepPolicy + 'a>;
}

/// Accepts every proposal.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysContinue;

/// Regenerates every step.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysRegenerate;

impl StepPolicy for AlwaysContinue {
    fn decide(&mut self, _: &AggFeatures, _: &TraceState) -> Result<RoutingAction, PolicyError> {
        Ok(RoutingAction::Continue)
    }
}

impl StepPolicy for AlwaysRegenerate {
    fn decide(&mut self, _: &AggFeatures, _: &TraceState) -> Result<RoutingAction, PolicyError> {
        Ok(RoutingAction::Regenerate)
    }
}

impl Router for AlwaysContinue {
    fn label(&self) -> String {
        "always-continue".into()
    }
    fn session<'a>(&'a self, _: SeedTree) -> Box<dyn StepPolicy + 'a> {
        Box::new(AlwaysContinue)
    }
}

impl Router for AlwaysRegenerate {
    fn label(&self) -> String {
        "always-regenerate".into()
    }
    fn session<'a>(&'a self, _: SeedTree) -> Box<dyn StepPolicy + 'a> {
        Box::new(AlwaysRegenerate)
    }
}

/// Regenerates each proposal independently with probability `p`.
///
/// Used as a behavior policy when collecting labeled observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomRegenerate {
    pub p: f64,
}

struct RandomSession {
    p: f64,
    rng: crate::seed::Rng,
}

impl StepPolicy for RandomSession {
    fn decide(&mut self, _: &AggFeatures, _: &TraceState) -> Result<RoutingAction, PolicyError> {
        use rand::Rng;
        Ok(if self.rng.random_bool(self.p) {
            RoutingAction::Regenerate
        } else {
            RoutingAction::Continue
        })
    }
}

impl Router for RandomRegenerate {
    fn label(&self) -> String {
        format!("random(p={})", self.p)
    }
    fn session<'a>(&'a self, seed: SeedTree) -> Box<dyn StepPolicy + 'a> {
        Box::new(RandomSession {
            p: self.p.clamp(0.0, 1.0),
            rng: seed.rng(),
        })
    }
}
