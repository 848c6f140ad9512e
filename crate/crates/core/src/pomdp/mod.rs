//! Belief-state routing.
//!
//! The latent class of the candidate step is tracked with a Bayes filter over
//! verifier-score observations, and actions come from a point-based value
//! iteration solve of the induced three-state POMDP.

mod data;
mod kde;
pub mod pbvi;
mod router;

pub use data::{
    collect_labeled_steps, estimate_accuracies, labeled_from_traces, read_labeled_jsonl,
    write_labeled_jsonl, LabeledObs,
};
pub use kde::{ClassDensity, ObservationModel, BANDWIDTH_FLOOR, LIKELIHOOD_FLOOR};
pub use router::{
    decide_pomdp, fresh_solve_action, precompute_lookup, routing_pomdp, solve, solve_with_cells,
    table_from_policy, AlphaPolicy, LookupTable, PomdpRouter, RecomputeTrigger, RoutingAlpha,
    SolveMode, SolveOptions,
};

use crate::sim::LatentClass;
use crate::trace::{Origin, RoutingAction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PomdpError {
    #[error("cannot step out of the terminal state")]
    SteppedTerminal,
    #[error("invalid POMDP spec: {0}")]
    InvalidSpec(String),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("belief update lost all mass")]
    DegenerateBelief,
    #[error("observation ({0}, {1}) is outside the unit square")]
    OutOfDomain(f64, f64),
    #[error("fewer than {min} samples for class {class:?} (found {found})")]
    InsufficientSamples {
        class: LatentClass,
        found: usize,
        min: usize,
    },
    #[error("no {0:?}-origin steps carry truth labels")]
    NoSamples(Origin),
    #[error("invalid observation model: {0}")]
    InvalidModel(String),
    #[error("{0}")]
    Io(String),
}

pub const DEFAULT_TERMINATION_PROB: f64 = 1.0 / 18.0;

fn default_task_reward() -> f64 {
    1.0
}

fn default_termination() -> f64 {
    DEFAULT_TERMINATION_PROB
}

fn default_max_steps() -> u32 {
    crate::trace::DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PomdpSpec {
    pub p_weak: f64,
    pub p_strong: f64,
    pub lambda: f64,
    #[serde(default = "default_task_reward")]
    pub task_reward: f64,
    /// Mean cost of one regeneration in expensive tokens.
    pub expected_strong_tokens: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    /// Geometric chance that the trace ends after any committed step.
    #[serde(default = "default_termination")]
    pub termination_prob_per_step: f64,
}

impl PomdpSpec {
    pub fn new(p_weak: f64, p_strong: f64, lambda: f64, expected_strong_tokens: f64) -> Self {
        Self {
            p_weak,
            p_strong,
            lambda,
            task_reward: 1.0,
            expected_strong_tokens,
            max_steps: default_max_steps(),
            termination_prob_per_step: DEFAULT_TERMINATION_PROB,
        }
    }

    pub fn validate(&self) -> Result<(), PomdpError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PomdpError::InvalidSpec(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        unit("p_weak", self.p_weak)?;
        unit("p_strong", self.p_strong)?;
        unit("termination_prob_per_step", self.termination_prob_per_step)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(PomdpError::InvalidSpec(format!("lambda = {}", self.lambda)));
        }
        if !(self.expected_strong_tokens > 0.0 && self.expected_strong_tokens.is_finite()) {
            return Err(PomdpError::InvalidSpec(format!(
                "expected_strong_tokens = {} must be positive",
                self.expected_strong_tokens
            )));
        }
        if !self.task_reward.is_finite() {
            return Err(PomdpError::InvalidSpec("task_reward is not finite".into()));
        }
        if self.max_steps == 0 {
            return Err(PomdpError::InvalidSpec("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Cost of one regeneration in task-reward units.
    pub fn regenerate_cost(&self) -> f64 {
        self.lambda * self.expected_strong_tokens
    }

    /// Live-class part of a transition row before termination is applied.
    pub fn live_row(&self, class: LatentClass, action: RoutingAction) -> Result<[f64; 3], PomdpError> {
        use LatentClass::*;
        Ok(match (class, action) {
            (Terminal, _) => return Err(PomdpError::SteppedTerminal),
            (S1, _) => [0.0, 1.0, 0.0],
            (S2, RoutingAction::Continue) => [0.0, 1.0, 0.0],
            (S0, RoutingAction::Continue) => [self.p_weak, 0.0, 1.0 - self.p_weak],
            (S0 | S2, RoutingAction::Regenerate) => [self.p_strong, 0.0, 1.0 - self.p_strong],
        })
    }

    /// `matrix[s][s']` of live-class transitions for one action.
    pub fn live_matrix(&self, action: RoutingAction) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (s, row) in m.iter_mut().enumerate() {
            *row = self
                .live_row(LatentClass::from_index(s), action)
                .expect("live class");
        }
        m
    }
}

/// Next-class distribution in the order `S0, S1, S2, Terminal`.
///
/// Every live class ends with the same per-step termination probability.
pub fn transition_dist(
    class: LatentClass,
    action: RoutingAction,
    spec: &PomdpSpec,
) -> Result<[(LatentClass, f64); 4], PomdpError> {
    let row = spec.live_row(class, action)?;
    let stay = 1.0 - spec.termination_prob_per_step;
    let live = row.map(|p| p * stay);
    let terminal = 1.0 - live.iter().sum::<f64>();
    Ok([
        (LatentClass::S0, live[0]),
        (LatentClass::S1, live[1]),
        (LatentClass::S2, live[2]),
        (LatentClass::Terminal, terminal),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    /// Mass on `S0, S1, S2`.
    pub probs: [f64; 3],
    /// Steps accepted or proposed so far; zero before the first step.
    pub step_index: u32,
}

impl Belief {
    /// The empty prefix is correct.
    pub fn initial() -> Self {
        Self {
            probs: [1.0, 0.0, 0.0],
            step_index: 0,
        }
    }

    pub fn new(probs: [f64; 3], step_index: u32) -> Result<Self, PomdpError> {
        let b = Self { probs, step_index };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PomdpError> {
        if self.probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(PomdpError::InvalidBelief(format!("{:?} has a negative entry", self.probs)));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PomdpError::InvalidBelief(format!("{:?} sums to {sum}", self.probs)));
        }
        Ok(())
    }

    /// S2 mass relative to the largest class mass.
    pub fn s2_ratio(&self) -> f64 {
        let max = self.probs.iter().copied().fold(0.0, f64::max);
        self.probs[2] / max
    }
}

/// Bayes step with precomputed per-class likelihoods of the observation.
///
/// Termination mass is dropped before renormalizing; `step_index` advances.
pub fn update_with_likelihood(
    belief: &Belief,
    action: RoutingAction,
    likelihood: [f64; 3],
    spec: &PomdpSpec,
) -> Result<Belief, PomdpError> {
    let m = spec.live_matrix(action);
    let stay = 1.0 - spec.termination_prob_per_step;
    let mut post = [0.0; 3];
    for (s2, p) in post.iter_mut().enumerate() {
        let pred: f64 = (0..3).map(|s| m[s][s2] * belief.probs[s]).sum::<f64>() * stay;
        *p = likelihood[s2] * pred;
    }
    let total: f64 = post.iter().sum();
    if !(total >= 1e-300) {
        return Err(PomdpError::DegenerateBelief);
    }
    Ok(Belief {
        probs: post.map(|p| p / total),
        step_index: belief.step_index + 1,
    })
}

/// Bayes step with the continuous observation densities.
pub fn belief_update(
    belief: &Belief,
    action: RoutingAction,
    obs: (f64, f64),
    spec: &PomdpSpec,
    model: &ObservationModel,
) -> Result<Belief, PomdpError> {
    update_with_likelihood(belief, action, model.likelihoods(obs)?, spec)
}
