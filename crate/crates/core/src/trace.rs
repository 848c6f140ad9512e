//! Reasoning-trace domain types and the feature extraction every policy shares.
//!
//! A trace is a query-rooted prefix of scored steps. Step text never enters
//! this crate: a step is reduced to its verifier score, its decode length,
//! which generator produced it and (in labeled data) whether it is correct.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default truncation length for every trace.
pub const DEFAULT_MAX_STEPS: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("cannot append a step to a terminated trace")]
    AppendAfterTermination,
    #[error("trace already holds the maximum of {max} steps")]
    MaxStepsExceeded { max: u32 },
    #[error("trace has no steps")]
    EmptyTrace,
    #[error("invariant violated on field `{field}`: {reason}")]
    InvariantViolation { field: &'static str, reason: String },
}

/// Which generator produced an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Weak,
    Strong,
}

/// Ground-truth step label, present only in simulated or annotated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Correct,
    Incorrect,
}

/// One reasoning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Verifier (process reward) score in `[0, 1]`.
    pub score: f64,
    /// Decode tokens spent on this step.
    #[serde(rename = "tokens")]
    pub token_count: u32,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Truth>,
}

impl StepRecord {
    pub fn new(score: f64, token_count: u32, origin: Origin) -> Self {
        Self {
            score,
            token_count,
            origin,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: Truth) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err(TraceError::InvariantViolation {
                field: "score",
                reason: format!("{} is outside [0, 1]", self.score),
            });
        }
        if self.token_count == 0 {
            return Err(TraceError::InvariantViolation {
                field: "tokens",
                reason: "a generated step has at least one token".into(),
            });
        }
        Ok(())
    }
}

/// The routing decision taken on a weak proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingAction {
    /// Accept the cheap generator's step.
    Continue,
    /// Discard it and let the expensive generator produce the step.
    Regenerate,
}

impl RoutingAction {
    pub const ALL: [RoutingAction; 2] = [RoutingAction::Continue, RoutingAction::Regenerate];

    pub fn index(self) -> usize {
        match self {
            RoutingAction::Continue => 0,
            RoutingAction::Regenerate => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            RoutingAction::Continue
        } else {
            RoutingAction::Regenerate
        }
    }
}

/// A query-rooted prefix of accepted steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceState {
    pub query_id: String,
    steps: Vec<StepRecord>,
    pub terminated: bool,
    #[serde(skip, default = "default_max_steps")]
    max_steps: u32,
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

impl TraceState {
    pub fn new(query_id: impl Into<String>) -> Self {
        Self::with_max_steps(query_id, DEFAULT_MAX_STEPS)
    }

    pub fn with_max_steps(query_id: impl Into<String>, max_steps: u32) -> Self {
        Self {
            query_id: query_id.into(),
            steps: Vec::new(),
            terminated: false,
            max_steps,
        }
    }

    /// Builds a trace from already accepted steps, checking every invariant.
    pub fn from_steps(
        query_id: impl Into<String>,
        steps: Vec<StepRecord>,
        terminated: bool,
        max_steps: u32,
    ) -> Result<Self, TraceError> {
        let trace = Self {
            query_id: query_id.into(),
            steps,
            terminated,
            max_steps,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    /// `t`, the number of accepted steps.
    pub fn step_index(&self) -> u32 {
        self.steps.len() as u32
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        for step in &self.steps {
            step.validate()?;
        }
        if self.step_index() > self.max_steps {
            return Err(TraceError::InvariantViolation {
                field: "steps",
                reason: format!(
                    "{} steps exceed the maximum of {}",
                    self.steps.len(),
                    self.max_steps
                ),
            });
        }
        Ok(())
    }

    /// Value-semantics append: the input trace is left untouched.
    pub fn append_step(&self, step: StepRecord) -> Result<TraceState, TraceError> {
        let mut next = self.clone();
        next.push(step)?;
        Ok(next)
    }

    pub(crate) fn push(&mut self, step: StepRecord) -> Result<(), TraceError> {
        if self.terminated {
            return Err(TraceError::AppendAfterTermination);
        }
        if self.step_index() >= self.max_steps {
            return Err(TraceError::MaxStepsExceeded {
                max: self.max_steps,
            });
        }
        step.validate()?;
        self.steps.push(step);
        Ok(())
    }

    pub(crate) fn replace_last(&mut self, step: StepRecord) {
        if let Some(last) = self.steps.last_mut() {
            *last = step;
        }
    }

    pub fn terminate(&mut self) {
        self.terminated = true;
    }

    /// True when every step carries a `Correct` label.
    pub fn all_correct(&self) -> Option<bool> {
        let mut all = true;
        for s in &self.steps {
            match s.truth? {
                Truth::Correct => {}
                Truth::Incorrect => all = false,
            }
        }
        Some(all)
    }

    pub fn min_score(&self) -> Option<f64> {
        self.steps.iter().map(|s| s.score).reduce(f64::min)
    }

    pub fn aggregate_features(&self) -> Result<AggFeatures, TraceError> {
        aggregate_features(self)
    }
}

/// Free-function form of [`TraceState::append_step`].
pub fn append_step(trace: &TraceState, step: StepRecord) -> Result<TraceState, TraceError> {
    trace.append_step(step)
}

/// Reduced observation `(r_t, min r_{1..t-1}, c_t, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggFeatures {
    pub current_score: f64,
    /// Minimum over the strictly earlier steps; 1.0 when there are none.
    pub min_prev_score: f64,
    pub current_tokens: u32,
    pub step_index: u32,
}

impl AggFeatures {
    /// The `(min_prev, current)` pair the observation model is fitted on.
    pub fn score_pair(&self) -> (f64, f64) {
        (self.min_prev_score, self.current_score)
    }
}

pub fn aggregate_features(trace: &TraceState) -> Result<AggFeatures, TraceError> {
    let (last, prefix) = trace.steps.split_last().ok_or(TraceError::EmptyTrace)?;
    let min_prev_score = prefix.iter().map(|s| s.score).fold(1.0_f64, f64::min);
    Ok(AggFeatures {
        current_score: last.score,
        min_prev_score,
        current_tokens: last.token_count,
        step_index: trace.step_index(),
    })
}

/// Per-query generation cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Tokens decoded by the expensive generator.
    pub strong_tokens: u64,
    /// Tokens decoded by the cheap generator, discarded proposals included.
    pub weak_tokens: u64,
    pub regenerate_count: u32,
}

impl CostLedger {
    pub fn charge_weak(&mut self, tokens: u32) {
        self.weak_tokens += u64::from(tokens);
    }

    pub fn charge_strong(&mut self, tokens: u32) {
        debug_assert!(tokens >= 1);
        self.strong_tokens += u64::from(tokens);
        self.regenerate_count += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(scores: &[f64], tokens: &[u32]) -> TraceState {
        let mut t = TraceState::new("q");
        for (&s, &c) in scores.iter().zip(tokens) {
            t = t.append_step(StepRecord::new(s, c, Origin::Weak)).unwrap();
        }
        t
    }

    #[test]
    fn append_to_empty_trace() {
        let t = TraceState::new("q")
            .append_step(StepRecord::new(0.9, 12, Origin::Weak))
            .unwrap();
        assert_eq!(t.step_index(), 1);
    }

    #[test]
    fn append_past_cap_fails() {
        let t = trace_of(&[0.5; 30], &[10; 30]);
        assert_eq!(t.step_index(), 30);
        let err = t
            .append_step(StepRecord::new(0.5, 10, Origin::Weak))
            .unwrap_err();
        assert_eq!(err, TraceError::MaxStepsExceeded { max: 30 });
    }

    #[test]
    fn append_after_termination_fails() {
        let mut t = trace_of(&[0.5], &[10]);
        t.terminate();
        let err = t
            .append_step(StepRecord::new(0.5, 10, Origin::Weak))
            .unwrap_err();
        assert_eq!(err, TraceError::AppendAfterTermination);
    }

    #[test]
    fn append_leaves_input_untouched() {
        let t = trace_of(&[0.4], &[3]);
        let before = t.clone();
        let _ = t.append_step(StepRecord::new(0.9, 1, Origin::Strong)).unwrap();
        assert_eq!(t, before);
    }

    #[test]
    fn append_rejects_bad_step() {
        let t = TraceState::new("q");
        assert!(matches!(
            t.append_step(StepRecord::new(1.5, 3, Origin::Weak)),
            Err(TraceError::InvariantViolation { field: "score", .. })
        ));
        assert!(matches!(
            t.append_step(StepRecord::new(0.5, 0, Origin::Weak)),
            Err(TraceError::InvariantViolation { field: "tokens", .. })
        ));
    }

    #[test]
    fn features_from_definition() {
        let f = trace_of(&[0.9, 0.4, 0.7], &[12, 30, 18])
            .aggregate_features()
            .unwrap();
        assert_eq!(
            f,
            AggFeatures {
                current_score: 0.7,
                min_prev_score: 0.4,
                current_tokens: 18,
                step_index: 3
            }
        );
    }

    #[test]
    fn features_single_step_uses_unit_min() {
        let f = trace_of(&[0.8], &[25]).aggregate_features().unwrap();
        assert_eq!((f.current_score, f.min_prev_score), (0.8, 1.0));
        assert_eq!((f.current_tokens, f.step_index), (25, 1));
    }

    #[test]
    fn features_constant_sequence() {
        let f = trace_of(&[0.5, 0.5], &[10, 10]).aggregate_features().unwrap();
        assert_eq!((f.current_score, f.min_prev_score), (0.5, 0.5));
        assert_eq!((f.current_tokens, f.step_index), (10, 2));
    }

    #[test]
    fn features_of_empty_trace() {
        assert_eq!(
            TraceState::new("q").aggregate_features(),
            Err(TraceError::EmptyTrace)
        );
    }

    #[test]
    fn json_line_shape() {
        let t = TraceState::from_steps(
            "q7",
            vec![StepRecord::new(0.25, 4, Origin::Strong).with_truth(Truth::Correct)],
            true,
            30,
        )
        .unwrap();
        let line = serde_json::to_string(&t).unwrap();
        assert_eq!(
            line,
            r#"{"query_id":"q7","steps":[{"score":0.25,"tokens":4,"origin":"strong","truth":"correct"}],"terminated":true}"#
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn min_prev_matches_fold(scores in prop::collection::vec(0.0f64..=1.0, 1..30)) {
                let tokens = vec![7u32; scores.len()];
                let f = trace_of(&scores, &tokens).aggregate_features().unwrap();
                let t = scores.len();
                let mut expected = 1.0f64;
                for &s in &scores[..t - 1] {
                    if s < expected { expected = s; }
                }
                prop_assert_eq!(f.min_prev_score, expected);
                prop_assert_eq!(f.current_score, scores[t - 1]);
            }

            #[test]
            fn ledger_matches_strong_steps(origins in prop::collection::vec((any::<bool>(), 1u32..200), 0..30)) {
                let mut ledger = CostLedger::default();
                let mut trace = TraceState::new("q");
                for &(strong, tokens) in &origins {
                    let origin = if strong { Origin::Strong } else { Origin::Weak };
                    if strong { ledger.charge_strong(tokens) } else { ledger.charge_weak(tokens) }
                    trace = trace.append_step(StepRecord::new(0.5, tokens, origin)).unwrap();
                }
                let replayed: u64 = trace.steps().iter()
                    .filter(|s| s.origin == Origin::Strong)
                    .map(|s| u64::from(s.token_count)).sum();
                prop_assert_eq!(ledger.strong_tokens, replayed);
                prop_assert_eq!(ledger.strong_tokens == 0, ledger.regenerate_count == 0);
            }
        }
    }
}
