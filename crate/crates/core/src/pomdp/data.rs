//! Labeled observations for fitting and accuracy estimates for the model.

use super::PomdpError;
use crate::policy::{PolicyError, Router, StepPolicy};
use crate::seed::SeedTree;
use crate::sim::{run_episode, EnvConfig, LatentClass};
use crate::trace::{AggFeatures, Origin, RoutingAction, TraceState, Truth};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};

/// One scored step with the latent class it left the trace in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledObs {
    pub min_prev: f64,
    pub current: f64,
    pub class: LatentClass,
}

/// Class of a trace whose last step is the candidate, from truth labels.
fn class_from_truths(trace: &TraceState) -> Option<LatentClass> {
    let (last, prefix) = trace.steps().split_last()?;
    let mut prefix_ok = true;
    for s in prefix {
        prefix_ok &= s.truth? == Truth::Correct;
    }
    Some(match (prefix_ok, last.truth?) {
        (false, _) => LatentClass::S1,
        (true, Truth::Correct) => LatentClass::S0,
        (true, Truth::Incorrect) => LatentClass::S2,
    })
}

struct Recorder<'a> {
    inner: Box<dyn StepPolicy + 'a>,
    out: &'a mut Vec<LabeledObs>,
}

impl Recorder<'_> {
    fn record(&mut self, feats: &AggFeatures, trace: &TraceState) {
        if let Some(class) = class_from_truths(trace) {
            self.out.push(LabeledObs {
                min_prev: feats.min_prev_score,
                current: feats.current_score,
                class,
            });
        }
    }
}

impl StepPolicy for Recorder<'_> {
    fn decide(&mut self, feats: &AggFeatures, trace: &TraceState) -> Result<RoutingAction, PolicyError> {
        self.record(feats, trace);
        self.inner.decide(feats, trace)
    }

    fn observe_regenerated(&mut self, feats: &AggFeatures, trace: &TraceState) {
        self.record(feats, trace);
        self.inner.observe_regenerated(feats, trace);
    }
}

/// Rolls out `behavior` in the simulator and labels every scored step,
/// replaced proposals included.
pub fn collect_labeled_steps<R: Router + ?Sized>(
    cfg: &EnvConfig,
    behavior: &R,
    episodes: u64,
    seed: SeedTree,
) -> Result<Vec<LabeledObs>, crate::sim::SimError> {
    let mut out = Vec::new();
    for e in 0..episodes {
        let ep_seed = seed.index(e);
        let mut rec = Recorder {
            inner: behavior.session(ep_seed.named("policy")),
            out: &mut out,
        };
        run_episode(&mut rec, cfg, 0.0, ep_seed.named("env"))?;
    }
    Ok(out)
}

/// Labels the committed steps of truth-annotated traces. Unlabeled steps end
/// a trace's contribution.
pub fn labeled_from_traces(traces: &[TraceState]) -> Vec<LabeledObs> {
    let mut out = Vec::new();
    for t in traces {
        let mut min_prev: f64 = 1.0;
        let mut prefix_ok = true;
        for s in t.steps() {
            let Some(truth) = s.truth else { break };
            let class = match (prefix_ok, truth) {
                (false, _) => LatentClass::S1,
                (true, Truth::Correct) => LatentClass::S0,
                (true, Truth::Incorrect) => LatentClass::S2,
            };
            out.push(LabeledObs {
                min_prev,
                current: s.score,
                class,
            });
            prefix_ok &= truth == Truth::Correct;
            min_prev = min_prev.min(s.score);
        }
    }
    out
}

/// Fraction of weak-origin and strong-origin steps labeled correct.
pub fn estimate_accuracies(traces: &[TraceState]) -> Result<(f64, f64), PomdpError> {
    let mut counts = [[0u64; 2]; 2];
    for s in traces.iter().flat_map(|t| t.steps()) {
        if let Some(truth) = s.truth {
            let o = usize::from(s.origin == Origin::Strong);
            counts[o][0] += u64::from(truth == Truth::Correct);
            counts[o][1] += 1;
        }
    }
    let rate = |o: usize, origin| {
        if counts[o][1] == 0 {
            Err(PomdpError::NoSamples(origin))
        } else {
            Ok(counts[o][0] as f64 / counts[o][1] as f64)
        }
    };
    Ok((rate(0, Origin::Weak)?, rate(1, Origin::Strong)?))
}

pub fn write_labeled_jsonl<W: Write>(mut w: W, rows: &[LabeledObs]) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_labeled_jsonl<R: Read>(r: R) -> Result<Vec<LabeledObs>, PomdpError> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| PomdpError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LabeledObs = serde_json::from_str(&line)
            .map_err(|e| PomdpError::Io(format!("line {}: {e}", i + 1)))?;
        if !(0.0..=1.0).contains(&row.min_prev) || !(0.0..=1.0).contains(&row.current) {
            return Err(PomdpError::OutOfDomain(row.min_prev, row.current));
        }
        rows.push(row);
    }
    Ok(rows)
}
