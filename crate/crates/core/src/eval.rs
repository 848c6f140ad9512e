//! Matched-seed evaluation of router families and sweep assembly.
//!
//! Episode `e` of every evaluation runs on `seed.index(e)`, so two routers
//! evaluated with the same seed face the same queries. Bootstrap resampling
//! reuses that pairing.

use crate::metrics::{MetricError, SweepPoint, TradeoffCurve};
use crate::policy::{AlwaysContinue, AlwaysRegenerate, OutcomeClass, Router, ThresholdPolicy};
use crate::pomdp::{
    solve, Belief, ObservationModel, PomdpError, PomdpRouter, PomdpSpec, RecomputeTrigger,
    SolveOptions,
};
use crate::rl::{train_agg, ActionMode, AggRouter, RlError, TrainConfig, TrainRun};
use crate::seed::SeedTree;
use crate::sim::{latent_step, run_episode, EnvConfig, LatentClass, SimError};
use crate::policy::StepPolicy;
use crate::trace::{CostLedger, Origin, RoutingAction, TraceState};
use std::collections::BTreeMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid sweep: {0}")]
    Invalid(String),
}

/// What one evaluated episode contributes to the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub correct: bool,
    pub strong_tokens: u64,
    pub regenerations: u32,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub label: String,
    pub control: f64,
    pub outcomes: Vec<Outcome>,
}

impl Evaluation {
    pub fn episodes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn accuracy(&self) -> f64 {
        self.weighted(None).0
    }

    pub fn mean_strong_tokens(&self) -> f64 {
        self.weighted(None).1
    }

    pub fn regen_rate(&self) -> f64 {
        let steps: u64 = self.outcomes.iter().map(|o| u64::from(o.steps)).sum();
        let regens: u64 = self.outcomes.iter().map(|o| u64::from(o.regenerations)).sum();
        regens as f64 / steps.max(1) as f64
    }

    /// Standard error of the mean strong tokens.
    pub fn strong_tokens_se(&self) -> f64 {
        let n = self.outcomes.len() as f64;
        let mean = self.mean_strong_tokens();
        let var = self
            .outcomes
            .iter()
            .map(|o| (o.strong_tokens as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (var / n).sqrt()
    }

    /// `(accuracy, mean strong tokens)` with per-episode multiplicities.
    fn weighted(&self, counts: Option<&[u32]>) -> (f64, f64) {
        let (mut n, mut correct, mut tokens) = (0.0, 0.0, 0.0);
        for (i, o) in self.outcomes.iter().enumerate() {
            let w = counts.map_or(1.0, |c| f64::from(c[i]));
            n += w;
            correct += w * f64::from(u8::from(o.correct));
            tokens += w * o.strong_tokens as f64;
        }
        (correct / n, tokens / n)
    }
}

/// Runs `router` for `episodes` seed-matched episodes.
pub fn evaluate<R: Router + ?Sized>(
    router: &R,
    env: &EnvConfig,
    control: f64,
    episodes: u64,
    seed: SeedTree,
) -> Result<Evaluation, SimError> {
    let mut outcomes = Vec::with_capacity(episodes as usize);
    for e in 0..episodes {
        let ep = seed.index(e);
        let mut session = router.session(ep.named("policy"));
        // lambda only shapes the reported return, not the dynamics.
        let r = run_episode(session.as_mut(), env, 0.0, ep.named("env"))?;
        outcomes.push(Outcome {
            correct: r.final_reward == 1,
            strong_tokens: r.ledger.strong_tokens,
            regenerations: r.ledger.regenerate_count,
            steps: r.steps(),
        });
    }
    Ok(Evaluation { label: router.label(), control, outcomes })
}

/// A weak and a strong recorded trace of the same query, step-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayPair {
    pub query_id: String,
    pub weak: TraceState,
    pub strong: TraceState,
}

/// Groups a labeled corpus into per-query weak/strong pairs.
///
/// Each query needs exactly one all-weak and one all-strong trace of equal
/// length with every step labeled. Pairs come out sorted by query id.
pub fn pair_corpus(traces: &[TraceState]) -> Result<Vec<ReplayPair>, EvalError> {
    let mut by_query: BTreeMap<&str, (Option<&TraceState>, Option<&TraceState>)> = BTreeMap::new();
    for t in traces {
        let origin = match t.steps().first() {
            Some(s) if t.steps().iter().all(|x| x.origin == s.origin) => s.origin,
            _ => {
                return Err(EvalError::Invalid(format!(
                    "query '{}': replay traces must be nonempty and single-origin",
                    t.query_id
                )))
            }
        };
        if t.steps().iter().any(|s| s.truth.is_none()) {
            return Err(EvalError::Invalid(format!("query '{}': unlabeled step", t.query_id)));
        }
        let slot = by_query.entry(&t.query_id).or_default();
        let side = if origin == Origin::Weak { &mut slot.0 } else { &mut slot.1 };
        if side.replace(t).is_some() {
            return Err(EvalError::Invalid(format!("query '{}': duplicate {origin:?} trace", t.query_id)));
        }
    }
    by_query
        .into_iter()
        .map(|(q, pair)| match pair {
            (Some(w), Some(s)) if w.steps().len() == s.steps().len() => Ok(ReplayPair {
                query_id: q.to_string(),
                weak: w.clone(),
                strong: s.clone(),
            }),
            (Some(_), Some(_)) => Err(EvalError::Invalid(format!("query '{q}': step counts differ"))),
            _ => Err(EvalError::Invalid(format!("query '{q}': needs both a weak and a strong trace"))),
        })
        .collect()
}

/// Replays one routed episode over recorded steps.
///
/// Step `t` proposes the weak trace's step `t`; a regeneration swaps in the
/// strong trace's step `t`. The query counts as solved iff every accepted
/// step is labeled correct.
pub fn replay_episode<P: StepPolicy + ?Sized>(policy: &mut P, pair: &ReplayPair) -> Result<Outcome, SimError> {
    let mut trace = TraceState::with_max_steps(pair.query_id.clone(), pair.weak.max_steps());
    let mut ledger = CostLedger::default();
    for (weak, strong) in pair.weak.steps().iter().zip(pair.strong.steps()) {
        ledger.charge_weak(weak.token_count);
        trace.push(weak.clone())?;
        let feats = trace.aggregate_features()?;
        if policy.decide(&feats, &trace)? == RoutingAction::Regenerate {
            ledger.charge_strong(strong.token_count);
            trace.replace_last(strong.clone());
            let feats = trace.aggregate_features()?;
            policy.observe_regenerated(&feats, &trace);
        }
    }
    trace.terminate();
    Ok(Outcome {
        correct: trace.all_correct() == Some(true),
        strong_tokens: ledger.strong_tokens,
        regenerations: ledger.regenerate_count,
        steps: trace.step_index(),
    })
}

/// Where a router is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Bench<'a> {
    Sim { env: &'a EnvConfig, episodes: u64, seed: SeedTree },
    /// `seed` only feeds stochastic policies.
    Replay { pairs: &'a [ReplayPair], seed: SeedTree },
}

impl Bench<'_> {
    pub fn evaluate(&self, router: &dyn Router, control: f64) -> Result<Evaluation, EvalError> {
        match *self {
            Bench::Sim { env, episodes, seed } => Ok(evaluate(router, env, control, episodes, seed)?),
            Bench::Replay { pairs, seed } => {
                let outcomes = pairs
                    .iter()
                    .enumerate()
                    .map(|(i, pair)| {
                        let mut session = router.session(seed.index(i as u64).named("policy"));
                        replay_episode(session.as_mut(), pair)
                    })
                    .collect::<Result<_, _>>()?;
                Ok(Evaluation { label: router.label(), control, outcomes })
            }
        }
    }

    pub fn run_curve(&self, routers: &[(f64, &dyn Router)]) -> Result<CurveRun, EvalError> {
        let weak = self.evaluate(&AlwaysContinue, 0.0)?;
        let strong = self.evaluate(&AlwaysRegenerate, 1.0)?;
        let points = routers
            .iter()
            .map(|&(control, r)| self.evaluate(r, control))
            .collect::<Result<_, _>>()?;
        Ok(CurveRun { weak, strong, points })
    }
}

/// A router family's sweep plus the two endpoint runs, all on the same seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRun {
    pub weak: Evaluation,
    pub strong: Evaluation,
    pub points: Vec<Evaluation>,
}

impl CurveRun {
    pub fn curve(&self) -> TradeoffCurve {
        self.curve_weighted(None)
    }

    fn curve_weighted(&self, counts: Option<&[u32]>) -> TradeoffCurve {
        let (r_weak, _) = self.weak.weighted(counts);
        let (r_strong, strong_tokens) = self.strong.weighted(counts);
        let points = self
            .points
            .iter()
            .map(|ev| {
                let (accuracy, tokens) = ev.weighted(counts);
                SweepPoint {
                    control: ev.control,
                    mean_strong_tokens: tokens,
                    normalized_cost: if strong_tokens > 0.0 { tokens / strong_tokens } else { 0.0 },
                    accuracy,
                    n_queries: ev.episodes() as u64,
                }
            })
            .collect();
        TradeoffCurve::new(points, r_weak, r_strong, strong_tokens)
    }

    fn episodes(&self) -> usize {
        self.weak.episodes()
    }

    fn check_matched(&self, other: Option<&CurveRun>) -> Result<(), EvalError> {
        let n = self.episodes();
        let all = std::iter::once(&self.strong)
            .chain(&self.points)
            .chain(other.into_iter().flat_map(|o| std::iter::once(&o.weak).chain(&o.points)));
        for ev in all {
            if ev.episodes() != n {
                return Err(EvalError::Invalid(format!(
                    "'{}' has {} episodes, expected {n}",
                    ev.label,
                    ev.episodes()
                )));
            }
        }
        if n == 0 {
            return Err(EvalError::Invalid("no episodes".into()));
        }
        Ok(())
    }
}

/// Weak-only and strong-only reference runs.
pub fn endpoints(env: &EnvConfig, episodes: u64, seed: SeedTree) -> Result<(Evaluation, Evaluation), SimError> {
    Ok((
        evaluate(&AlwaysContinue, env, 0.0, episodes, seed)?,
        evaluate(&AlwaysRegenerate, env, 1.0, episodes, seed)?,
    ))
}

/// Evaluates one router per control value and attaches the endpoints.
pub fn run_curve(
    routers: &[(f64, &dyn Router)],
    env: &EnvConfig,
    episodes: u64,
    seed: SeedTree,
) -> Result<CurveRun, EvalError> {
    Bench::Sim { env, episodes, seed }.run_curve(routers)
}

/// Threshold ladder sweep; `takeover` selects the one-step-takeover variant.
pub fn sweep_threshold(
    env: &EnvConfig,
    ladder: &[f64],
    episodes: u64,
    seed: SeedTree,
    takeover: bool,
) -> Result<CurveRun, EvalError> {
    if let Some(k) = ladder.iter().find(|k| !(0.0..=1.0).contains(*k)) {
        return Err(EvalError::Invalid(format!("threshold {k} outside [0, 1]")));
    }
    let routers: Vec<ThresholdPolicy> = ladder
        .iter()
        .map(|&k| {
            if takeover {
                ThresholdPolicy::one_step_takeover(k)
            } else {
                ThresholdPolicy::new(k)
            }
        })
        .collect();
    let refs: Vec<(f64, &dyn Router)> = routers.iter().map(|r| (r.k, r as &dyn Router)).collect();
    run_curve(&refs, env, episodes, seed)
}

/// Geometric ladder of `n` values from `lo` to `hi` inclusive.
pub fn geometric_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

fn check_lambdas(lambdas: &[f64]) -> Result<(), EvalError> {
    match lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        Some(l) => Err(EvalError::Invalid(format!("lambda {l} must be finite and >= 0"))),
        None => Ok(()),
    }
}

/// Trains one aggregate-feature policy per lambda and evaluates it greedily.
pub fn sweep_lambda_agg(
    env: &EnvConfig,
    lambdas: &[f64],
    train: &TrainConfig,
    episodes: u64,
    seed: SeedTree,
) -> Result<(CurveRun, Vec<TrainRun>), EvalError> {
    check_lambdas(lambdas)?;
    let mut runs = Vec::with_capacity(lambdas.len());
    let mut routers = Vec::with_capacity(lambdas.len());
    for (i, &lambda) in lambdas.iter().enumerate() {
        let cfg = TrainConfig { lambda, ..*train };
        let run = train_agg(env, &cfg, seed.named("train").index(i as u64))?;
        routers.push(
            AggRouter::new(run.net.clone(), ActionMode::Greedy).with_label(format!("agg(lambda={lambda})")),
        );
        runs.push(run);
    }
    let refs: Vec<(f64, &dyn Router)> =
        lambdas.iter().zip(&routers).map(|(&l, r)| (l, r as &dyn Router)).collect();
    Ok((run_curve(&refs, env, episodes, seed)?, runs))
}

/// Spec with the environment's known accuracies and mean regeneration cost.
pub fn pomdp_spec_for(env: &EnvConfig, lambda: f64) -> PomdpSpec {
    let mut spec = PomdpSpec::new(env.p_weak, env.p_strong, lambda, env.expected_strong_tokens());
    spec.max_steps = env.max_steps;
    spec
}

/// Solves one belief-space policy per lambda and evaluates it.
pub fn sweep_lambda_pomdp(
    env: &EnvConfig,
    model: Arc<ObservationModel>,
    lambdas: &[f64],
    opts: &SolveOptions,
    trigger: RecomputeTrigger,
    episodes: u64,
    seed: SeedTree,
) -> Result<(CurveRun, Vec<PomdpRouter>), EvalError> {
    check_lambdas(lambdas)?;
    let routers = lambdas
        .iter()
        .map(|&lambda| {
            let spec = pomdp_spec_for(env, lambda);
            let policy = solve(&spec, &model, &Belief::initial(), opts)?;
            Ok(PomdpRouter::new(spec, model.clone(), Arc::new(policy), trigger))
        })
        .collect::<Result<Vec<_>, PomdpError>>()?;
    let refs: Vec<(f64, &dyn Router)> =
        lambdas.iter().zip(&routers).map(|(&l, r)| (l, r as &dyn Router)).collect();
    let run = run_curve(&refs, env, episodes, seed)?;
    Ok((run, routers))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    pub estimate: f64,
    pub se: f64,
    /// Resamples on which the statistic was defined.
    pub resamples: usize,
}

impl BootstrapEstimate {
    /// Estimate in standard errors.
    pub fn z(&self) -> f64 {
        self.estimate / self.se
    }
}

fn resample_counts(n: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

fn summarize(estimate: f64, draws: &[f64]) -> BootstrapEstimate {
    let m = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / m;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    BootstrapEstimate { estimate, se: var.sqrt(), resamples: draws.len() }
}

/// Bootstrap standard error of a curve statistic, resampling queries.
pub fn bootstrap<F>(run: &CurveRun, stat: F, resamples: usize, seed: SeedTree) -> Result<BootstrapEstimate, EvalError>
where
    F: Fn(&TradeoffCurve) -> Result<f64, MetricError>,
{
    run.check_matched(None)?;
    let estimate = stat(&run.curve())?;
    let mut rng = seed.rng();
    let draws: Vec<f64> = (0..resamples)
        .filter_map(|_| {
            let c = resample_counts(run.episodes(), &mut rng);
            stat(&run.curve_weighted(Some(&c))).ok().filter(|v| v.is_finite())
        })
        .collect();
    Ok(summarize(estimate, &draws))
}

/// Paired bootstrap of `stat(a) - stat(b)` over seed-matched runs.
///
/// The same query resample is applied to both families and their endpoints.
pub fn paired_bootstrap<F>(
    a: &CurveRun,
    b: &CurveRun,
    stat: F,
    resamples: usize,
    seed: SeedTree,
) -> Result<BootstrapEstimate, EvalError>
where
    F: Fn(&TradeoffCurve) -> Result<f64, MetricError>,
{
    a.check_matched(Some(b))?;
    let estimate = stat(&a.curve())? - stat(&b.curve())?;
    let mut rng = seed.rng();
    let draws: Vec<f64> = (0..resamples)
        .filter_map(|_| {
            let c = resample_counts(a.episodes(), &mut rng);
            let da = stat(&a.curve_weighted(Some(&c))).ok()?;
            let db = stat(&b.curve_weighted(Some(&c))).ok()?;
            Some(da - db).filter(|v| v.is_finite())
        })
        .collect();
    Ok(summarize(estimate, &draws))
}

/// Per-step `(score, outcome class)` labels for the binned-classifier baseline.
///
/// Episodes run weak-only; at each step a regeneration of the proposal is
/// drawn off-path to decide whether the expensive generator would have fixed it.
pub fn automix_calibration(
    env: &EnvConfig,
    episodes: u64,
    seed: SeedTree,
) -> Result<Vec<(f64, OutcomeClass)>, SimError> {
    let mut out = Vec::new();
    for e in 0..episodes {
        let ep = seed.index(e);
        let r = run_episode(&mut AlwaysContinue, env, 0.0, ep.named("env"))?;
        let mut probe = ep.named("probe").rng();
        for (step, class) in r.trace.steps().iter().zip(&r.latent_path) {
            let label = match class {
                LatentClass::S0 => OutcomeClass::SolvableByWeak,
                _ if latent_step(*class, RoutingAction::Regenerate, env, &mut probe)? == LatentClass::S0 => {
                    OutcomeClass::SolvableOnlyByStrong
                }
                _ => OutcomeClass::UnsolvableByBoth,
            };
            out.push((step.score, label));
        }
    }
    Ok(out)
}
