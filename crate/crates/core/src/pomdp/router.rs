//! Solving the routing POMDP and acting on it.
//!
//! A decision is taken on the belief over the candidate step's class. The
//! solver folds a regeneration and the next cheap proposal into one
//! transition, so both actions end at the next proposal's observation.

use super::pbvi::{self, AlphaVector, DiscretePomdp};
use super::{update_with_likelihood, Belief, ObservationModel, PomdpError, PomdpSpec};
use crate::policy::{PolicyError, Router, StepPolicy};
use crate::seed::SeedTree;
use crate::trace::{AggFeatures, RoutingAction, TraceState};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// When the belief is consulted; otherwise the step is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecomputeTrigger {
    /// S2 mass relative to the largest class mass lies in `[lo, hi]`.
    S2Ratio { lo: f64, hi: f64 },
    Always,
}

impl Default for RecomputeTrigger {
    fn default() -> Self {
        RecomputeTrigger::S2Ratio { lo: 0.35, hi: 0.40 }
    }
}

impl RecomputeTrigger {
    pub fn fires(&self, belief: &Belief) -> bool {
        match *self {
            RecomputeTrigger::Always => true,
            RecomputeTrigger::S2Ratio { lo, hi } => (lo..=hi).contains(&belief.s2_ratio()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolveMode {
    /// One vector set per remaining-step count up to `max_steps`.
    #[default]
    Finite,
    /// A single set, iterated until the belief-set values settle.
    Stationary { max_iterations: usize, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Observation cells per axis.
    pub obs_grid: usize,
    /// Resolution of the simplex lattice added to the belief set.
    pub belief_grid: usize,
    pub reach_depth: usize,
    pub max_beliefs: usize,
    /// Vectors within this value of a kept one at their belief are dropped.
    pub prune_epsilon: f64,
    pub mode: SolveMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            obs_grid: 8,
            belief_grid: 20,
            reach_depth: 1,
            max_beliefs: 500,
            prune_epsilon: 1e-7,
            mode: SolveMode::Finite,
        }
    }
}

/// The three-state decision model over discretized observations.
///
/// `cells[class][o]` are the per-class observation cell probabilities.
pub fn routing_pomdp(spec: &PomdpSpec, cells: &[Vec<f64>]) -> DiscretePomdp {
    let stay = 1.0 - spec.termination_prob_per_step;
    let tau = spec.termination_prob_per_step;
    let cont = spec.live_matrix(RoutingAction::Continue);
    let regen = spec.live_matrix(RoutingAction::Regenerate);
    let cost = spec.regenerate_cost();
    let r = spec.task_reward;

    let mut transition = vec![0.0; 2 * 9];
    for s in 0..3 {
        for s2 in 0..3 {
            transition[s * 3 + s2] = stay * cont[s][s2];
            transition[9 + s * 3 + s2] = stay * (0..3).map(|m| regen[s][m] * cont[m][s2]).sum::<f64>();
        }
    }
    let s0 = |s: usize| if s == 0 { 1.0 } else { 0.0 };
    let mut reward = vec![0.0; 6];
    let mut final_reward = vec![0.0; 6];
    for s in 0..3 {
        reward[s] = tau * r * s0(s);
        reward[3 + s] = -cost + tau * r * regen[s][0];
        final_reward[s] = r * s0(s);
        final_reward[3 + s] = -cost + r * regen[s][0];
    }
    let n_obs = cells[0].len();
    let mut observation = Vec::with_capacity(2 * 3 * n_obs);
    for _ in 0..2 {
        for c in cells.iter().take(3) {
            observation.extend_from_slice(c);
        }
    }
    DiscretePomdp {
        n_states: 3,
        n_actions: 2,
        n_obs,
        transition,
        observation,
        reward,
        final_reward,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingAlpha {
    pub values: [f64; 3],
    pub action: RoutingAction,
}

/// Piecewise-linear value function with one vector set per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPolicy {
    /// Finite mode: index `h - 1` holds `h` remaining steps. Stationary: one set.
    pub stages: Vec<Vec<RoutingAlpha>>,
    pub stationary: bool,
    /// The stationary solve hit its iteration cap before settling.
    pub budget_exceeded: bool,
    pub iterations: usize,
}

impl AlphaPolicy {
    fn from_sets(sets: Vec<Vec<AlphaVector>>, stationary: bool, budget_exceeded: bool, iterations: usize) -> Self {
        let stages = sets
            .into_iter()
            .map(|set| {
                set.into_iter()
                    .map(|v| RoutingAlpha {
                        values: [v.values[0], v.values[1], v.values[2]],
                        action: RoutingAction::from_index(v.action),
                    })
                    .collect()
            })
            .collect();
        Self { stages, stationary, budget_exceeded, iterations }
    }

    /// Vector set used when deciding step `step_index` (1-based).
    pub fn stage(&self, step_index: u32) -> &[RoutingAlpha] {
        if self.stationary {
            return &self.stages[0];
        }
        let n = self.stages.len();
        let to_go = (n as i64 - i64::from(step_index) + 1).clamp(1, n as i64) as usize;
        &self.stages[to_go - 1]
    }

    fn action_values(&self, belief: &Belief) -> [f64; 2] {
        let mut best = [f64::NEG_INFINITY; 2];
        for v in self.stage(belief.step_index) {
            let val = pbvi::dot(&v.values, &belief.probs);
            let a = v.action.index();
            best[a] = best[a].max(val);
        }
        best
    }

    pub fn value(&self, belief: &Belief) -> f64 {
        let [c, r] = self.action_values(belief);
        c.max(r)
    }

    /// Maximizing action; ties go to Continue.
    pub fn action(&self, belief: &Belief) -> RoutingAction {
        let [c, r] = self.action_values(belief);
        if r > c + 1e-12 {
            RoutingAction::Regenerate
        } else {
            RoutingAction::Continue
        }
    }
}

fn belief_set(pomdp: &DiscretePomdp, init: &[f64; 3], opts: &SolveOptions) -> Vec<Vec<f64>> {
    let mut beliefs = pbvi::reachable_beliefs(pomdp, init, opts.reach_depth, opts.max_beliefs);
    if opts.belief_grid > 0 {
        beliefs.extend(pbvi::simplex_grid(3, opts.belief_grid));
    }
    beliefs
}

/// Solves with precomputed observation cell probabilities.
pub fn solve_with_cells(
    spec: &PomdpSpec,
    cells: &[Vec<f64>],
    init: &Belief,
    opts: &SolveOptions,
) -> Result<AlphaPolicy, PomdpError> {
    spec.validate()?;
    init.validate()?;
    let pomdp = routing_pomdp(spec, cells);
    let beliefs = belief_set(&pomdp, &init.probs, opts);
    Ok(match opts.mode {
        SolveMode::Finite => {
            let sets = pbvi::solve_finite(&pomdp, &beliefs, spec.max_steps as usize, opts.prune_epsilon);
            AlphaPolicy::from_sets(sets, false, false, spec.max_steps as usize)
        }
        SolveMode::Stationary { max_iterations, tolerance } => {
            let sol = pbvi::solve_stationary(&pomdp, &beliefs, max_iterations, tolerance, opts.prune_epsilon)?;
            AlphaPolicy::from_sets(vec![sol.alphas], true, !sol.converged, sol.iterations)
        }
    })
}

/// Point-based solve over the beliefs reachable from `init` plus a simplex lattice.
pub fn solve(
    spec: &PomdpSpec,
    model: &ObservationModel,
    init: &Belief,
    opts: &SolveOptions,
) -> Result<AlphaPolicy, PomdpError> {
    solve_with_cells(spec, &model.discretize(opts.obs_grid), init, opts)
}

/// Re-solves from `belief` and returns the action there.
pub fn fresh_solve_action(
    belief: &Belief,
    spec: &PomdpSpec,
    cells: &[Vec<f64>],
    opts: &SolveOptions,
) -> Result<RoutingAction, PomdpError> {
    Ok(solve_with_cells(spec, cells, belief, opts)?.action(belief))
}

/// Belief-lattice action table, one row per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    pub resolution: usize,
    pub stationary: bool,
    /// Lattice coordinates `(k0, k1, k2)` with `k0 + k1 + k2 = resolution`.
    pub cells: Vec<[u32; 3]>,
    /// Per stage, one `C`/`R` character per cell.
    pub actions: Vec<String>,
    pub budget_exceeded: bool,
}

impl LookupTable {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Lattice point nearest to `probs` (largest-remainder rounding).
    pub fn nearest(probs: &[f64; 3], resolution: usize) -> [u32; 3] {
        let r = resolution as f64;
        let scaled = probs.map(|p| p * r);
        let mut k = scaled.map(|x| x.floor() as u32);
        let short = resolution as i64 - k.iter().map(|&x| i64::from(x)).sum::<i64>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())));
        for &i in order.iter().take(short.max(0) as usize) {
            k[i] += 1;
        }
        k
    }

    pub fn cell_index(k: [u32; 3], resolution: usize) -> usize {
        let (k0, k1) = (k[0] as usize, k[1] as usize);
        k0 * (resolution + 1) - k0 * k0.saturating_sub(1) / 2 + k1
    }

    pub fn lookup(&self, belief: &Belief) -> RoutingAction {
        let idx = Self::cell_index(Self::nearest(&belief.probs, self.resolution), self.resolution);
        let stage = if self.stationary {
            0
        } else {
            let n = self.actions.len() as i64;
            (n - i64::from(belief.step_index) + 1).clamp(1, n) as usize - 1
        };
        if self.actions[stage].as_bytes()[idx] == b'R' {
            RoutingAction::Regenerate
        } else {
            RoutingAction::Continue
        }
    }
}

/// Tabulates the shared solve's action at every lattice point.
///
/// One solve covers the whole table: its belief set contains every cell.
pub fn precompute_lookup(
    spec: &PomdpSpec,
    model: &ObservationModel,
    resolution: usize,
    opts: &SolveOptions,
) -> Result<LookupTable, PomdpError> {
    if resolution < 2 {
        return Err(PomdpError::InvalidSpec(format!("grid resolution {resolution} < 2")));
    }
    let opts = SolveOptions { belief_grid: resolution, ..*opts };
    let policy = solve(spec, model, &Belief::initial(), &opts)?;
    Ok(table_from_policy(&policy, resolution))
}

pub fn table_from_policy(policy: &AlphaPolicy, resolution: usize) -> LookupTable {
    let grid = pbvi::simplex_grid(3, resolution);
    let cells: Vec<[u32; 3]> = grid
        .iter()
        .map(|b| b.iter().map(|p| (p * resolution as f64).round() as u32).collect::<Vec<_>>())
        .map(|v| [v[0], v[1], v[2]])
        .collect();
    let n_stages = policy.stages.len();
    let actions = (0..n_stages)
        .map(|h| {
            // Stage h + 1 to go corresponds to step n_stages - h.
            let step = (n_stages - h) as u32;
            grid.iter()
                .map(|b| {
                    let belief = Belief { probs: [b[0], b[1], b[2]], step_index: step };
                    match policy.action(&belief) {
                        RoutingAction::Continue => 'C',
                        RoutingAction::Regenerate => 'R',
                    }
                })
                .collect()
        })
        .collect();
    LookupTable {
        resolution,
        stationary: policy.stationary,
        cells,
        actions,
        budget_exceeded: policy.budget_exceeded,
    }
}

/// Consults the policy (or the table) when the trigger fires; otherwise Continue.
pub fn decide_pomdp(
    belief: &Belief,
    policy: &AlphaPolicy,
    trigger: &RecomputeTrigger,
    cache: Option<&LookupTable>,
) -> RoutingAction {
    if !trigger.fires(belief) {
        return RoutingAction::Continue;
    }
    match cache {
        Some(table) => table.lookup(belief),
        None => policy.action(belief),
    }
}

/// Belief-filtering router over a solved policy.
#[derive(Debug, Clone)]
pub struct PomdpRouter {
    pub spec: PomdpSpec,
    pub model: Arc<ObservationModel>,
    pub policy: Arc<AlphaPolicy>,
    pub table: Option<Arc<LookupTable>>,
    pub trigger: RecomputeTrigger,
}

impl PomdpRouter {
    pub fn new(
        spec: PomdpSpec,
        model: Arc<ObservationModel>,
        policy: Arc<AlphaPolicy>,
        trigger: RecomputeTrigger,
    ) -> Self {
        Self { spec, model, policy, table: None, trigger }
    }
}

struct PomdpSession<'a> {
    router: &'a PomdpRouter,
    committed: Belief,
    pending: Option<Belief>,
}

fn to_policy_error(e: PomdpError) -> PolicyError {
    PolicyError(e.to_string())
}

impl StepPolicy for PomdpSession<'_> {
    fn decide(&mut self, feats: &AggFeatures, _: &TraceState) -> Result<RoutingAction, PolicyError> {
        let r = self.router;
        let lik = r.model.likelihoods(feats.score_pair()).map_err(to_policy_error)?;
        let proposed = update_with_likelihood(&self.committed, RoutingAction::Continue, lik, &r.spec)
            .map_err(to_policy_error)?;
        let action = decide_pomdp(&proposed, &r.policy, &r.trigger, r.table.as_deref());
        match action {
            RoutingAction::Continue => self.committed = proposed,
            RoutingAction::Regenerate => {
                self.committed = proposed;
                self.pending = Some(proposed);
            }
        }
        Ok(action)
    }

    fn observe_regenerated(&mut self, feats: &AggFeatures, _: &TraceState) {
        let Some(proposed) = self.pending.take() else { return };
        let r = self.router;
        let Ok(lik) = r.model.likelihoods(feats.score_pair()) else { return };
        if let Ok(mut b) = update_with_likelihood(&proposed, RoutingAction::Regenerate, lik, &r.spec) {
            // The replacement occupies the same step.
            b.step_index = proposed.step_index;
            self.committed = b;
        }
    }
}

impl Router for PomdpRouter {
    fn label(&self) -> String {
        format!("pomdp(lambda={})", self.spec.lambda)
    }

    fn session<'a>(&'a self, _: SeedTree) -> Box<dyn StepPolicy + 'a> {
        Box::new(PomdpSession {
            router: self,
            committed: Belief::initial(),
            pending: None,
        })
    }
}
