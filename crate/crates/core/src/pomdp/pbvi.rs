//! Point-based value iteration for small discrete POMDPs.
//!
//! Transitions may be substochastic; the missing mass is an absorbing,
//! zero-reward exit. Observations are emitted from the post-transition state.

use super::PomdpError;
use std::collections::{HashSet, VecDeque};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePomdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    /// `[a][s][s']`, flattened.
    pub transition: Vec<f64>,
    /// `[a][s'][o]`, flattened.
    pub observation: Vec<f64>,
    /// `[a][s]`, flattened.
    pub reward: Vec<f64>,
    /// `[a][s]` reward of the last stage of a finite-horizon problem.
    pub final_reward: Vec<f64>,
}

impl DiscretePomdp {
    #[inline]
    pub fn t(&self, a: usize, s: usize, s2: usize) -> f64 {
        self.transition[(a * self.n_states + s) * self.n_states + s2]
    }

    #[inline]
    pub fn o(&self, a: usize, s2: usize, o: usize) -> f64 {
        self.observation[(a * self.n_states + s2) * self.n_obs + o]
    }

    #[inline]
    pub fn r(&self, a: usize, s: usize) -> f64 {
        self.reward[a * self.n_states + s]
    }

    pub fn validate(&self) -> Result<(), PomdpError> {
        let (s, a, o) = (self.n_states, self.n_actions, self.n_obs);
        let bad = |m: String| Err(PomdpError::InvalidSpec(m));
        if s == 0 || a == 0 || o == 0 {
            return bad("empty state, action or observation set".into());
        }
        if self.transition.len() != a * s * s
            || self.observation.len() != a * s * o
            || self.reward.len() != a * s
            || self.final_reward.len() != a * s
        {
            return bad("array sizes do not match the dimensions".into());
        }
        for ai in 0..a {
            for si in 0..s {
                let row: f64 = (0..s).map(|s2| self.t(ai, si, s2)).sum();
                if (0..s).any(|s2| self.t(ai, si, s2) < 0.0) || row > 1.0 + 1e-9 {
                    return bad(format!("transition row ({ai}, {si}) is not substochastic"));
                }
                let obs: f64 = (0..o).map(|oi| self.o(ai, si, oi)).sum();
                if (0..o).any(|oi| self.o(ai, si, oi) < 0.0) || (obs - 1.0).abs() > 1e-9 {
                    return bad(format!("observation row ({ai}, {si}) is not a distribution"));
                }
            }
        }
        Ok(())
    }

    /// Posterior after `a` then `o`, with the probability of observing `o`.
    pub fn successor(&self, b: &[f64], a: usize, o: usize) -> Option<(Vec<f64>, f64)> {
        let mut next = vec![0.0; self.n_states];
        for (s2, p) in next.iter_mut().enumerate() {
            let pred: f64 = (0..self.n_states).map(|s| b[s] * self.t(a, s, s2)).sum();
            *p = pred * self.o(a, s2, o);
        }
        let mass: f64 = next.iter().sum();
        if mass <= 1e-300 {
            return None;
        }
        next.iter_mut().for_each(|p| *p /= mass);
        Some((next, mass))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    pub values: Vec<f64>,
    pub action: usize,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizing vector at `b`; ties go to the earlier vector.
pub fn best_at<'a>(set: &'a [AlphaVector], b: &[f64]) -> &'a AlphaVector {
    let mut best = &set[0];
    let mut best_v = dot(&best.values, b);
    for v in &set[1..] {
        let val = dot(&v.values, b);
        if val > best_v {
            best = v;
            best_v = val;
        }
    }
    best
}

pub fn value_at(set: &[AlphaVector], b: &[f64]) -> f64 {
    dot(&best_at(set, b).values, b)
}

/// Breadth-first belief expansion under every action and observation.
/// The initial belief comes first; near-duplicates are merged.
pub fn reachable_beliefs(
    pomdp: &DiscretePomdp,
    init: &[f64],
    depth: usize,
    max_beliefs: usize,
) -> Vec<Vec<f64>> {
    let key = |b: &[f64]| -> Vec<i64> { b.iter().map(|p| (p * 1e6).round() as i64).collect() };
    let mut seen = HashSet::new();
    let mut out = vec![init.to_vec()];
    seen.insert(key(init));
    let mut queue = VecDeque::from([(init.to_vec(), 0usize)]);
    while let Some((b, d)) = queue.pop_front() {
        if d == depth {
            continue;
        }
        for a in 0..pomdp.n_actions {
            for o in 0..pomdp.n_obs {
                if out.len() >= max_beliefs {
                    return out;
                }
                if let Some((next, _)) = pomdp.successor(&b, a, o) {
                    if seen.insert(key(&next)) {
                        out.push(next.clone());
                        queue.push_back((next, d + 1));
                    }
                }
            }
        }
    }
    out
}

/// Every point `k / resolution` of the probability simplex over `n` states.
pub fn simplex_grid(n: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, res: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / res as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(n, left - k, res, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, resolution, resolution, &mut Vec::new(), &mut out);
    out
}

/// `g[a][o][k][s] = Σ_s' T(s'|s,a) O(o|s',a) α_k(s')`, flattened.
fn projections(pomdp: &DiscretePomdp, next: &[AlphaVector]) -> Vec<f64> {
    let (ns, no, nk) = (pomdp.n_states, pomdp.n_obs, next.len());
    let mut g = vec![0.0; pomdp.n_actions * no * nk * ns];
    for a in 0..pomdp.n_actions {
        for o in 0..no {
            for (k, alpha) in next.iter().enumerate() {
                let base = ((a * no + o) * nk + k) * ns;
                for s in 0..ns {
                    g[base + s] = (0..ns)
                        .map(|s2| pomdp.t(a, s, s2) * pomdp.o(a, s2, o) * alpha.values[s2])
                        .sum();
                }
            }
        }
    }
    g
}

/// Point-based backup at each belief; returns one vector per belief.
///
/// With `next = None` there is no future and `final_reward` is used.
pub fn backup(
    pomdp: &DiscretePomdp,
    beliefs: &[Vec<f64>],
    next: Option<&[AlphaVector]>,
) -> Vec<AlphaVector> {
    let ns = pomdp.n_states;
    let g = next.map(|n| (projections(pomdp, n), n.len()));
    beliefs
        .iter()
        .map(|b| {
            let mut best: Option<(f64, AlphaVector)> = None;
            for a in 0..pomdp.n_actions {
                let mut alpha: Vec<f64> = match next {
                    None => pomdp.final_reward[a * ns..(a + 1) * ns].to_vec(),
                    Some(_) => pomdp.reward[a * ns..(a + 1) * ns].to_vec(),
                };
                if let Some((g, nk)) = &g {
                    for o in 0..pomdp.n_obs {
                        let block = (a * pomdp.n_obs + o) * nk * ns;
                        let mut arg = 0;
                        let mut arg_v = f64::NEG_INFINITY;
                        for k in 0..*nk {
                            let v = dot(&g[block + k * ns..block + (k + 1) * ns], b);
                            if v > arg_v {
                                arg_v = v;
                                arg = k;
                            }
                        }
                        let chosen = &g[block + arg * ns..block + (arg + 1) * ns];
                        alpha.iter_mut().zip(chosen).for_each(|(x, y)| *x += y);
                    }
                }
                let v = dot(&alpha, b);
                // Earlier actions win ties.
                if best.as_ref().is_none_or(|(bv, _)| v > bv + 1e-12) {
                    best = Some((v, AlphaVector { values: alpha, action: a }));
                }
            }
            best.expect("at least one action").1
        })
        .collect()
}

fn dedup(set: Vec<AlphaVector>) -> Vec<AlphaVector> {
    let mut seen = HashSet::new();
    set.into_iter()
        .filter(|v| {
            let mut key: Vec<u64> = v.values.iter().map(|x| x.to_bits()).collect();
            key.push(v.action as u64);
            seen.insert(key)
        })
        .collect()
}

/// Drops a belief's vector when an already kept vector is within `eps` of it
/// at that belief. With `eps = 0` only exact duplicates go.
pub fn prune(set: Vec<AlphaVector>, beliefs: &[Vec<f64>], eps: f64) -> Vec<AlphaVector> {
    let set = dedup(set);
    if eps <= 0.0 || set.len() != beliefs.len() {
        return set;
    }
    let mut kept: Vec<AlphaVector> = Vec::new();
    for (v, b) in set.into_iter().zip(beliefs) {
        let own = dot(&v.values, b);
        if !kept.iter().any(|u| dot(&u.values, b) >= own - eps) {
            kept.push(v);
        }
    }
    kept
}

/// Finite-horizon solve; element `h - 1` holds the vectors with `h` stages to go.
pub fn solve_finite(
    pomdp: &DiscretePomdp,
    beliefs: &[Vec<f64>],
    horizon: usize,
    prune_eps: f64,
) -> Vec<Vec<AlphaVector>> {
    let mut stages: Vec<Vec<AlphaVector>> = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let next = if h == 0 { None } else { Some(stages[h - 1].as_slice()) };
        let set = prune(backup(pomdp, beliefs, next), beliefs, prune_eps);
        stages.push(set);
    }
    stages
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub alphas: Vec<AlphaVector>,
    /// Value at the first belief after each iteration.
    pub value_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Value of following one action forever, per start state.
fn blind_vector(pomdp: &DiscretePomdp, a: usize) -> Result<Vec<f64>, PomdpError> {
    let ns = pomdp.n_states;
    let r = &pomdp.reward[a * ns..(a + 1) * ns];
    let mut v = r.to_vec();
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..ns)
            .map(|s| r[s] + (0..ns).map(|s2| pomdp.t(a, s, s2) * v[s2]).sum::<f64>())
            .collect();
        let delta = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-12 {
            return Ok(v);
        }
    }
    Err(PomdpError::InvalidSpec(
        "blind policy value diverges; a stationary solve needs termination mass".into(),
    ))
}

/// Infinite-horizon solve starting from the blind-policy lower bound.
///
/// At each belief the new vector replaces the old one only if it is better
/// there, so values on the belief set never decrease between iterations.
pub fn solve_stationary(
    pomdp: &DiscretePomdp,
    beliefs: &[Vec<f64>],
    max_iterations: usize,
    tolerance: f64,
    prune_eps: f64,
) -> Result<StationarySolution, PomdpError> {
    let blind: Vec<AlphaVector> = (0..pomdp.n_actions)
        .map(|a| Ok(AlphaVector { values: blind_vector(pomdp, a)?, action: a }))
        .collect::<Result<_, PomdpError>>()?;
    let mut per_belief: Vec<AlphaVector> = beliefs.iter().map(|b| best_at(&blind, b).clone()).collect();
    let mut alphas = dedup(per_belief.clone());
    let mut value_trace = vec![dot(&per_belief[0].values, &beliefs[0])];
    for it in 1..=max_iterations {
        let fresh = backup(pomdp, beliefs, Some(&alphas));
        let mut delta: f64 = 0.0;
        for ((old, new), b) in per_belief.iter_mut().zip(fresh).zip(beliefs) {
            let (vo, vn) = (dot(&old.values, b), dot(&new.values, b));
            if vn > vo {
                delta = delta.max(vn - vo);
                *old = new;
            }
        }
        alphas = prune(per_belief.clone(), beliefs, prune_eps);
        value_trace.push(dot(&per_belief[0].values, &beliefs[0]));
        if delta < tolerance {
            return Ok(StationarySolution { alphas, value_trace, iterations: it, converged: true });
        }
    }
    Ok(StationarySolution {
        alphas,
        value_trace,
        iterations: max_iterations,
        converged: false,
    })
}
