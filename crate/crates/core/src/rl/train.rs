use super::net::{log_softmax, PolicyNet, DEFAULT_HIDDEN, INPUT_DIM};
use super::ppo::{compute_gae, ppo_update, Adam, Batch, PpoConfig};
use super::RlError;
use crate::policy::{PolicyError, Router, StepPolicy};
use crate::seed::SeedTree;
use crate::sim::{run_episode, EnvConfig, SimError};
use crate::trace::{AggFeatures, RoutingAction, TraceState};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Price of one expensive-generator token in units of task reward.
    pub lambda: f64,
    pub hidden: [usize; 2],
    pub ppo: PpoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            hidden: DEFAULT_HIDDEN,
            ppo: PpoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(RlError::InvalidConfig(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.hidden.contains(&0) {
            return Err(RlError::InvalidConfig("hidden widths must be positive".into()));
        }
        self.ppo.validate()
    }
}

/// How a trained network turns logits into actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Arg-max; ties go to Continue.
    #[default]
    Greedy,
    Sampled,
}

struct Decision {
    input: [f64; INPUT_DIM],
    action: RoutingAction,
    log_prob: f64,
    value: f64,
    strong_tokens: u32,
}

struct SamplingSession<'a> {
    net: &'a PolicyNet,
    rng: crate::seed::Rng,
    decisions: Vec<Decision>,
}

impl StepPolicy for SamplingSession<'_> {
    fn decide(&mut self, feats: &AggFeatures, _: &TraceState) -> Result<RoutingAction, PolicyError> {
        let input = self.net.scale.encode(feats).map_err(|e| PolicyError(e.to_string()))?;
        let (logits, value) = self.net.forward_encoded(&input);
        let lp = log_softmax(logits);
        let action = if self.rng.random::<f64>() < lp[1].exp() {
            RoutingAction::Regenerate
        } else {
            RoutingAction::Continue
        };
        self.decisions.push(Decision {
            input,
            action,
            log_prob: lp[action.index()],
            value,
            strong_tokens: 0,
        });
        Ok(action)
    }

    fn observe_regenerated(&mut self, _: &AggFeatures, trace: &TraceState) {
        if let (Some(d), Some(step)) = (self.decisions.last_mut(), trace.last()) {
            d.strong_tokens = step.token_count;
        }
    }
}

/// One iteration's worth of on-policy experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollouts {
    pub batch: Batch,
    pub stats: IterationStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_return: f64,
    pub accuracy: f64,
    pub mean_strong_tokens: f64,
    pub regen_rate: f64,
}

fn sim_err(e: SimError) -> RlError {
    RlError::Sim(e.to_string())
}

/// Runs `episodes` sampled episodes and turns them into a PPO batch.
///
/// Step rewards are `-lambda * tokens` on regenerated steps, with the task
/// reward added on the last decision.
pub fn collect_rollouts(
    net: &PolicyNet,
    env: &EnvConfig,
    lambda: f64,
    ppo: &PpoConfig,
    episodes: usize,
    seed: SeedTree,
) -> Result<Rollouts, RlError> {
    let mut batch = Batch::default();
    let (mut ret, mut correct, mut strong, mut regens) = (0.0, 0u64, 0u64, 0u64);
    for e in 0..episodes {
        let ep = seed.index(e as u64);
        let mut session = SamplingSession {
            net,
            rng: ep.named("policy").rng(),
            decisions: Vec::new(),
        };
        let result = run_episode(&mut session, env, lambda, ep.named("env")).map_err(sim_err)?;
        let decisions = session.decisions;
        let mut rewards: Vec<f64> = decisions
            .iter()
            .map(|d| -lambda * f64::from(d.strong_tokens))
            .collect();
        if let Some(last) = rewards.last_mut() {
            *last += f64::from(result.final_reward);
        }
        let values: Vec<f64> = decisions.iter().map(|d| d.value).collect();
        let adv = compute_gae(&rewards, &values, 0.0, ppo.gae_lambda, ppo.discount)?;
        for ((d, a), v) in decisions.iter().zip(&adv).zip(&values) {
            batch.inputs.push(d.input);
            batch.actions.push(d.action);
            batch.old_log_probs.push(d.log_prob);
            batch.advantages.push(*a);
            batch.returns.push(a + v);
        }
        ret += result.rl_return;
        correct += u64::from(result.final_reward);
        strong += result.ledger.strong_tokens;
        regens += u64::from(result.ledger.regenerate_count);
    }
    let n = episodes.max(1) as f64;
    let stats = IterationStats {
        iteration: 0,
        mean_return: ret / n,
        accuracy: correct as f64 / n,
        mean_strong_tokens: strong as f64 / n,
        regen_rate: regens as f64 / batch.len().max(1) as f64,
    };
    Ok(Rollouts { batch, stats })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub net: PolicyNet,
    pub history: Vec<IterationStats>,
}

/// Trains the aggregate-feature policy for one `lambda`.
pub fn train_agg(env: &EnvConfig, cfg: &TrainConfig, seed: SeedTree) -> Result<TrainRun, RlError> {
    cfg.validate()?;
    env.validate().map_err(sim_err)?;
    let mut net = PolicyNet::init(cfg.hidden, seed.named("init"));
    net.scale.max_steps = env.max_steps;
    let mut adam = Adam::new(net.n_params(), cfg.ppo.adam);
    let mut history = Vec::with_capacity(cfg.ppo.iterations);
    for it in 0..cfg.ppo.iterations {
        let roll = collect_rollouts(
            &net,
            env,
            cfg.lambda,
            &cfg.ppo,
            cfg.ppo.rollout_episodes,
            seed.named("rollout").index(it as u64),
        )?;
        ppo_update(&mut net, &mut adam, &roll.batch, &cfg.ppo, seed.named("minibatch").index(it as u64))?;
        history.push(IterationStats { iteration: it, ..roll.stats });
    }
    Ok(TrainRun { net, history })
}

pub fn write_history_csv<W: Write>(writer: W, history: &[IterationStats]) -> Result<(), RlError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in history {
        w.serialize(row).map_err(|e| RlError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| RlError::Io(e.to_string()))
}

/// Router backed by a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct AggRouter {
    pub net: PolicyNet,
    pub mode: ActionMode,
    pub label: String,
}

impl AggRouter {
    pub fn new(net: PolicyNet, mode: ActionMode) -> Self {
        Self { net, mode, label: "agg".into() }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn decide(&self, feats: &AggFeatures, rng: &mut impl Rng) -> Result<RoutingAction, RlError> {
        let (logits, _) = self.net.forward(feats)?;
        Ok(match self.mode {
            ActionMode::Greedy if logits[1] > logits[0] => RoutingAction::Regenerate,
            ActionMode::Greedy => RoutingAction::Continue,
            ActionMode::Sampled if rng.random::<f64>() < log_softmax(logits)[1].exp() => {
                RoutingAction::Regenerate
            }
            ActionMode::Sampled => RoutingAction::Continue,
        })
    }
}

struct AggSession<'a> {
    router: &'a AggRouter,
    rng: crate::seed::Rng,
}

impl StepPolicy for AggSession<'_> {
    fn decide(&mut self, feats: &AggFeatures, _: &TraceState) -> Result<RoutingAction, PolicyError> {
        self.router
            .decide(feats, &mut self.rng)
            .map_err(|e| PolicyError(e.to_string()))
    }
}

impl Router for AggRouter {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn session<'a>(&'a self, seed: SeedTree) -> Box<dyn StepPolicy + 'a> {
        Box::new(AggSession { router: self, rng: seed.rng() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(lambda: f64, iterations: usize) -> TrainConfig {
        TrainConfig {
            lambda,
            hidden: [16, 16],
            ppo: PpoConfig {
                iterations,
                rollout_episodes: 32,
                learning_rate: 3e-3,
                ..PpoConfig::default()
            },
        }
    }

    fn greedy_eval(net: &PolicyNet, env: &EnvConfig, episodes: u64) -> (f64, f64) {
        let router = AggRouter::new(net.clone(), ActionMode::Greedy);
        let (mut correct, mut regen, mut steps) = (0u64, 0u64, 0u64);
        for e in 0..episodes {
            let seed = SeedTree::new(99).index(e);
            let mut s = router.session(seed.named("policy"));
            let r = run_episode(s.as_mut(), env, 0.0, seed.named("env")).unwrap();
            correct += u64::from(r.final_reward);
            regen += u64::from(r.ledger.regenerate_count);
            steps += u64::from(r.steps());
        }
        (correct as f64 / episodes as f64, regen as f64 / steps as f64)
    }

    #[test]
    fn training_is_deterministic() {
        let env = EnvConfig::canonical();
        let a = train_agg(&env, &small(1e-3, 2), SeedTree::new(5)).unwrap();
        let b = train_agg(&env, &small(1e-3, 2), SeedTree::new(5)).unwrap();
        assert_eq!(a, b);
        let c = train_agg(&env, &small(1e-3, 2), SeedTree::new(6)).unwrap();
        assert_ne!(a.net.params, c.net.params);
    }

    #[test]
    fn rollout_returns_match_episode_returns() {
        let env = EnvConfig::canonical();
        let net = PolicyNet::init([8, 8], SeedTree::new(1));
        let ppo = PpoConfig { gae_lambda: 1.0, ..PpoConfig::default() };
        let roll = collect_rollouts(&net, &env, 2e-3, &ppo, 5, SeedTree::new(2)).unwrap();
        // With lambda_gae = 1 the first return of each episode is its total return.
        let firsts: Vec<usize> = roll
            .batch
            .inputs
            .iter()
            .enumerate()
            .filter(|(_, x)| x[3] * f64::from(env.max_steps) < 1.5)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(firsts.len(), 5);
        let total: f64 = firsts.iter().map(|&i| roll.batch.returns[i]).sum();
        assert!((total / 5.0 - roll.stats.mean_return).abs() < 1e-9);
    }

    #[test]
    fn huge_price_stops_regeneration() {
        let env = EnvConfig::canonical();
        let run = train_agg(&env, &small(1.0, 15), SeedTree::new(7)).unwrap();
        let (_, regen) = greedy_eval(&run.net, &env, 200);
        assert!(regen < 0.01, "regen rate {regen}");
    }

    #[test]
    fn free_perfect_strong_model_is_always_used() {
        let mut env = EnvConfig::canonical();
        env.p_weak = 0.2;
        env.p_strong = 1.0;
        let run = train_agg(&env, &small(0.0, 15), SeedTree::new(8)).unwrap();
        let (acc, _) = greedy_eval(&run.net, &env, 200);
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn history_csv_has_header() {
        let rows = [IterationStats {
            iteration: 0,
            mean_return: 0.5,
            accuracy: 0.5,
            mean_strong_tokens: 10.0,
            regen_rate: 0.1,
        }];
        let mut out = Vec::new();
        write_history_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("iteration,mean_return,accuracy,mean_strong_tokens,regen_rate\n"));
    }

    #[test]
    fn rejects_bad_config() {
        let env = EnvConfig::canonical();
        let cfg = TrainConfig { lambda: -1.0, ..TrainConfig::default() };
        assert!(matches!(train_agg(&env, &cfg, SeedTree::new(0)), Err(RlError::InvalidConfig(_))));
    }
}
