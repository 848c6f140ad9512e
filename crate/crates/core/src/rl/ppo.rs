use super::net::{log_softmax, PolicyNet, INPUT_DIM};
use super::RlError;
use crate::seed::SeedTree;
use crate::trace::RoutingAction;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gae_lambda: f64,
    pub discount: f64,
    pub normalize_advantages: bool,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub rollout_episodes: usize,
    pub iterations: usize,
    pub adam: AdamConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            gae_lambda: 0.95,
            discount: 1.0,
            normalize_advantages: false,
            epochs_per_batch: 4,
            minibatch_size: 256,
            rollout_episodes: 64,
            iterations: 200,
            adam: AdamConfig::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.into()));
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs_per_batch == 0 || self.minibatch_size == 0 || self.rollout_episodes == 0 {
            return bad("epochs_per_batch, minibatch_size and rollout_episodes must be positive");
        }
        Ok(())
    }
}

/// Generalized advantage estimates for one episode.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminal_value: f64,
    gae_lambda: f64,
    discount: f64,
) -> Result<Vec<f64>, RlError> {
    if rewards.len() != values.len() {
        return Err(RlError::LengthMismatch {
            rewards: rewards.len(),
            values: values.len(),
        });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut next_value = terminal_value;
    let mut next_adv = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + discount * next_value - values[t];
        next_adv = delta + discount * gae_lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    Ok(adv)
}

/// Decisions gathered from rollouts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub actions: Vec<RoutingAction>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let n = self.len();
        if n == 0 {
            return Err(RlError::EmptyBatch);
        }
        if [self.actions.len(), self.old_log_probs.len(), self.advantages.len(), self.returns.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(RlError::InvalidConfig("batch columns differ in length".into()));
        }
        if self.old_log_probs.iter().any(|l| !l.is_finite()) {
            return Err(RlError::InvalidConfig("non-finite old log-prob".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Full PPO loss over `idx` and its gradient w.r.t. every parameter.
///
/// `loss = -mean(min(r A, clip(r) A)) + c_v mean((V - R)^2) - c_e mean(H)`.
pub fn loss_and_grad(
    net: &PolicyNet,
    batch: &Batch,
    idx: &[usize],
    advantages: &[f64],
    cfg: &PpoConfig,
) -> (LossParts, Vec<f64>) {
    let n = idx.len();
    let inv = 1.0 / n as f64;
    let mut x = Array2::zeros((n, INPUT_DIM));
    for (row, &i) in idx.iter().enumerate() {
        for c in 0..INPUT_DIM {
            x[[row, c]] = batch.inputs[i][c];
        }
    }
    let cache = net.forward_batch(x);
    let mut dlogits = Array2::zeros((n, 2));
    let mut dvalues = Array1::zeros(n);
    let mut parts = LossParts::default();
    for (row, &i) in idx.iter().enumerate() {
        let lp = log_softmax([cache.logits[[row, 0]], cache.logits[[row, 1]]]);
        let p = lp.map(f64::exp);
        let a = batch.actions[i].index();
        let adv = advantages[i];
        let ratio = (lp[a] - batch.old_log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let (surrogate, dsur_dlogp) = if ratio * adv <= clipped * adv {
            (ratio * adv, ratio * adv)
        } else {
            (clipped * adv, 0.0)
        };
        let entropy = -(p[0] * lp[0] + p[1] * lp[1]);
        let err = cache.values[row] - batch.returns[i];

        parts.policy -= surrogate * inv;
        parts.value += err * err * inv;
        parts.entropy += entropy * inv;

        for j in 0..2 {
            let onehot = if j == a { 1.0 } else { 0.0 };
            dlogits[[row, j]] = inv
                * (-dsur_dlogp * (onehot - p[j]) + cfg.entropy_coef * p[j] * (lp[j] + entropy));
        }
        dvalues[row] = inv * 2.0 * cfg.value_coef * err;
    }
    parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;
    (parts, net.backward(&cache, &dlogits, &dvalues))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Self { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub minibatches: usize,
    pub last_loss: LossParts,
}

/// Clipped-surrogate passes over a rollout batch.
///
/// On a non-finite gradient the network and optimizer are restored to their
/// state before the call.
pub fn ppo_update(
    net: &mut PolicyNet,
    adam: &mut Adam,
    batch: &Batch,
    cfg: &PpoConfig,
    seed: SeedTree,
) -> Result<UpdateStats, RlError> {
    batch.validate()?;
    let advantages = if cfg.normalize_advantages {
        let n = batch.len() as f64;
        let mean = batch.advantages.iter().sum::<f64>() / n;
        let sd = (batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        batch.advantages.iter().map(|a| (a - mean) / (sd + 1e-8)).collect()
    } else {
        batch.advantages.clone()
    };
    let snapshot = (net.params.clone(), adam.clone());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut rng = seed.rng();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs_per_batch {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let (loss, grad) = loss_and_grad(net, batch, chunk, &advantages, cfg);
            if grad.iter().any(|g| !g.is_finite()) || !loss.total.is_finite() {
                net.params = snapshot.0;
                *adam = snapshot.1;
                return Err(RlError::NonFiniteGradient);
            }
            adam.step(&mut net.params, &grad, cfg.learning_rate);
            stats.minibatches += 1;
            stats.last_loss = loss;
        }
    }
    Ok(stats)
}
