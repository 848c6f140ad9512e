use super::{emit_score, latent_step, EnvConfig, LatentClass, SimError};
use crate::policy::StepPolicy;
use crate::seed::SeedTree;
use crate::trace::{CostLedger, Origin, RoutingAction, StepRecord, TraceState, Truth};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Binary task reward.
    pub final_reward: u8,
    pub ledger: CostLedger,
    pub trace: TraceState,
    /// Class after each accepted step, closed by `Terminal`.
    pub latent_path: Vec<LatentClass>,
    /// `final_reward - lambda * strong_tokens`.
    pub rl_return: f64,
}

impl EpisodeResult {
    pub fn steps(&self) -> u32 {
        self.trace.step_index()
    }
}

fn truth_of(class: LatentClass) -> Truth {
    if class == LatentClass::S0 {
        Truth::Correct
    } else {
        Truth::Incorrect
    }
}

/// Runs one routed episode.
///
/// Randomness is keyed by `(seed, step, generator)` rather than consumed from
/// one stream, so two policies run on the same seed see the same horizon and
/// the same per-step token counts and uniforms (common random numbers).
pub fn run_episode<P: StepPolicy + ?Sized>(
    policy: &mut P,
    cfg: &EnvConfig,
    lambda: f64,
    seed: SeedTree,
) -> Result<EpisodeResult, SimError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SimError::InvalidLambda(lambda));
    }
    let horizon = cfg
        .horizon_dist
        .sample(&mut seed.named("horizon").rng())
        .clamp(1, cfg.max_steps);

    let mut trace = TraceState::with_max_steps(format!("sim-{:016x}", seed.value()), cfg.max_steps);
    let mut ledger = CostLedger::default();
    let mut latent_path = Vec::with_capacity(horizon as usize + 1);
    // The empty prefix counts as correct.
    let mut class = LatentClass::S0;

    for t in 1..=horizon {
        let step_seed = seed.named("step").index(u64::from(t));

        let mut rng = step_seed.named("weak").rng();
        let proposed = latent_step(class, RoutingAction::Continue, cfg, &mut rng)?;
        let tokens = cfg.weak_token_dist.sample(&mut rng);
        let score = emit_score(proposed, &cfg.score_emission, &cfg.noise, &mut rng);
        ledger.charge_weak(tokens);
        trace.push(StepRecord::new(score, tokens, Origin::Weak).with_truth(truth_of(proposed)))?;

        let feats = trace.aggregate_features()?;
        class = match policy.decide(&feats, &trace)? {
            RoutingAction::Continue => proposed,
            RoutingAction::Regenerate => {
                let mut rng = step_seed.named("strong").rng();
                // The replacement is drawn from the class of the prefix with
                // the proposal in place: S0/S2 share a correct prefix, S1 does not.
                let regenerated = latent_step(proposed, RoutingAction::Regenerate, cfg, &mut rng)?;
                let tokens = cfg.strong_token_dist.sample(&mut rng);
                let score = emit_score(regenerated, &cfg.score_emission, &cfg.noise, &mut rng);
                ledger.charge_strong(tokens);
                trace.replace_last(
                    StepRecord::new(score, tokens, Origin::Strong).with_truth(truth_of(regenerated)),
                );
                let feats = trace.aggregate_features()?;
                policy.observe_regenerated(&feats, &trace);
                regenerated
            }
        };
        latent_path.push(class);
    }
    trace.terminate();
    latent_path.push(LatentClass::Terminal);

    let final_reward = u8::from(class == LatentClass::S0);
    let rl_return = f64::from(final_reward) - lambda * ledger.strong_tokens as f64;
    Ok(EpisodeResult {
        final_reward,
        ledger,
        trace,
        latent_path,
        rl_return,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{AlwaysContinue, AlwaysRegenerate, PolicyError};
    use crate::trace::AggFeatures;
    use proptest::prelude::*;

    fn env(p_weak: f64, p_strong: f64) -> EnvConfig {
        EnvConfig {
            p_weak,
            p_strong,
            ..EnvConfig::canonical()
        }
    }

    #[test]
    fn perfect_weak_model() {
        for s in 0..50 {
            let r = run_episode(&mut AlwaysContinue, &env(1.0, 0.3), 0.001, SeedTree::new(s)).unwrap();
            assert_eq!(r.final_reward, 1);
            assert_eq!(r.ledger.strong_tokens, 0);
        }
    }

    #[test]
    fn perfect_free_strong_model() {
        for s in 0..50 {
            let r = run_episode(&mut AlwaysRegenerate, &env(0.1, 1.0), 0.0, SeedTree::new(s)).unwrap();
            assert_eq!(r.final_reward, 1);
            assert_eq!(r.rl_return, 1.0);
        }
    }

    #[test]
    fn hopeless_models() {
        for s in 0..50 {
            let mut coin = |f: &AggFeatures, _: &TraceState| -> Result<RoutingAction, PolicyError> {
                Ok(if f.current_score < 0.5 {
                    RoutingAction::Regenerate
                } else {
                    RoutingAction::Continue
                })
            };
            let r = run_episode(&mut coin, &env(0.0, 0.0), 0.0, SeedTree::new(s)).unwrap();
            assert_eq!(r.final_reward, 0);
        }
    }

    #[test]
    fn policy_errors_propagate() {
        let mut failing =
            |_: &AggFeatures, _: &TraceState| -> Result<RoutingAction, PolicyError> {
                Err(PolicyError("boom".into()))
            };
        let err = run_episode(&mut failing, &env(0.5, 0.5), 0.0, SeedTree::new(0)).unwrap_err();
        assert!(matches!(err, SimError::Policy(_)));
    }

    #[test]
    fn negative_lambda_rejected() {
        let err = run_episode(&mut AlwaysContinue, &env(0.5, 0.5), -1.0, SeedTree::new(0)).unwrap_err();
        assert!(matches!(err, SimError::InvalidLambda(_)));
    }

    #[test]
    fn horizon_is_capped() {
        let mut cfg = env(0.5, 0.5);
        cfg.horizon_dist = crate::dist::CountDist::Point { value: 99 };
        let r = run_episode(&mut AlwaysContinue, &cfg, 0.0, SeedTree::new(0)).unwrap();
        assert_eq!(r.steps(), 30);
        assert!(r.trace.terminated);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn episode_invariants(seed in any::<u64>(), k in 0.0f64..=1.0, lambda in 0.0f64..0.01) {
            let mut thr = |f: &AggFeatures, _: &TraceState| -> Result<RoutingAction, PolicyError> {
                Ok(if f.current_score < k { RoutingAction::Regenerate } else { RoutingAction::Continue })
            };
            let cfg = env(0.7, 0.9);
            let r = run_episode(&mut thr, &cfg, lambda, SeedTree::new(seed)).unwrap();

            let strong: u64 = r.trace.steps().iter()
                .filter(|s| s.origin == Origin::Strong)
                .map(|s| u64::from(s.token_count)).sum();
            prop_assert_eq!(r.ledger.strong_tokens, strong);

            let path = &r.latent_path;
            prop_assert_eq!(*path.last().unwrap(), LatentClass::Terminal);
            let last_live = path[path.len() - 2];
            prop_assert_eq!(r.final_reward == 1, last_live == LatentClass::S0);
            if r.final_reward == 1 {
                prop_assert!(!path.contains(&LatentClass::S1));
            }
            if let Some(first) = path.iter().position(|&c| c == LatentClass::S1) {
                prop_assert!(path[first..].iter().all(|&c| c == LatentClass::S1 || c == LatentClass::Terminal));
            }
            let expected = f64::from(r.final_reward) - lambda * r.ledger.strong_tokens as f64;
            prop_assert_eq!(r.rl_return, expected);

            let again = run_episode(&mut thr, &cfg, lambda, SeedTree::new(seed)).unwrap();
            prop_assert_eq!(again, r);
        }
    }
}
