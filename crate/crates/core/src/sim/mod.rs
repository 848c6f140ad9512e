//! Ground-truth simulator of the routing problem.
//!
//! Latent correctness classes evolve under the cheap/expensive generators'
//! next-step accuracies, scores are emitted from class-conditional
//! distributions, and the routing policy only ever sees the scores.

mod config;
mod episode;
mod replay;

pub use config::{EnvConfig, NoiseSpec, ScoreEmission};
pub use episode::{run_episode, EpisodeResult};
pub use replay::{read_jsonl, replay_load, write_jsonl, ReplayError};

use crate::policy::PolicyError;
use crate::trace::{RoutingAction, TraceError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot step out of the terminal state")]
    SteppedTerminal,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid environment: {0}")]
    InvalidConfig(String),
    #[error("lambda must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Latent correctness of the trace including its most recent step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatentClass {
    /// Every step so far is correct.
    S0,
    /// An earlier step was wrong; the trace cannot recover.
    S1,
    /// The most recent step is wrong, everything before it is correct.
    S2,
    Terminal,
}

impl LatentClass {
    pub const LIVE: [LatentClass; 3] = [LatentClass::S0, LatentClass::S1, LatentClass::S2];

    /// Position in belief vectors; `None` for the terminal state.
    pub fn index(self) -> Option<usize> {
        match self {
            LatentClass::S0 => Some(0),
            LatentClass::S1 => Some(1),
            LatentClass::S2 => Some(2),
            LatentClass::Terminal => None,
        }
    }

    pub fn from_index(i: usize) -> LatentClass {
        LatentClass::LIVE[i]
    }
}

/// One-step transition given a uniform draw `u ∈ [0, 1)`.
///
/// Continue from S0 stays correct with the cheap generator's accuracy and
/// otherwise lands in S2; continuing past a wrong step is irrecoverable.
/// Regenerate from S0 or S2 replaces the current step and succeeds with the
/// expensive generator's accuracy; a failed regeneration lands in S2.
pub fn transition_with(
    class: LatentClass,
    action: RoutingAction,
    p_weak: f64,
    p_strong: f64,
    u: f64,
) -> Result<LatentClass, SimError> {
    use LatentClass::*;
    Ok(match (class, action) {
        (Terminal, _) => return Err(SimError::SteppedTerminal),
        (S1, _) => S1,
        (S2, RoutingAction::Continue) => S1,
        (S0, RoutingAction::Continue) => {
            if u < p_weak {
                S0
            } else {
                S2
            }
        }
        (S0 | S2, RoutingAction::Regenerate) => {
            if u < p_strong {
                S0
            } else {
                S2
            }
        }
    })
}

pub fn latent_step<R: Rng + ?Sized>(
    class: LatentClass,
    action: RoutingAction,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<LatentClass, SimError> {
    let u: f64 = rng.random();
    transition_with(class, action, cfg.p_weak, cfg.p_strong, u)
}

/// Samples the verifier score of a just-produced step.
///
/// The step is correct exactly when its transition landed in S0.
pub fn emit_score<R: Rng + ?Sized>(
    class_after_step: LatentClass,
    emission: &ScoreEmission,
    noise: &NoiseSpec,
    rng: &mut R,
) -> f64 {
    let clean = if class_after_step == LatentClass::S0 {
        emission.correct_dist.sample(rng)
    } else {
        emission.incorrect_dist.sample(rng)
    };
    noise.apply(clean, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::UnitDist;
    use crate::seed::SeedTree;
    use LatentClass::*;

    fn cfg(p_weak: f64, p_strong: f64) -> EnvConfig {
        EnvConfig {
            p_weak,
            p_strong,
            ..EnvConfig::canonical()
        }
    }

    #[test]
    fn irrecoverable_class_absorbs() {
        let c = cfg(0.9, 0.9);
        let mut rng = SeedTree::new(0).rng();
        for _ in 0..100 {
            for a in RoutingAction::ALL {
                assert_eq!(latent_step(S1, a, &c, &mut rng).unwrap(), S1);
            }
        }
    }

    #[test]
    fn perfect_strong_always_repairs() {
        let c = cfg(0.3, 1.0);
        let mut rng = SeedTree::new(1).rng();
        for _ in 0..1000 {
            assert_eq!(
                latent_step(S2, RoutingAction::Regenerate, &c, &mut rng).unwrap(),
                S0
            );
        }
    }

    #[test]
    fn terminal_cannot_step() {
        let c = cfg(0.5, 0.5);
        let mut rng = SeedTree::new(2).rng();
        assert!(matches!(
            latent_step(Terminal, RoutingAction::Continue, &c, &mut rng),
            Err(SimError::SteppedTerminal)
        ));
    }

    #[test]
    fn weak_accuracy_calibration() {
        // Binomial(1e5, 0.8): 3 standard errors ≈ 0.0038, well inside ±0.01.
        let c = cfg(0.8, 0.5);
        let mut rng = SeedTree::new(3).rng();
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| latent_step(S0, RoutingAction::Continue, &c, &mut rng).unwrap() == S0)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.8).abs() < 0.01, "{freq}");
        let se = (0.8f64 * 0.2 / n as f64).sqrt();
        assert!((freq - 0.8).abs() < 3.0 * se, "{freq}");
    }

    #[test]
    fn strong_accuracy_calibration() {
        let c = cfg(0.2, 0.95);
        let mut rng = SeedTree::new(4).rng();
        let n = 100_000;
        for from in [S0, S2] {
            let hits = (0..n)
                .filter(|_| latent_step(from, RoutingAction::Regenerate, &c, &mut rng).unwrap() == S0)
                .count();
            let freq = hits as f64 / n as f64;
            let se = (0.95f64 * 0.05 / n as f64).sqrt();
            assert!((freq - 0.95).abs() < 3.0 * se, "{from:?}: {freq}");
        }
    }

    #[test]
    fn degenerate_emissions() {
        let emission = ScoreEmission {
            correct_dist: UnitDist::Point { value: 1.0 },
            incorrect_dist: UnitDist::Point { value: 0.0 },
        };
        let mut rng = SeedTree::new(5).rng();
        assert_eq!(emit_score(S0, &emission, &NoiseSpec::None, &mut rng), 1.0);
        assert_eq!(emit_score(S2, &emission, &NoiseSpec::None, &mut rng), 0.0);
        assert_eq!(emit_score(S1, &emission, &NoiseSpec::None, &mut rng), 0.0);
    }

    #[test]
    fn beta_emission_mean() {
        // Beta(8, 2) has mean 0.8 and sd ≈ 0.121; the 1e5-sample mean has
        // standard error ≈ 3.8e-4.
        let emission = ScoreEmission::default();
        let mut rng = SeedTree::new(6).rng();
        let n = 100_000;
        let mean = (0..n)
            .map(|_| emit_score(S0, &emission, &NoiseSpec::None, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.8).abs() < 0.01, "{mean}");
    }

    #[test]
    fn noisy_scores_stay_in_unit_interval() {
        let emission = ScoreEmission::default();
        let mut rng = SeedTree::new(7).rng();
        for noise in [
            NoiseSpec::ExtraVariance { scale: 0.5 },
            NoiseSpec::Miscalibration { shift: 0.4 },
            NoiseSpec::Miscalibration { shift: -0.4 },
        ] {
            for class in [S0, S2] {
                for _ in 0..2000 {
                    let s = emit_score(class, &emission, &noise, &mut rng);
                    assert!((0.0..=1.0).contains(&s));
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rows_sum_to_one(p_weak in 0.0f64..=1.0, p_strong in 0.0f64..=1.0) {
                // The transition is a deterministic function of u; integrate it
                // exactly by splitting [0,1) at the two accuracy breakpoints.
                for class in LatentClass::LIVE {
                    for action in RoutingAction::ALL {
                        let mut mass = [0.0f64; 3];
                        let mut cuts = vec![0.0, p_weak, p_strong, 1.0];
                        cuts.sort_by(f64::total_cmp);
                        for w in cuts.windows(2) {
                            if w[1] > w[0] {
                                let mid = 0.5 * (w[0] + w[1]);
                                let next = transition_with(class, action, p_weak, p_strong, mid).unwrap();
                                mass[next.index().unwrap()] += w[1] - w[0];
                            }
                        }
                        prop_assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    }
                }
            }

            #[test]
            fn s1_absorbs_any_action_sequence(actions in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
                let c = cfg(0.5, 0.7);
                let mut rng = SeedTree::new(seed).rng();
                let mut class = S0;
                let mut entered = false;
                for a in actions {
                    let action = if a { RoutingAction::Regenerate } else { RoutingAction::Continue };
                    class = latent_step(class, action, &c, &mut rng).unwrap();
                    if entered { prop_assert_eq!(class, S1); }
                    entered |= class == S1;
                }
            }
        }
    }
}
