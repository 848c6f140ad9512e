use super::SimError;
use crate::dist::{CountDist, UnitDist};
use crate::trace::DEFAULT_MAX_STEPS;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Class-conditional verifier score distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEmission {
    pub correct_dist: UnitDist,
    pub incorrect_dist: UnitDist,
}

impl Default for ScoreEmission {
    fn default() -> Self {
        Self {
            correct_dist: UnitDist::Beta { a: 8.0, b: 2.0 },
            incorrect_dist: UnitDist::Beta { a: 2.0, b: 5.0 },
        }
    }
}

/// Corruption applied to every emitted score; results are clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    None,
    /// Additive zero-mean Gaussian noise with standard deviation `scale`.
    ExtraVariance { scale: f64 },
    /// Constant additive bias.
    Miscalibration { shift: f64 },
}

impl NoiseSpec {
    pub fn apply<R: Rng + ?Sized>(&self, score: f64, rng: &mut R) -> f64 {
        let corrupted = match *self {
            NoiseSpec::None => score,
            NoiseSpec::ExtraVariance { scale } => {
                score + Normal::new(0.0, scale).expect("validated").sample(rng)
            }
            NoiseSpec::Miscalibration { shift } => score + shift,
        };
        corrupted.clamp(0.0, 1.0)
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            NoiseSpec::ExtraVariance { scale } if !(scale.is_finite() && scale >= 0.0) => {
                Err(format!("noise.scale must be finite and >= 0, got {scale}"))
            }
            NoiseSpec::Miscalibration { shift } if !shift.is_finite() => {
                Err(format!("noise.shift must be finite, got {shift}"))
            }
            _ => Ok(()),
        }
    }
}

/// Simulator parameters. `p_strong < p_weak` is allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub p_weak: f64,
    pub p_strong: f64,
    /// Episode length before capping at `max_steps`.
    #[serde(default = "default_horizon")]
    pub horizon_dist: CountDist,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default = "default_tokens")]
    pub weak_token_dist: CountDist,
    #[serde(default = "default_tokens")]
    pub strong_token_dist: CountDist,
    #[serde(default)]
    pub score_emission: ScoreEmission,
    #[serde(default)]
    pub noise: NoiseSpec,
}

fn default_horizon() -> CountDist {
    CountDist::UniformInt { lo: 6, hi: 30 }
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

fn default_tokens() -> CountDist {
    CountDist::LognormalInt {
        mu: 4.0,
        sigma: 0.5,
        min: 1,
    }
}

impl EnvConfig {
    /// The benchmark environment: `p_w = 0.6`, `p_s = 0.95`,
    /// Beta(8,2)/Beta(2,5) emissions, no score noise.
    pub fn canonical() -> Self {
        Self {
            p_weak: 0.6,
            p_strong: 0.95,
            horizon_dist: default_horizon(),
            max_steps: DEFAULT_MAX_STEPS,
            weak_token_dist: default_tokens(),
            strong_token_dist: default_tokens(),
            score_emission: ScoreEmission::default(),
            noise: NoiseSpec::None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        for (name, p) in [("p_weak", self.p_weak), ("p_strong", self.p_strong)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        for (name, d) in [
            ("horizon_dist", &self.horizon_dist),
            ("weak_token_dist", &self.weak_token_dist),
            ("strong_token_dist", &self.strong_token_dist),
        ] {
            d.validate().map_err(|e| SimError::InvalidConfig(format!("{name}: {}", e.0)))?;
        }
        for (name, d) in [
            ("score_emission.correct_dist", &self.score_emission.correct_dist),
            ("score_emission.incorrect_dist", &self.score_emission.incorrect_dist),
        ] {
            d.validate().map_err(|e| SimError::InvalidConfig(format!("{name}: {}", e.0)))?;
        }
        self.noise.validate().map_err(SimError::InvalidConfig)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let cfg: EnvConfig = serde_json::from_str(&text)
            .map_err(|e| SimError::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Mean strong-step length, the expected price of one regeneration.
    pub fn expected_strong_tokens(&self) -> f64 {
        self.strong_token_dist.mean()
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::canonical()
    }
}
