//! Parametric distribution specs used by environment configuration files.

use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid distribution: {0}")]
pub struct DistError(pub String);

/// Distribution over the unit interval (score emissions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnitDist {
    Beta { a: f64, b: f64 },
    Point { value: f64 },
}

impl UnitDist {
    pub fn validate(&self) -> Result<(), DistError> {
        match *self {
            UnitDist::Beta { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(DistError(format!("beta({a}, {b}) needs positive shapes")));
                }
            }
            UnitDist::Point { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(DistError(format!("point mass {value} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            UnitDist::Beta { a, b } => Beta::new(a, b).expect("validated beta").sample(rng),
            UnitDist::Point { value } => value,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            UnitDist::Beta { a, b } => a / (a + b),
            UnitDist::Point { value } => value,
        }
    }
}

/// Distribution over positive integers (episode lengths, token counts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CountDist {
    Point {
        value: u32,
    },
    UniformInt {
        lo: u32,
        hi: u32,
    },
    /// `max(min, round(exp(N(mu, sigma))))`.
    LognormalInt {
        mu: f64,
        sigma: f64,
        #[serde(default = "one")]
        min: u32,
    },
}

fn one() -> u32 {
    1
}

impl CountDist {
    pub fn validate(&self) -> Result<(), DistError> {
        match *self {
            CountDist::Point { value } if value == 0 => {
                Err(DistError("point count must be at least 1".into()))
            }
            CountDist::UniformInt { lo, hi } if lo == 0 || lo > hi => {
                Err(DistError(format!("uniform_int [{lo}, {hi}] needs 1 <= lo <= hi")))
            }
            CountDist::LognormalInt { mu, sigma, min }
                if !(mu.is_finite() && sigma.is_finite() && sigma >= 0.0) || min == 0 =>
            {
                Err(DistError(format!(
                    "lognormal_int(mu={mu}, sigma={sigma}, min={min}) is invalid"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            CountDist::Point { value } => value,
            CountDist::UniformInt { lo, hi } => rng.random_range(lo..=hi),
            CountDist::LognormalInt { mu, sigma, min } => {
                let x: f64 = LogNormal::new(mu, sigma).expect("validated").sample(rng);
                (x.round().min(f64::from(u32::MAX)) as u32).max(min)
            }
        }
    }

    /// Expected value; the lognormal case ignores rounding and the floor.
    pub fn mean(&self) -> f64 {
        match *self {
            CountDist::Point { value } => f64::from(value),
            CountDist::UniformInt { lo, hi } => 0.5 * (f64::from(lo) + f64::from(hi)),
            CountDist::LognormalInt { mu, sigma, .. } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    pub fn max_value(&self) -> Option<u32> {
        match *self {
            CountDist::Point { value } => Some(value),
            CountDist::UniformInt { hi, .. } => Some(hi),
            CountDist::LognormalInt { .. } => None,
        }
    }
}
