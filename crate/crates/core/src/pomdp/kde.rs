//! Reflected Gaussian kernel densities over `(min_prev, current) ∈ [0, 1]²`.

use super::{LabeledObs, PomdpError};
use crate::sim::LatentClass;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const LIKELIHOOD_FLOOR: f64 = 1e-8;
pub const BANDWIDTH_FLOOR: f64 = 0.02;
pub const MIN_SAMPLES_PER_CLASS: usize = 10;
/// Nodes per axis of the interpolation table used for fast filtering.
const TABLE_NODES: usize = 257;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// The sample and its mirror images across 0 and 1.
fn images(c: f64) -> [f64; 3] {
    [c, -c, 2.0 - c]
}

fn kernel_1d(u: f64, c: f64, h: f64) -> f64 {
    let norm = 1.0 / (h * (2.0 * PI).sqrt());
    images(c)
        .iter()
        .map(|m| {
            let z = (u - m) / h;
            norm * (-0.5 * z * z).exp()
        })
        .sum()
}

fn integral_1d(lo: f64, hi: f64, c: f64, h: f64) -> f64 {
    images(c)
        .iter()
        .map(|m| std_normal_cdf((hi - m) / h) - std_normal_cdf((lo - m) / h))
        .sum()
}

/// One class's density: a product-Gaussian KDE reflected across all four
/// edges, with each kernel rescaled to carry unit mass inside the square.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDensity {
    samples: Vec<[f64; 2]>,
    bandwidth: f64,
    /// Per-sample `1 / in-square mass` along x and y.
    inv_mass: Vec<[f64; 2]>,
    table: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClassDensityRaw {
    bandwidth: f64,
    samples: Vec<[f64; 2]>,
}

impl ClassDensity {
    fn from_parts(samples: Vec<[f64; 2]>, bandwidth: f64) -> Result<Self, PomdpError> {
        if samples.is_empty() {
            return Err(PomdpError::InvalidModel("class has no samples".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(PomdpError::InvalidModel(format!("bandwidth {bandwidth}")));
        }
        if samples
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(PomdpError::InvalidModel("sample outside the unit square".into()));
        }
        let inv_mass = samples
            .iter()
            .map(|s| s.map(|c| 1.0 / integral_1d(0.0, 1.0, c, bandwidth)))
            .collect();
        let mut density = Self {
            samples,
            bandwidth,
            inv_mass,
            table: Array2::zeros((0, 0)),
        };
        let nodes: Vec<f64> = (0..TABLE_NODES)
            .map(|i| i as f64 / (TABLE_NODES - 1) as f64)
            .collect();
        density.table = density.density_grid(&nodes, &nodes);
        Ok(density)
    }

    fn fit(samples: Vec<[f64; 2]>) -> Result<Self, PomdpError> {
        let bandwidth = silverman_bandwidth(&samples);
        Self::from_parts(samples, bandwidth)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// `n × points` matrix of per-sample, mass-normalized kernel factors on one axis.
    fn axis_factors(&self, axis: usize, points: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((self.samples.len(), points.len()), |(i, j)| {
            kernel_1d(points[j], self.samples[i][axis], self.bandwidth) * self.inv_mass[i][axis]
        })
    }

    /// Density on the tensor grid `xs × ys` (min_prev × current), unfloored.
    pub fn density_grid(&self, xs: &[f64], ys: &[f64]) -> Array2<f64> {
        let fx = self.axis_factors(0, xs);
        let fy = self.axis_factors(1, ys);
        fx.t().dot(&fy) / self.samples.len() as f64
    }

    /// Exact density at one point, unfloored.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .samples
            .iter()
            .zip(&self.inv_mass)
            .map(|(s, w)| kernel_1d(x, s[0], h) * w[0] * kernel_1d(y, s[1], h) * w[1])
            .sum();
        sum / self.samples.len() as f64
    }

    /// Bilinear interpolation in the precomputed table, unfloored.
    pub fn density_tabulated(&self, x: f64, y: f64) -> f64 {
        let scale = (TABLE_NODES - 1) as f64;
        let (fx, fy) = (x * scale, y * scale);
        let (i, j) = (
            (fx.floor() as usize).min(TABLE_NODES - 2),
            (fy.floor() as usize).min(TABLE_NODES - 2),
        );
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let t = &self.table;
        (1.0 - tx) * (1.0 - ty) * t[[i, j]]
            + tx * (1.0 - ty) * t[[i + 1, j]]
            + (1.0 - tx) * ty * t[[i, j + 1]]
            + tx * ty * t[[i + 1, j + 1]]
    }

    /// Probability of each cell of an `n × n` partition, `[min_prev cell][current cell]`.
    pub fn cell_probs(&self, n: usize) -> Array2<f64> {
        let edges: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let axis = |a: usize| {
            Array2::from_shape_fn((self.samples.len(), n), |(i, c)| {
                integral_1d(edges[c], edges[c + 1], self.samples[i][a], self.bandwidth)
                    * self.inv_mass[i][a]
            })
        };
        axis(0).t().dot(&axis(1)) / self.samples.len() as f64
    }
}

/// Silverman-style rule for a 2-D Gaussian kernel, `σ · n^(-1/6)`, with σ
/// the pooled per-axis standard deviation; never below [`BANDWIDTH_FLOOR`].
fn silverman_bandwidth(samples: &[[f64; 2]]) -> f64 {
    let n = samples.len() as f64;
    let var = |a: usize| {
        let mean = samples.iter().map(|s| s[a]).sum::<f64>() / n;
        samples.iter().map(|s| (s[a] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
    };
    let sigma = ((var(0) + var(1)) / 2.0).sqrt();
    (sigma * n.powf(-1.0 / 6.0)).max(BANDWIDTH_FLOOR)
}

/// Per-class score densities for S0, S1 and S2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservationModelRaw", into = "ObservationModelRaw")]
pub struct ObservationModel {
    classes: [ClassDensity; 3],
}

#[derive(Serialize, Deserialize)]
struct ObservationModelRaw {
    s0: ClassDensityRaw,
    s1: ClassDensityRaw,
    s2: ClassDensityRaw,
}

impl TryFrom<ObservationModelRaw> for ObservationModel {
    type Error = PomdpError;
    fn try_from(raw: ObservationModelRaw) -> Result<Self, PomdpError> {
        let build = |r: ClassDensityRaw| ClassDensity::from_parts(r.samples, r.bandwidth);
        Ok(Self {
            classes: [build(raw.s0)?, build(raw.s1)?, build(raw.s2)?],
        })
    }
}

impl From<ObservationModel> for ObservationModelRaw {
    fn from(m: ObservationModel) -> Self {
        let [s0, s1, s2] = m.classes.map(|c| ClassDensityRaw {
            bandwidth: c.bandwidth,
            samples: c.samples,
        });
        Self { s0, s1, s2 }
    }
}

fn check_obs(obs: (f64, f64)) -> Result<(), PomdpError> {
    if (0.0..=1.0).contains(&obs.0) && (0.0..=1.0).contains(&obs.1) {
        Ok(())
    } else {
        Err(PomdpError::OutOfDomain(obs.0, obs.1))
    }
}

fn live_index(class: LatentClass) -> Result<usize, PomdpError> {
    class.index().ok_or(PomdpError::SteppedTerminal)
}

impl ObservationModel {
    /// Fits one density per class; every class needs at least ten samples.
    pub fn fit(labeled: &[LabeledObs]) -> Result<Self, PomdpError> {
        let mut per_class: [Vec<[f64; 2]>; 3] = Default::default();
        for obs in labeled {
            check_obs((obs.min_prev, obs.current))?;
            per_class[live_index(obs.class)?].push([obs.min_prev, obs.current]);
        }
        for (i, samples) in per_class.iter().enumerate() {
            if samples.len() < MIN_SAMPLES_PER_CLASS {
                return Err(PomdpError::InsufficientSamples {
                    class: LatentClass::from_index(i),
                    found: samples.len(),
                    min: MIN_SAMPLES_PER_CLASS,
                });
            }
        }
        let [s0, s1, s2] = per_class;
        Ok(Self {
            classes: [ClassDensity::fit(s0)?, ClassDensity::fit(s1)?, ClassDensity::fit(s2)?],
        })
    }

    pub fn class(&self, class: LatentClass) -> Result<&ClassDensity, PomdpError> {
        Ok(&self.classes[live_index(class)?])
    }

    /// Floored density of `obs` under `class`.
    pub fn observation_likelihood(
        &self,
        class: LatentClass,
        obs: (f64, f64),
    ) -> Result<f64, PomdpError> {
        check_obs(obs)?;
        Ok(self.class(class)?.density(obs.0, obs.1).max(LIKELIHOOD_FLOOR))
    }

    /// Floored likelihoods of `obs` for all three classes, from the
    /// interpolation tables.
    pub fn likelihoods(&self, obs: (f64, f64)) -> Result<[f64; 3], PomdpError> {
        check_obs(obs)?;
        Ok([0, 1, 2].map(|i| {
            self.classes[i]
                .density_tabulated(obs.0, obs.1)
                .max(LIKELIHOOD_FLOOR)
        }))
    }

    /// `probs[class][cell]` over an `n × n` partition, cells numbered
    /// `min_prev_cell * n + current_cell`.
    pub fn discretize(&self, n: usize) -> Vec<Vec<f64>> {
        self.classes
            .iter()
            .map(|c| c.cell_probs(n).iter().copied().collect())
            .collect()
    }

    /// Cell index of an observation in an `n × n` partition.
    pub fn cell_of(obs: (f64, f64), n: usize) -> usize {
        let bin = |v: f64| ((v * n as f64).floor() as usize).min(n - 1);
        bin(obs.0) * n + bin(obs.1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PomdpError> {
        serde_json::from_str(text).map_err(|e| PomdpError::InvalidModel(e.to_string()))
    }
}
