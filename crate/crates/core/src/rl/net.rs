//! Shared-trunk actor–critic MLP with hand-written backpropagation.

use super::RlError;
use crate::seed::SeedTree;
use crate::trace::AggFeatures;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::Range;

pub const INPUT_DIM: usize = 4;
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

/// Offsets of each parameter group in the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub wa: Range<usize>,
    pub ba: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
}

impl Layout {
    pub fn new(hidden: [usize; 2]) -> Self {
        let [h1, h2] = hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        Self {
            w1: take(h1 * INPUT_DIM),
            b1: take(h1),
            w2: take(h2 * h1),
            b2: take(h2),
            wa: take(2 * h2),
            ba: take(2),
            wv: take(h2),
            bv: take(1),
        }
    }

    pub fn len(&self) -> usize {
        self.bv.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn groups(&self) -> [(&'static str, Range<usize>); 8] {
        [
            ("w1", self.w1.clone()),
            ("b1", self.b1.clone()),
            ("w2", self.w2.clone()),
            ("b2", self.b2.clone()),
            ("wa", self.wa.clone()),
            ("ba", self.ba.clone()),
            ("wv", self.wv.clone()),
            ("bv", self.bv.clone()),
        ]
    }
}

/// Input scaling applied before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub token_scale: f64,
    pub max_steps: u32,
}

impl Default for FeatureScale {
    fn default() -> Self {
        Self {
            token_scale: 100.0,
            max_steps: crate::trace::DEFAULT_MAX_STEPS,
        }
    }
}

impl FeatureScale {
    pub fn encode(&self, f: &AggFeatures) -> Result<[f64; INPUT_DIM], RlError> {
        let x = [
            f.current_score,
            f.min_prev_score,
            f64::from(f.current_tokens) / self.token_scale,
            f64::from(f.step_index) / f64::from(self.max_steps),
        ];
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(RlError::NonFiniteInput)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub hidden: [usize; 2],
    pub scale: FeatureScale,
    pub params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Array2<f64>,
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub logits: Array2<f64>,
    pub values: Array1<f64>,
}

/// Fills a `rows × cols` block with an orthonormal frame scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, seed: SeedTree) -> Vec<f64> {
    let mut rng = seed.rng();
    let tall = rows >= cols;
    let (n_vec, dim) = if tall { (cols, rows) } else { (rows, cols) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while vecs.len() < n_vec {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            vecs.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if tall { vecs[c][r] } else { vecs[r][c] };
        }
    }
    out
}

impl PolicyNet {
    pub fn zeros(hidden: [usize; 2]) -> Self {
        Self {
            hidden,
            scale: FeatureScale::default(),
            params: vec![0.0; Layout::new(hidden).len()],
        }
    }

    /// Orthogonal weights (trunk gain √2, actor 0.01, critic 1), zero biases.
    pub fn init(hidden: [usize; 2], seed: SeedTree) -> Self {
        let mut net = Self::zeros(hidden);
        let l = Layout::new(hidden);
        let [h1, h2] = hidden;
        let blocks = [
            (l.w1.clone(), h1, INPUT_DIM, std::f64::consts::SQRT_2, "w1"),
            (l.w2.clone(), h2, h1, std::f64::consts::SQRT_2, "w2"),
            (l.wa.clone(), 2, h2, 0.01, "wa"),
            (l.wv.clone(), 1, h2, 1.0, "wv"),
        ];
        for (range, rows, cols, gain, name) in blocks {
            net.params[range].copy_from_slice(&orthogonal(rows, cols, gain, seed.named(name)));
        }
        net
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.hidden)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn mat(&self, r: Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[r]).expect("layout")
    }

    fn vec(&self, r: Range<usize>) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[r])
    }

    /// Batched forward pass over encoded inputs (`B × 4`).
    pub fn forward_batch(&self, x: Array2<f64>) -> ForwardCache {
        let l = self.layout();
        let [h1, h2] = self.hidden;
        let a1 = (x.dot(&self.mat(l.w1, h1, INPUT_DIM).t()) + &self.vec(l.b1)).mapv(f64::tanh);
        let a2 = (a1.dot(&self.mat(l.w2, h2, h1).t()) + &self.vec(l.b2)).mapv(f64::tanh);
        let logits = a2.dot(&self.mat(l.wa, 2, h2).t()) + &self.vec(l.ba);
        let values = a2.dot(&self.vec(l.wv)) + self.params[l.bv.start];
        ForwardCache { x, h1: a1, h2: a2, logits, values }
    }

    /// Gradient of a loss given its derivatives w.r.t. logits (`B × 2`) and values.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>, dvalues: &Array1<f64>) -> Vec<f64> {
        let l = self.layout();
        let [h1, h2] = self.hidden;
        let mut grad = vec![0.0; self.n_params()];
        let mut put = |r: Range<usize>, v: &[f64]| grad[r].copy_from_slice(v);

        let dwa = dlogits.t().dot(&cache.h2);
        put(l.wa.clone(), dwa.as_slice().expect("contiguous"));
        put(l.ba.clone(), dlogits.sum_axis(Axis(0)).as_slice().expect("contiguous"));
        let dwv = dvalues.dot(&cache.h2);
        put(l.wv.clone(), dwv.as_slice().expect("contiguous"));
        put(l.bv.clone(), &[dvalues.sum()]);

        let wv = self.vec(l.wv.clone());
        let mut dh2 = dlogits.dot(&self.mat(l.wa.clone(), 2, h2));
        for (mut row, dv) in dh2.axis_iter_mut(Axis(0)).zip(dvalues) {
            row.scaled_add(*dv, &wv);
        }
        let dz2 = dh2 * cache.h2.mapv(|a| 1.0 - a * a);
        put(l.w2.clone(), dz2.t().dot(&cache.h1).as_slice().expect("contiguous"));
        put(l.b2.clone(), dz2.sum_axis(Axis(0)).as_slice().expect("contiguous"));

        let dh1 = dz2.dot(&self.mat(l.w2.clone(), h2, h1));
        let dz1 = dh1 * cache.h1.mapv(|a| 1.0 - a * a);
        put(l.w1.clone(), dz1.t().dot(&cache.x).as_slice().expect("contiguous"));
        put(l.b1.clone(), dz1.sum_axis(Axis(0)).as_slice().expect("contiguous"));
        grad
    }

    /// Logits and value for one step.
    pub fn forward(&self, feats: &AggFeatures) -> Result<([f64; 2], f64), RlError> {
        let x = self.scale.encode(feats)?;
        Ok(self.forward_encoded(&x))
    }

    /// Single-row forward pass without the batch machinery.
    pub fn forward_encoded(&self, x: &[f64; INPUT_DIM]) -> ([f64; 2], f64) {
        let l = self.layout();
        let p = &self.params;
        let dense = |w: &[f64], b: &[f64], input: &[f64]| -> Vec<f64> {
            b.iter()
                .enumerate()
                .map(|(i, bi)| {
                    let row = &w[i * input.len()..(i + 1) * input.len()];
                    bi + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        };
        let mut a1 = dense(&p[l.w1], &p[l.b1], x);
        a1.iter_mut().for_each(|v| *v = v.tanh());
        let mut a2 = dense(&p[l.w2], &p[l.b2], &a1);
        a2.iter_mut().for_each(|v| *v = v.tanh());
        let logits = dense(&p[l.wa], &p[l.ba], &a2);
        let value = dense(&p[l.wv], &p[l.bv], &a2)[0];
        ([logits[0], logits[1]], value)
    }

    pub fn save_json(&self) -> String {
        serde_json::to_string(&Checkpoint::from(self)).expect("checkpoint serializes")
    }

    pub fn load_json(text: &str) -> Result<Self, RlError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| RlError::Checkpoint(e.to_string()))?;
        c.try_into()
    }
}

/// Log-softmax of two logits.
pub fn log_softmax(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    [z[0] - lse, z[1] - lse]
}

const CHECKPOINT_FORMAT: &str = "steproute-policy-net";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    input_dim: usize,
    hidden: [usize; 2],
    heads: [usize; 2],
    scale: FeatureScale,
    params: Vec<f64>,
}

impl From<&PolicyNet> for Checkpoint {
    fn from(n: &PolicyNet) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            input_dim: INPUT_DIM,
            hidden: n.hidden,
            heads: [2, 1],
            scale: n.scale,
            params: n.params.clone(),
        }
    }
}

impl TryFrom<Checkpoint> for PolicyNet {
    type Error = RlError;
    fn try_from(c: Checkpoint) -> Result<Self, RlError> {
        let bad = |m: String| Err(RlError::Checkpoint(m));
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported checkpoint {} v{}", c.format, c.version));
        }
        if c.input_dim != INPUT_DIM || c.heads != [2, 1] {
            return bad("architecture mismatch".into());
        }
        let expected = Layout::new(c.hidden).len();
        if c.params.len() != expected {
            return bad(format!("expected {expected} parameters, found {}", c.params.len()));
        }
        if c.params.iter().any(|p| !p.is_finite()) {
            return bad("non-finite parameter".into());
        }
        Ok(PolicyNet { hidden: c.hidden, scale: c.scale, params: c.params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats() -> AggFeatures {
        AggFeatures {
            current_score: 0.4,
            min_prev_score: 0.7,
            current_tokens: 55,
            step_index: 6,
        }
    }

    #[test]
    fn parameter_count() {
        assert_eq!(Layout::new(DEFAULT_HIDDEN).len(), 17_539);
        assert_eq!(Layout::new([1, 1]).len(), 13);
    }

    #[test]
    fn zero_network() {
        let (logits, value) = PolicyNet::zeros(DEFAULT_HIDDEN).forward(&feats()).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = PolicyNet::init(DEFAULT_HIDDEN, SeedTree::new(5));
        let b = PolicyNet::init(DEFAULT_HIDDEN, SeedTree::new(5));
        let (la, va) = a.forward(&feats()).unwrap();
        let (lb, vb) = b.forward(&feats()).unwrap();
        assert_eq!(la.map(f64::to_bits), lb.map(f64::to_bits));
        assert_eq!(va.to_bits(), vb.to_bits());
        assert_ne!(a.params, PolicyNet::init(DEFAULT_HIDDEN, SeedTree::new(6)).params);
    }

    #[test]
    fn one_unit_reduction_by_hand() {
        // Only w1[0] (on the current score), w2 and the second logit weight are set.
        let mut net = PolicyNet::zeros([1, 1]);
        let l = net.layout();
        net.params[l.w1.start] = 0.8;
        net.params[l.w2.start] = -1.3;
        net.params[l.wa.start + 1] = 2.1;
        let (logits, value) = net.forward(&feats()).unwrap();
        let expect = 2.1 * (-1.3 * (0.8f64 * 0.4).tanh()).tanh();
        assert!((logits[1] - expect).abs() < 1e-12);
        assert_eq!(logits[0], 0.0);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn orthogonal_init_frames() {
        let net = PolicyNet::init([8, 8], SeedTree::new(1));
        let l = net.layout();
        let w2 = &net.params[l.w2];
        for i in 0..8 {
            for j in 0..8 {
                let d: f64 = (0..8).map(|k| w2[i * 8 + k] * w2[j * 8 + k]).sum();
                let expect = if i == j { 2.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut f = feats();
        f.current_score = f64::NAN;
        assert_eq!(PolicyNet::zeros([2, 2]).forward(&f), Err(RlError::NonFiniteInput));
    }

    #[test]
    fn softmax_normalizes() {
        for z in [[0.0, 0.0], [30.0, -30.0], [1e-3, 5.0]] {
            let lp = log_softmax(z);
            assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = PolicyNet::init([6, 5], SeedTree::new(2));
        let back = PolicyNet::load_json(&net.save_json()).unwrap();
        assert_eq!(back, net);
        let mut c: serde_json::Value = serde_json::from_str(&net.save_json()).unwrap();
        c["params"].as_array_mut().unwrap().pop();
        assert!(matches!(PolicyNet::load_json(&c.to_string()), Err(RlError::Checkpoint(_))));
    }

    #[test]
    fn single_row_matches_batch() {
        let net = PolicyNet::init([7, 5], SeedTree::new(11));
        let x = [0.2, 0.9, 0.63, 0.4];
        let (logits, value) = net.forward_encoded(&x);
        let cache = net.forward_batch(Array2::from_shape_vec((1, INPUT_DIM), x.to_vec()).unwrap());
        assert!((logits[0] - cache.logits[[0, 0]]).abs() < 1e-12);
        assert!((logits[1] - cache.logits[[0, 1]]).abs() < 1e-12);
        assert!((value - cache.values[0]).abs() < 1e-12);
    }
}
