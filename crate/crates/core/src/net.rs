//! Convolutional warper network: three conv/ReLU/average-pool stages, a
//! flatten, and two parallel ReLU dense heads emitting `K` slopes and `K` raw
//! durations. Forward records a [`Tape`]; [`WarperNetwork::backward`] replays
//! it in reverse.

use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Series;
use crate::error::{contract, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Head weights are drawn from a range this many times narrower than the
/// fan-in bound so a fresh network starts near its head biases.
const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub conv_filter_sizes: Vec<usize>,
    pub conv_filter_counts: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    pub pool_stride: usize,
    pub k: usize,
    pub input_len: usize,
    pub input_dim: usize,
}

impl NetConfig {
    /// Full-width network: kernels 13/7/3, 128/64/32 filters, pools 6/4/2.
    pub fn new(input_len: usize, input_dim: usize) -> Self {
        Self {
            conv_filter_sizes: vec![13, 7, 3],
            conv_filter_counts: vec![128, 64, 32],
            pool_sizes: vec![6, 4, 2],
            pool_stride: 1,
            k: 4,
            input_len,
            input_dim,
        }
    }

    /// Same topology with filter counts 8/4/2, for fast tests.
    pub fn reduced(input_len: usize, input_dim: usize) -> Self {
        Self {
            conv_filter_counts: vec![8, 4, 2],
            ..Self::new(input_len, input_dim)
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    /// Sequence length after each stage's pooling.
    pub fn stage_lengths(&self) -> Vec<isize> {
        let mut len = self.input_len as isize;
        self.pool_sizes
            .iter()
            .map(|&p| {
                len = len - p as isize + 1;
                len
            })
            .collect()
    }

    pub fn flatten_len(&self) -> isize {
        let last = self.stage_lengths().last().copied().unwrap_or(0);
        last * self.conv_filter_counts.last().copied().unwrap_or(0) as isize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.conv_filter_sizes.len() != 3
            || self.conv_filter_counts.len() != 3
            || self.pool_sizes.len() != 3
        {
            return bad("network needs exactly three conv stages".into());
        }
        if self.pool_stride != 1 {
            return bad(format!("pool stride must be 1, got {}", self.pool_stride));
        }
        if self.k < 1 {
            return bad("K must be at least 1".into());
        }
        if self.input_dim < 1 {
            return bad("input dimension must be at least 1".into());
        }
        if self
            .conv_filter_sizes
            .iter()
            .chain(&self.conv_filter_counts)
            .chain(&self.pool_sizes)
            .any(|&v| v == 0)
        {
            return bad("filter sizes, counts and pool sizes must be positive".into());
        }
        if self.stage_lengths().iter().any(|&l| l < 1) || self.flatten_len() <= 0 {
            return bad(format!(
                "input length {} is too short for pools {:?}",
                self.input_len, self.pool_sizes
            ));
        }
        Ok(())
    }

    /// Shapes of every parameter tensor in layout order.
    pub fn param_shapes(&self) -> Vec<usize> {
        let mut shapes = Vec::with_capacity(10);
        let mut c_in = self.input_dim;
        for (&k, &c_out) in self.conv_filter_sizes.iter().zip(&self.conv_filter_counts) {
            shapes.push(c_out * c_in * k);
            shapes.push(c_out);
            c_in = c_out;
        }
        let f = self.flatten_len().max(0) as usize;
        for _ in 0..2 {
            shapes.push(self.k * f);
            shapes.push(self.k);
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().sum()
    }
}

/// Indices into [`ParamSet::tensors`].
pub mod layout {
    pub const fn conv_weight(stage: usize) -> usize {
        2 * stage
    }
    pub const fn conv_bias(stage: usize) -> usize {
        2 * stage + 1
    }
    pub const HEAD_A_WEIGHT: usize = 6;
    pub const HEAD_A_BIAS: usize = 7;
    pub const HEAD_T_WEIGHT: usize = 8;
    pub const HEAD_T_BIAS: usize = 9;
}

/// One flat buffer per parameter tensor, ordered conv1 kernels, conv1
/// biases, ..., head-a weights, head-a biases, head-t weights, head-t biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamSet {
    pub fn zeros(cfg: &NetConfig) -> Self {
        Self {
            tensors: cfg
                .param_shapes()
                .into_iter()
                .map(|n| vec![0.0; n])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flatten()
    }

    /// Flat-index access across tensors.
    pub fn get(&self, mut idx: usize) -> f64 {
        for t in &self.tensors {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn get_mut(&mut self, mut idx: usize) -> &mut f64 {
        for t in &mut self.tensors {
            if idx < t.len() {
                return &mut t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= c);
    }

    fn same_shape(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.len() == b.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: ParamSet,
    pub second: ParamSet,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarperNetwork {
    cfg: NetConfig,
    pub(crate) params: ParamSet,
    pub(crate) adam: AdamState,
    seed: u64,
}

#[derive(Clone, Debug)]
struct StageTape {
    input: Vec<f64>,
    activ: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    stages: Vec<StageTape>,
    features: Vec<f64>,
    head_a_pre: Vec<f64>,
    head_t_pre: Vec<f64>,
    param_version: u64,
    input_len: usize,
}

impl Tape {
    /// Fingerprint of every ReLU on/off state. Two passes with equal
    /// fingerprints lie in the same smooth piece of the network.
    pub fn pattern_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for s in &self.stages {
            for v in &s.activ {
                (*v > 0.0).hash(&mut h);
            }
        }
        for v in self.head_a_pre.iter().chain(&self.head_t_pre) {
            (*v > 0.0).hash(&mut h);
        }
        h.finish()
    }
}

fn conv_forward(
    input: &[f64],
    c_in: usize,
    len: usize,
    weight: &[f64],
    bias: &[f64],
    k: usize,
) -> Vec<f64> {
    let c_out = bias.len();
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; c_out * len];
    for (o, orow) in out.chunks_exact_mut(len).enumerate() {
        orow.fill(bias[o]);
        for c in 0..c_in {
            let irow = &input[c * len..(c + 1) * len];
            let wrow = &weight[(o * c_in + c) * k..(o * c_in + c + 1) * k];
            for (j, &wv) in wrow.iter().enumerate() {
                let (t0, t1, s0) = conv_span(j, pad, len);
                for (dst, src) in orow[t0..t1].iter_mut().zip(&irow[s0..s0 + (t1 - t0)]) {
                    *dst += wv * src;
                }
            }
        }
    }
    out
}

/// Output range `[t0, t1)` touched by kernel tap `j`, and the matching input
/// start, for zero "same" padding.
#[inline]
fn conv_span(j: usize, pad: usize, len: usize) -> (usize, usize, usize) {
    if j >= pad {
        let shift = j - pad;
        (0, len.saturating_sub(shift), shift)
    } else {
        let shift = pad - j;
        (shift.min(len), len, 0)
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    c_in: usize,
    len: usize,
    weight: &[f64],
    k: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: Option<&mut [f64]>,
) {
    let pad = (k - 1) / 2;
    let mut grad_in = grad_in;
    for (o, grow) in grad_out.chunks_exact(len).enumerate() {
        grad_b[o] += grow.iter().sum::<f64>();
        for c in 0..c_in {
            let irow = &input[c * len..(c + 1) * len];
            let base = (o * c_in + c) * k;
            for j in 0..k {
                let (t0, t1, s0) = conv_span(j, pad, len);
                let n = t1 - t0;
                let g = &grow[t0..t1];
                grad_w[base + j] += g
                    .iter()
                    .zip(&irow[s0..s0 + n])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                if let Some(gi) = grad_in.as_deref_mut() {
                    let wv = weight[base + j];
                    for (dst, gv) in gi[c * len + s0..c * len + s0 + n].iter_mut().zip(g) {
                        *dst += wv * gv;
                    }
                }
            }
        }
    }
}

fn avg_pool(input: &[f64], channels: usize, len: usize, size: usize) -> Vec<f64> {
    let out_len = len + 1 - size;
    let inv = 1.0 / size as f64;
    let mut out = Vec::with_capacity(channels * out_len);
    for row in input.chunks_exact(len) {
        let mut acc: f64 = row[..size].iter().sum();
        out.push(acc * inv);
        for t in 1..out_len {
            acc += row[t + size - 1] - row[t - 1];
            out.push(acc * inv);
        }
    }
    debug_assert_eq!(out.len(), channels * out_len);
    out
}

fn avg_pool_backward(grad_out: &[f64], len: usize, size: usize) -> Vec<f64> {
    let out_len = len + 1 - size;
    let inv = 1.0 / size as f64;
    let channels = grad_out.len() / out_len;
    let mut grad = vec![0.0; channels * len];
    for (c, g) in grad_out.chunks_exact(out_len).enumerate() {
        let dst = &mut grad[c * len..(c + 1) * len];
        for (t, &gv) in g.iter().enumerate() {
            for d in &mut dst[t..t + size] {
                *d += gv * inv;
            }
        }
    }
    grad
}

fn dense(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weight
        .chunks_exact(x.len())
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl WarperNetwork {
    /// He-uniform conv kernels with zero conv biases, narrow uniform head
    /// weights. Head biases start at slope 1
    /// and raw duration `T / K`, so a fresh network emits a near-identity warp.
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros(&cfg);
        let mut c_in = cfg.input_dim;
        for s in 0..3 {
            let fan_in = (c_in * cfg.conv_filter_sizes[s]) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for v in params.tensors[layout::conv_weight(s)].iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            c_in = cfg.conv_filter_counts[s];
        }
        let f = cfg.flatten_len() as f64;
        let bound = HEAD_INIT_SCALE / f.sqrt();
        for idx in [layout::HEAD_A_WEIGHT, layout::HEAD_T_WEIGHT] {
            for v in params.tensors[idx].iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        params.tensors[layout::HEAD_A_BIAS].fill(1.0);
        params.tensors[layout::HEAD_T_BIAS].fill(cfg.input_len as f64 / cfg.k as f64);
        let adam = AdamState {
            first: ParamSet::zeros(&cfg),
            second: ParamSet::zeros(&cfg),
            steps: 0,
        };
        Ok(Self {
            cfg,
            params,
            adam,
            seed,
        })
    }

    pub(crate) fn from_parts(
        cfg: NetConfig,
        params: ParamSet,
        adam: AdamState,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let shape = ParamSet::zeros(&cfg);
        if !params.same_shape(&shape)
            || !adam.first.same_shape(&shape)
            || !adam.second.same_shape(&shape)
        {
            return Err(Error::Integrity(
                "parameter shapes do not match the network config".into(),
            ));
        }
        Ok(Self {
            cfg,
            params,
            adam,
            seed,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.adam.steps
    }

    /// Returns `(slopes, raw_durations, tape)`.
    pub fn forward(&self, series: &Series) -> Result<(Vec<f64>, Vec<f64>, Tape)> {
        if series.len() != self.cfg.input_len || series.dim() != self.cfg.input_dim {
            return contract(format!(
                "network expects {}x{} input, got {}x{}",
                self.cfg.input_dim,
                self.cfg.input_len,
                series.dim(),
                series.len()
            ));
        }
        let mut x = series.values().to_vec();
        let mut len = self.cfg.input_len;
        let mut c_in = self.cfg.input_dim;
        let mut stages = Vec::with_capacity(3);
        for s in 0..3 {
            let k = self.cfg.conv_filter_sizes[s];
            let c_out = self.cfg.conv_filter_counts[s];
            let mut activ = conv_forward(
                &x,
                c_in,
                len,
                &self.params.tensors[layout::conv_weight(s)],
                &self.params.tensors[layout::conv_bias(s)],
                k,
            );
            activ.iter_mut().for_each(|v| *v = relu(*v));
            let pooled = avg_pool(&activ, c_out, len, self.cfg.pool_sizes[s]);
            stages.push(StageTape { input: x, activ });
            x = pooled;
            len = len + 1 - self.cfg.pool_sizes[s];
            c_in = c_out;
        }
        let head_a_pre = dense(
            &self.params.tensors[layout::HEAD_A_WEIGHT],
            &self.params.tensors[layout::HEAD_A_BIAS],
            &x,
        );
        let head_t_pre = dense(
            &self.params.tensors[layout::HEAD_T_WEIGHT],
            &self.params.tensors[layout::HEAD_T_BIAS],
            &x,
        );
        let slopes = head_a_pre.iter().map(|&v| relu(v)).collect();
        let raw = head_t_pre.iter().map(|&v| relu(v)).collect();
        let tape = Tape {
            stages,
            features: x,
            head_a_pre,
            head_t_pre,
            param_version: self.adam.steps,
            input_len: self.cfg.input_len,
        };
        Ok((slopes, raw, tape))
    }

    /// Gradients of every parameter given upstream gradients on the emitted
    /// slopes and raw durations. ReLU sub-gradient at exactly 0 is 0.
    pub fn backward(&self, tape: &Tape, grad_slopes: &[f64], grad_raw: &[f64]) -> Result<ParamSet> {
        if tape.param_version != self.adam.steps || tape.input_len != self.cfg.input_len {
            return contract("tape does not belong to the current parameters");
        }
        if grad_slopes.len() != self.cfg.k || grad_raw.len() != self.cfg.k {
            return contract(format!(
                "expected {} upstream gradients per head",
                self.cfg.k
            ));
        }
        let mut grads = ParamSet::zeros(&self.cfg);
        let f = tape.features.len();
        let mut g_feat = vec![0.0; f];
        for (pre, up, w_idx, b_idx) in [
            (
                &tape.head_a_pre,
                grad_slopes,
                layout::HEAD_A_WEIGHT,
                layout::HEAD_A_BIAS,
            ),
            (
                &tape.head_t_pre,
                grad_raw,
                layout::HEAD_T_WEIGHT,
                layout::HEAD_T_BIAS,
            ),
        ] {
            let weight = &self.params.tensors[w_idx];
            for (k, (&p, &u)) in pre.iter().zip(up).enumerate() {
                let g = if p > 0.0 { u } else { 0.0 };
                if g == 0.0 {
                    continue;
                }
                grads.tensors[b_idx][k] += g;
                let gw = &mut grads.tensors[w_idx][k * f..(k + 1) * f];
                for (gwv, &xv) in gw.iter_mut().zip(&tape.features) {
                    *gwv += g * xv;
                }
                for (gf, &wv) in g_feat.iter_mut().zip(&weight[k * f..(k + 1) * f]) {
                    *gf += g * wv;
                }
            }
        }

        let mut g_pooled = g_feat;
        for s in (0..3).rev() {
            let st = &tape.stages[s];
            let c_out = self.cfg.conv_filter_counts[s];
            let len = st.activ.len() / c_out;
            let c_in = st.input.len() / len;
            let mut g_act = avg_pool_backward(&g_pooled, len, self.cfg.pool_sizes[s]);
            for (g, &a) in g_act.iter_mut().zip(&st.activ) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let mut g_in = (s > 0).then(|| vec![0.0; c_in * len]);
            let (gw_slot, gb_slot) = grads.tensors.split_at_mut(layout::conv_bias(s));
            conv_backward(
                &st.input,
                c_in,
                len,
                &self.params.tensors[layout::conv_weight(s)],
                self.cfg.conv_filter_sizes[s],
                &g_act,
                &mut gw_slot[layout::conv_weight(s)],
                &mut gb_slot[0],
                g_in.as_deref_mut(),
            );
            if let Some(g) = g_in {
                g_pooled = g;
            } else {
                break;
            }
        }
        Ok(grads)
    }

    /// One adaptive-moment update. Rejects non-finite gradients without
    /// touching the parameters.
    pub fn step(&mut self, grads: &ParamSet, lr: f64) -> Result<()> {
        if !grads.same_shape(&self.params) {
            return contract("gradient shapes do not match the parameters");
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {pos}")));
        }
        self.adam.steps += 1;
        let t = self.adam.steps as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (((p, g), m), v) in self
            .params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.adam.first.tensors.iter_mut())
            .zip(self.adam.second.tensors.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}
