//! A small noise-prediction network `ε_θ(x_t, t, c)` with hand-written
//! gradients.
//!
//! Layout, for hidden sizes `[h_1, …, h_n]`:
//!
//! ```text
//! u_0 = [x_t ; timestep_embed(t)]
//! for each hidden layer l:
//!     h_l     = silu(W_l u_{l-1} + b_l)
//!     u_l     = h_l + g_l · Attn_l(h_l, c)          (gated cross-attention)
//! ε̂ = W_out u_n + b_out
//! ```
//!
//! `Attn_l` uses the hidden state as the single query and the condition
//! tokens as keys and values. Every gate `g_l` starts at exactly zero, so a
//! freshly initialized network ignores its condition entirely. A missing
//! condition is fed as one all-zero token, the null condition used for
//! classifier-free guidance.
//!
//! SiLU (`x·σ(x)`) is the nonlinearity: smooth, with a derivative defined
//! everywhere, which keeps finite-difference gradient checks meaningful.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::{forward_sample, DiffusionError, NoiseSchedule};

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserError {
    OddDim(usize),
    ShapeMismatch(&'static str),
    EmptyBatch,
    Diffusion(DiffusionError),
    Config(&'static str),
}

impl fmt::Display for DenoiserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserError::OddDim(d) => write!(f, "timestep embedding dimension {d} is odd"),
            DenoiserError::ShapeMismatch(what) => write!(f, "shape mismatch: {what}"),
            DenoiserError::EmptyBatch => f.write_str("empty batch"),
            DenoiserError::Diffusion(e) => write!(f, "{e}"),
            DenoiserError::Config(what) => write!(f, "invalid config: {what}"),
        }
    }
}

impl core::error::Error for DenoiserError {}

impl From<DiffusionError> for DenoiserError {
    fn from(e: DiffusionError) -> Self {
        DenoiserError::Diffusion(e)
    }
}

// Largest angular frequency of the timestep embedding.
const TIME_MAX_FREQ: f64 = 1000.0;

/// Sinusoidal embedding of `t / T`: `dim / 2` frequencies spaced
/// geometrically from 1 to 1000, sines first, then cosines.
pub fn timestep_embed(t: usize, total: usize, dim: usize) -> Result<Vec<f64>, DenoiserError> {
    if !dim.is_multiple_of(2) {
        return Err(DenoiserError::OddDim(dim));
    }
    let half = dim / 2;
    let s = t as f64 / total as f64;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = if half == 1 {
            1.0
        } else {
            libm::pow(TIME_MAX_FREQ, k as f64 / (half - 1) as f64)
        };
        let (sin, cos) = libm::sincos(s * freq);
        out[k] = sin;
        out[half + k] = cos;
    }
    Ok(out)
}

/// `M` condition tokens of dimension `d_tok`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTokens {
    count: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ConditionTokens {
    pub fn new(count: usize, dim: usize, data: Vec<f64>) -> Result<Self, DenoiserError> {
        if count == 0 || data.len() != count * dim {
            return Err(DenoiserError::ShapeMismatch("condition tokens"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DenoiserError::ShapeMismatch("condition tokens must be finite"));
        }
        Ok(Self { count, dim, data })
    }

    /// One all-zero token: the null condition.
    pub fn null(dim: usize) -> Self {
        Self {
            count: 1,
            dim,
            data: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub data_dim: usize,
    pub time_embed_dim: usize,
    pub hidden: Vec<usize>,
    pub token_dim: usize,
    /// Attention key/query width; defaults to `token_dim`.
    pub head_dim: usize,
}

impl DenoiserConfig {
    pub fn new(data_dim: usize, time_embed_dim: usize, hidden: Vec<usize>, token_dim: usize) -> Self {
        Self {
            data_dim,
            time_embed_dim,
            hidden,
            token_dim,
            head_dim: token_dim,
        }
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        if self.data_dim == 0 {
            return Err(DenoiserError::Config("data_dim must be positive"));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(DenoiserError::OddDim(self.time_embed_dim));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(DenoiserError::Config("need at least one nonempty hidden layer"));
        }
        if self.token_dim == 0 || self.head_dim == 0 {
            return Err(DenoiserError::Config("token and head dims must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed_dim
    }
}

/// Dense layer, `y = W x + b` with `W` stored `out × in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weight.chunks_exact(self.in_dim).zip(&self.bias) {
            out.push(b + dot(row, x));
        }
    }
}

/// Gated cross-attention adapter on a hidden layer of width `d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    /// `d_head × d_h`
    pub w_q: Vec<f64>,
    /// `d_head × d_tok`
    pub w_k: Vec<f64>,
    /// `d_h × d_tok`
    pub w_v: Vec<f64>,
    pub gate: f64,
}

impl Adapter {
    fn zeros(hidden: usize, token_dim: usize, head_dim: usize) -> Self {
        Self {
            w_q: vec![0.0; head_dim * hidden],
            w_k: vec![0.0; head_dim * token_dim],
            w_v: vec![0.0; hidden * token_dim],
            gate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Linear>,
    pub adapters: Vec<Adapter>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `out = M v` for `M` of shape `rows × v.len()`.
fn matvec(m: &[f64], v: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(m.chunks_exact(v.len()).map(|row| dot(row, v)));
}

/// `out += Mᵀ v` for `M` of shape `v.len() × out.len()`.
fn matvec_t_acc(m: &[f64], v: &[f64], out: &mut [f64]) {
    for (row, &vi) in m.chunks_exact(out.len()).zip(v) {
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * vi;
        }
    }
}

/// `M += a bᵀ`.
fn outer_acc(m: &mut [f64], a: &[f64], b: &[f64]) {
    for (row, &ai) in m.chunks_exact_mut(b.len()).zip(a) {
        for (w, &bj) in row.iter_mut().zip(b) {
            *w += ai * bj;
        }
    }
}

/// Row-wise stable softmax in place.
pub fn softmax(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = libm::exp(*s - max);
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Intermediate values of one adapter application, kept for backprop.
#[derive(Debug, Clone, Default)]
struct AttnCache {
    query: Vec<f64>,
    keys: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
    attended: Vec<f64>,
}

fn attend(adapter: &Adapter, h: &[f64], c: &ConditionTokens, head_dim: usize) -> AttnCache {
    let d_h = h.len();
    let mut query = Vec::with_capacity(head_dim);
    matvec(&adapter.w_q, h, &mut query);
    let mut keys = Vec::with_capacity(c.count * head_dim);
    let mut values = Vec::with_capacity(c.count * d_h);
    let mut buf = Vec::new();
    for j in 0..c.count {
        matvec(&adapter.w_k, c.token(j), &mut buf);
        keys.extend_from_slice(&buf);
        matvec(&adapter.w_v, c.token(j), &mut buf);
        values.extend_from_slice(&buf);
    }
    let scale = 1.0 / libm::sqrt(head_dim as f64);
    let mut weights: Vec<f64> = keys.chunks_exact(head_dim).map(|k| dot(&query, k) * scale).collect();
    softmax(&mut weights);
    let mut attended = vec![0.0; d_h];
    for (p, v) in weights.iter().zip(values.chunks_exact(d_h)) {
        for (a, &vi) in attended.iter_mut().zip(v) {
            *a += p * vi;
        }
    }
    AttnCache {
        query,
        keys,
        values,
        weights,
        attended,
    }
}

/// `h + g · softmax(Q Kᵀ / √d_head) V` for each row of `h` (`N × d_h`),
/// with `Q` from `h` and `K`, `V` from the condition tokens.
pub fn gated_cross_attention(
    h: &[f64],
    d_h: usize,
    c: &ConditionTokens,
    adapter: &Adapter,
    head_dim: usize,
) -> Result<Vec<f64>, DenoiserError> {
    if d_h == 0 || !h.len().is_multiple_of(d_h) {
        return Err(DenoiserError::ShapeMismatch("features"));
    }
    if adapter.w_q.len() != head_dim * d_h
        || adapter.w_k.len() != head_dim * c.dim
        || adapter.w_v.len() != d_h * c.dim
    {
        return Err(DenoiserError::ShapeMismatch("adapter projections"));
    }
    let mut out = Vec::with_capacity(h.len());
    for row in h.chunks_exact(d_h) {
        let cache = attend(adapter, row, c, head_dim);
        out.extend(row.iter().zip(&cache.attended).map(|(x, a)| x + adapter.gate * a));
    }
    Ok(out)
}

/// Forward-pass activations of one sample.
struct Trace {
    /// Input of every linear layer (`u_0 … u_n`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Post-activation hidden states before the adapter.
    hidden: Vec<Vec<f64>>,
    attn: Vec<AttnCache>,
    output: Vec<f64>,
}

impl DenoiserParams {
    /// All weights zero, gates zero.
    pub fn zeros(config: DenoiserConfig) -> Result<Self, DenoiserError> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.hidden.len() + 1);
        let mut adapters = Vec::with_capacity(config.hidden.len());
        let mut width = config.input_dim();
        for &h in &config.hidden {
            layers.push(Linear::zeros(width, h));
            adapters.push(Adapter::zeros(h, config.token_dim, config.head_dim));
            width = h;
        }
        layers.push(Linear::zeros(width, config.data_dim));
        Ok(Self {
            config,
            layers,
            adapters,
        })
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases, zero gates.
    pub fn init<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self, DenoiserError> {
        let mut p = Self::zeros(config)?;
        let mut fill = |w: &mut [f64], fan_in: usize| {
            let std = 1.0 / libm::sqrt(fan_in as f64);
            for v in w.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = std * z;
            }
        };
        let (d_tok, hidden) = (p.config.token_dim, p.config.hidden.clone());
        for (l, layer) in p.layers.iter_mut().enumerate() {
            fill(&mut layer.weight, layer.in_dim);
            if let Some(a) = p.adapters.get_mut(l) {
                fill(&mut a.w_q, hidden[l]);
                fill(&mut a.w_k, d_tok);
                fill(&mut a.w_v, d_tok);
            }
        }
        Ok(p)
    }

    /// Rebuilds parameters from tensors in [`Self::tensors`] order.
    pub fn from_tensors(config: DenoiserConfig, tensors: &[Vec<f64>]) -> Result<Self, DenoiserError> {
        let mut p = Self::zeros(config)?;
        let mut slots = p.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(DenoiserError::ShapeMismatch("tensor count"));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.len() != t.len() {
                return Err(DenoiserError::ShapeMismatch("tensor length"));
            }
            slot.copy_from_slice(t);
        }
        drop(slots);
        if p.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(DenoiserError::ShapeMismatch("non-finite parameter"));
        }
        Ok(p)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    /// Parameter tensors in declaration order: for each hidden layer its
    /// weight, bias, `W_Q`, `W_K`, `W_V` and gate; then the output weight and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(6 * self.adapters.len() + 2);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(&layer.weight);
            out.push(&layer.bias);
            if let Some(a) = self.adapters.get(l) {
                out.push(&a.w_q);
                out.push(&a.w_k);
                out.push(&a.w_v);
                out.push(core::slice::from_ref(&a.gate));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(6 * self.adapters.len() + 2);
        let mut adapters = self.adapters.iter_mut();
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if let Some(a) = adapters.next() {
                out.push(&mut a.w_q);
                out.push(&mut a.w_k);
                out.push(&mut a.w_v);
                out.push(core::slice::from_mut(&mut a.gate));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Same shapes, all zeros; the container gradients accumulate into.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone()).expect("config already validated")
    }

    fn check_inputs(&self, x: &[f64], c: Option<&ConditionTokens>) -> Result<(), DenoiserError> {
        if x.len() != self.config.data_dim {
            return Err(DenoiserError::ShapeMismatch("sample dimension"));
        }
        if let Some(c) = c {
            if c.dim != self.config.token_dim {
                return Err(DenoiserError::ShapeMismatch("token dimension"));
            }
        }
        Ok(())
    }

    fn trace(&self, x: &[f64], temb: &[f64], c: &ConditionTokens) -> Trace {
        let n_hidden = self.adapters.len();
        let mut inputs = Vec::with_capacity(n_hidden + 1);
        let mut pre = Vec::with_capacity(n_hidden);
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut attn = Vec::with_capacity(n_hidden);
        let mut u: Vec<f64> = x.iter().chain(temb).copied().collect();
        for (layer, adapter) in self.layers.iter().zip(&self.adapters) {
            let mut a = Vec::with_capacity(layer.out_dim);
            layer.apply(&u, &mut a);
            let h: Vec<f64> = a.iter().map(|&v| silu(v)).collect();
            let cache = attend(adapter, &h, c, self.config.head_dim);
            let next = h
                .iter()
                .zip(&cache.attended)
                .map(|(x, a)| x + adapter.gate * a)
                .collect();
            inputs.push(core::mem::replace(&mut u, next));
            pre.push(a);
            hidden.push(h);
            attn.push(cache);
        }
        let mut output = Vec::with_capacity(self.config.data_dim);
        self.layers[n_hidden].apply(&u, &mut output);
        inputs.push(u);
        Trace {
            inputs,
            pre,
            hidden,
            attn,
            output,
        }
    }

    /// Noise prediction for `x_t` at step `t` of a `total`-step schedule.
    pub fn forward(
        &self,
        x_t: &[f64],
        t: usize,
        total: usize,
        c: Option<&ConditionTokens>,
    ) -> Result<Vec<f64>, DenoiserError> {
        self.check_inputs(x_t, c)?;
        let temb = timestep_embed(t, total, self.config.time_embed_dim)?;
        let null;
        let c = match c {
            Some(c) => c,
            None => {
                null = ConditionTokens::null(self.config.token_dim);
                &null
            }
        };
        Ok(self.trace(x_t, &temb, c).output)
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂ε̂ = d_out`.
    fn backprop(&self, tr: &Trace, d_out: &[f64], c: &ConditionTokens, grads: &mut DenoiserParams) {
        let n_hidden = self.adapters.len();
        let head_dim = self.config.head_dim;
        let scale = 1.0 / libm::sqrt(head_dim as f64);

        let out_layer = &self.layers[n_hidden];
        let g_out = &mut grads.layers[n_hidden];
        outer_acc(&mut g_out.weight, d_out, &tr.inputs[n_hidden]);
        for (b, d) in g_out.bias.iter_mut().zip(d_out) {
            *b += d;
        }
        let mut du = vec![0.0; out_layer.in_dim];
        matvec_t_acc(&out_layer.weight, d_out, &mut du);

        for l in (0..n_hidden).rev() {
            let adapter = &self.adapters[l];
            let cache = &tr.attn[l];
            let h = &tr.hidden[l];
            let d_h = h.len();
            let ga = &mut grads.adapters[l];

            // u = h + g·A
            ga.gate += dot(&du, &cache.attended);
            let d_att: Vec<f64> = du.iter().map(|d| adapter.gate * d).collect();
            let mut dh = du;

            // A = Σ_j p_j v_j
            let dp: Vec<f64> = cache.values.chunks_exact(d_h).map(|v| dot(&d_att, v)).collect();
            let mean_dp = dot(&cache.weights, &dp);
            let mut d_query = vec![0.0; head_dim];
            for j in 0..c.count {
                let p = cache.weights[j];
                let ds = p * (dp[j] - mean_dp) * scale;
                let key = &cache.keys[j * head_dim..(j + 1) * head_dim];
                for (q, &k) in d_query.iter_mut().zip(key) {
                    *q += ds * k;
                }
                let d_key: Vec<f64> = cache.query.iter().map(|q| ds * q).collect();
                outer_acc(&mut ga.w_k, &d_key, c.token(j));
                let d_val: Vec<f64> = d_att.iter().map(|d| p * d).collect();
                outer_acc(&mut ga.w_v, &d_val, c.token(j));
            }
            outer_acc(&mut ga.w_q, &d_query, h);
            matvec_t_acc(&adapter.w_q, &d_query, &mut dh);

            // h = silu(a)
            let da: Vec<f64> = dh.iter().zip(&tr.pre[l]).map(|(d, &a)| d * silu_grad(a)).collect();
            let layer = &self.layers[l];
            let gl = &mut grads.layers[l];
            outer_acc(&mut gl.weight, &da, &tr.inputs[l]);
            for (b, d) in gl.bias.iter_mut().zip(&da) {
                *b += d;
            }
            du = vec![0.0; layer.in_dim];
            if l > 0 {
                matvec_t_acc(&layer.weight, &da, &mut du);
            }
        }
    }

    /// Mean simple loss over the batch and its exact gradient.
    pub fn backward(
        &self,
        batch: &[TrainExample],
        schedule: &NoiseSchedule,
    ) -> Result<(f64, DenoiserParams), DenoiserError> {
        if batch.is_empty() {
            return Err(DenoiserError::EmptyBatch);
        }
        let total = schedule.steps();
        let n = batch.len() as f64;
        let mut grads = self.zeros_like();
        let mut loss = 0.0;
        let null = ConditionTokens::null(self.config.token_dim);
        for ex in batch {
            self.check_inputs(&ex.x0, ex.cond.as_ref())?;
            if ex.noise.len() != ex.x0.len() {
                return Err(DenoiserError::ShapeMismatch("noise dimension"));
            }
            let x_t = forward_sample(&ex.x0, ex.t, &ex.noise, schedule)?;
            let temb = timestep_embed(ex.t, total, self.config.time_embed_dim)?;
            let c = ex.cond.as_ref().unwrap_or(&null);
            let tr = self.trace(&x_t, &temb, c);
            let mut d_out = Vec::with_capacity(tr.output.len());
            for (pred, e) in tr.output.iter().zip(&ex.noise) {
                let r = pred - e;
                loss += r * r;
                d_out.push(2.0 * r / n);
            }
            self.backprop(&tr, &d_out, c, &mut grads);
        }
        Ok((loss / n, grads))
    }

    /// Mean simple loss without gradients.
    pub fn loss(&self, batch: &[TrainExample], schedule: &NoiseSchedule) -> Result<f64, DenoiserError> {
        if batch.is_empty() {
            return Err(DenoiserError::EmptyBatch);
        }
        let mut total = 0.0;
        for ex in batch {
            let x_t = forward_sample(&ex.x0, ex.t, &ex.noise, schedule)?;
            let pred = self.forward(&x_t, ex.t, schedule.steps(), ex.cond.as_ref())?;
            total += crate::diffusion::simple_loss(&ex.noise, &pred)?;
        }
        Ok(total / batch.len() as f64)
    }
}

/// One training example: data point, timestep, the noise that corrupts it
/// and an optional condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub x0: Vec<f64>,
    pub t: usize,
    pub noise: Vec<f64>,
    pub cond: Option<ConditionTokens>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(7)
    }

    fn small_config() -> DenoiserConfig {
        DenoiserConfig::new(2, 8, vec![6, 5], 4)
    }

    #[test]
    fn timestep_embedding_examples() {
        let e = timestep_embed(0, 200, 16).unwrap();
        assert!(e[..8].iter().all(|&v| v == 0.0));
        assert!(e[8..].iter().all(|&v| v == 1.0));
        assert_eq!(timestep_embed(17, 200, 16).unwrap(), timestep_embed(17, 200, 16).unwrap());
        assert_eq!(timestep_embed(3, 200, 15), Err(DenoiserError::OddDim(15)));
    }

    #[test]
    fn timestep_embeddings_are_distinct() {
        let all: Vec<_> = (1..=200).map(|t| timestep_embed(t, 200, 16).unwrap()).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let gap = all[i].iter().zip(&all[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(gap > 1e-6, "t={} and t={}", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn zero_params_output_final_bias() {
        let mut p = DenoiserParams::zeros(small_config()).unwrap();
        let out = p.forward(&[0.3, -2.0], 5, 10, None).unwrap();
        assert_eq!(out, [0.0, 0.0]);
        p.layers[2].bias = vec![0.25, -1.5];
        let c = ConditionTokens::new(2, 4, vec![1.0; 8]).unwrap();
        assert_eq!(p.forward(&[0.3, -2.0], 5, 10, Some(&c)).unwrap(), [0.25, -1.5]);
    }

    #[test]
    fn forward_is_deterministic() {
        let p = DenoiserParams::init(small_config(), &mut rng()).unwrap();
        let a = p.forward(&[0.1, 0.2], 3, 10, None).unwrap();
        assert_eq!(a, p.forward(&[0.1, 0.2], 3, 10, None).unwrap());
    }

    #[test]
    fn gates_start_at_zero_and_ignore_condition() {
        let p = DenoiserParams::init(small_config(), &mut rng()).unwrap();
        assert!(p.adapters.iter().all(|a| a.gate == 0.0));
        let c = ConditionTokens::new(3, 4, (0..12).map(|i| i as f64 * 0.7 - 3.0).collect()).unwrap();
        let with = p.forward(&[0.4, -0.9], 7, 10, Some(&c)).unwrap();
        let without = p.forward(&[0.4, -0.9], 7, 10, None).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn shape_errors() {
        let p = DenoiserParams::zeros(small_config()).unwrap();
        assert!(p.forward(&[0.0], 1, 10, None).is_err());
        let c = ConditionTokens::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(p.forward(&[0.0, 0.0], 1, 10, Some(&c)).is_err());
        assert!(ConditionTokens::new(2, 3, vec![0.0; 5]).is_err());
        assert!(DenoiserParams::zeros(DenoiserConfig::new(2, 7, vec![4], 2)).is_err());
        assert!(DenoiserParams::zeros(DenoiserConfig::new(2, 8, vec![], 2)).is_err());
        let s = NoiseSchedule::linear(10, 0.01, 0.1).unwrap();
        assert_eq!(p.backward(&[], &s), Err(DenoiserError::EmptyBatch));
    }

    #[test]
    fn attention_single_token_returns_its_value() {
        let adapter = Adapter {
            w_q: vec![0.5, -1.0, 2.0, 0.3, 0.1, 0.7],
            w_k: vec![1.0, 0.0, 0.0, 1.0],
            w_v: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            gate: 1.0,
        };
        let c = ConditionTokens::new(1, 2, vec![0.5, -0.5]).unwrap();
        let h = [0.2, 0.4, -0.6, 1.0, 1.0, 1.0];
        let out = gated_cross_attention(&h, 3, &c, &adapter, 2).unwrap();
        let v = [1.0 * 0.5 - 2.0 * 0.5, 3.0 * 0.5 - 4.0 * 0.5, 5.0 * 0.5 - 6.0 * 0.5];
        for row in 0..2 {
            for k in 0..3 {
                assert!((out[row * 3 + k] - h[row * 3 + k] - v[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_equal_keys_average_values() {
        // W_K ignores the second coordinate, so both tokens get the same key.
        let adapter = Adapter {
            w_q: vec![1.0, 1.0],
            w_k: vec![1.0, 0.0],
            w_v: vec![0.0, 1.0, 0.0, 1.0],
            gate: 1.0,
        };
        let c = ConditionTokens::new(2, 2, vec![0.3, 2.0, 0.3, -4.0]).unwrap();
        let out = gated_cross_attention(&[0.5, 0.5], 2, &c, &adapter, 1).unwrap();
        // Two identical scores give weights 1/2 each.
        let expect = 0.5 + 0.5 * 2.0 + 0.5 * -4.0;
        assert!((out[0] - expect).abs() < 1e-15);
        assert!((out[1] - expect).abs() < 1e-15);

        let swapped = ConditionTokens::new(2, 2, vec![0.3, -4.0, 0.3, 2.0]).unwrap();
        let out2 = gated_cross_attention(&[0.5, 0.5], 2, &swapped, &adapter, 1).unwrap();
        assert!((out[0] - out2[0]).abs() < 1e-15);
    }

    #[test]
    fn zero_gate_is_identity() {
        let adapter = Adapter {
            w_q: vec![3.0, -1.0],
            w_k: vec![2.0, 1.0],
            w_v: vec![10.0, -7.0, 1.0, 5.0],
            gate: 0.0,
        };
        let c = ConditionTokens::new(2, 2, vec![1.0, 2.0, -3.0, 4.0]).unwrap();
        let h = [0.25, -0.75];
        assert_eq!(gated_cross_attention(&h, 2, &c, &adapter, 1).unwrap(), h);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut s = [1000.0, 999.0, -50.0, 0.0];
        softmax(&mut s);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tensor_round_trip() {
        let p = DenoiserParams::init(small_config(), &mut rng()).unwrap();
        let tensors: Vec<Vec<f64>> = p.tensors().iter().map(|t| t.to_vec()).collect();
        assert_eq!(tensors.len(), 2 * 6 + 2);
        let q = DenoiserParams::from_tensors(small_config(), &tensors).unwrap();
        assert_eq!(p, q);
        assert!(DenoiserParams::from_tensors(small_config(), &tensors[1..]).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_output_gradient() {
        let s = NoiseSchedule::linear(10, 0.01, 0.1).unwrap();
        let mut p = DenoiserParams::zeros(small_config()).unwrap();
        p.layers[2].bias = vec![0.3, -0.4];
        let batch = [TrainExample {
            x0: vec![1.0, 2.0],
            t: 4,
            noise: vec![0.3, -0.4],
            cond: None,
        }];
        let (loss, grads) = p.backward(&batch, &s).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.layers[2].weight.iter().chain(&grads.layers[2].bias).all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_loss_and_grads() {
        let s = NoiseSchedule::linear(10, 0.01, 0.1).unwrap();
        let mut p = DenoiserParams::init(small_config(), &mut rng()).unwrap();
        p.adapters[0].gate = 0.4;
        let c = ConditionTokens::new(2, 4, vec![0.1, 0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8]).unwrap();
        let batch = vec![
            TrainExample { x0: vec![1.0, 2.0], t: 4, noise: vec![0.3, -0.4], cond: Some(c) },
            TrainExample { x0: vec![-1.0, 0.5], t: 9, noise: vec![1.3, 0.2], cond: None },
        ];
        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let (l1, g1) = p.backward(&batch, &s).unwrap();
        let (l2, g2) = p.backward(&doubled, &s).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
        assert!((p.loss(&batch, &s).unwrap() - l1).abs() < 1e-12);
    }
}
