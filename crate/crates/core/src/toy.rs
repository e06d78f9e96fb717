//! Planar toy distributions, the training loop for the denoiser, and
//! guided sampling.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::boxes::{default_frequencies, fourier_embed};
use crate::denoiser::{ConditionTokens, DenoiserConfig, DenoiserError, DenoiserParams, TrainExample};
use crate::diffusion::{cfg_combine, ddim_sample, ddim_timesteps, ddpm_sample, NoiseSchedule, SigmaChoice};
use crate::optim::{AdamConfig, AdamState};

/// Fraction of training examples whose condition is replaced by the null token.
pub const DEFAULT_NULL_CONDITION_RATE: f64 = 0.3;

/// A labelled 2D point distribution. Each component has an anchor point
/// in `[-1, 1]²` that identifies it to the conditioning path.
pub trait ToyDataset {
    fn components(&self) -> usize;
    /// Anchor of component `k`, used to build its condition tokens.
    fn anchor(&self, k: usize) -> [f64; 2];
    fn sample_component<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> [f64; 2];

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ([f64; 2], usize) {
        let k = rng.random_range(0..self.components());
        (self.sample_component(k, rng), k)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Isotropic Gaussians evenly spaced on a circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianRing {
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for GaussianRing {
    fn default() -> Self {
        Self {
            modes: 8,
            radius: 3.0,
            sigma: 0.2,
        }
    }
}

impl GaussianRing {
    pub fn center(&self, k: usize) -> [f64; 2] {
        let (s, c) = libm::sincos(2.0 * PI * k as f64 / self.modes as f64);
        [self.radius * c, self.radius * s]
    }

    /// Mean and covariance (row-major 2×2) of the mixture.
    pub fn moments(&self) -> ([f64; 2], [f64; 4]) {
        let mut mean = [0.0; 2];
        let mut second = [0.0; 4];
        let w = 1.0 / self.modes as f64;
        for k in 0..self.modes {
            let m = self.center(k);
            mean[0] += w * m[0];
            mean[1] += w * m[1];
            second[0] += w * m[0] * m[0];
            second[1] += w * m[0] * m[1];
            second[3] += w * m[1] * m[1];
        }
        second[2] = second[1];
        let var = self.sigma * self.sigma;
        let cov = [
            second[0] - mean[0] * mean[0] + var,
            second[1] - mean[0] * mean[1],
            second[2] - mean[1] * mean[0],
            second[3] - mean[1] * mean[1] + var,
        ];
        (mean, cov)
    }
}

impl ToyDataset for GaussianRing {
    fn components(&self) -> usize {
        self.modes
    }

    fn anchor(&self, k: usize) -> [f64; 2] {
        let c = self.center(k);
        [c[0] / self.radius, c[1] / self.radius]
    }

    fn sample_component<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> [f64; 2] {
        let c = self.center(k);
        [c[0] + self.sigma * normal(rng), c[1] + self.sigma * normal(rng)]
    }
}

/// Two interleaved half circles, centered on the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoMoons {
    pub noise: f64,
}

impl Default for TwoMoons {
    fn default() -> Self {
        Self { noise: 0.1 }
    }
}

impl ToyDataset for TwoMoons {
    fn components(&self) -> usize {
        2
    }

    fn anchor(&self, k: usize) -> [f64; 2] {
        if k == 0 {
            [-0.5, 0.5]
        } else {
            [0.5, -0.5]
        }
    }

    fn sample_component<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> [f64; 2] {
        let a = rng.random::<f64>() * PI;
        let (s, c) = libm::sincos(a);
        let [x, y] = if k == 0 { [c, s] } else { [1.0 - c, 0.5 - s] };
        // Shift so the union is centered at the origin.
        [x - 0.5 + self.noise * normal(rng), y - 0.25 + self.noise * normal(rng)]
    }
}

/// Condition tokens for an anchor: one token per coordinate, each the
/// Fourier embedding of that coordinate at `freqs` frequencies
/// (`d_tok = 2·freqs`).
pub fn anchor_tokens(anchor: [f64; 2], freqs: usize) -> ConditionTokens {
    let f = default_frequencies(freqs);
    let mut data = fourier_embed(&anchor[..1], &f);
    data.extend(fourier_embed(&anchor[1..], &f));
    ConditionTokens::new(2, 2 * freqs, data).expect("two finite tokens")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Learning rate at the last step as a fraction of `adam.lr`; the rate
    /// follows a half cosine between the two. `1.0` keeps it constant.
    pub final_lr_fraction: f64,
    /// Decay of the exponential moving average of the weights; `0.0`
    /// makes the average track the live weights exactly.
    pub ema_decay: f64,
    pub null_condition_rate: f64,
    /// Fourier frequencies per anchor coordinate.
    pub fourier_freqs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 128,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
            final_lr_fraction: 0.05,
            ema_decay: 0.999,
            null_condition_rate: DEFAULT_NULL_CONDITION_RATE,
            fourier_freqs: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &DenoiserConfig) -> Result<(), DenoiserError> {
        if self.batch == 0 {
            return Err(DenoiserError::Config("batch must be positive"));
        }
        if !(0.0..=1.0).contains(&self.null_condition_rate) {
            return Err(DenoiserError::Config("null_condition_rate must lie in [0, 1]"));
        }
        if !(self.adam.lr >= 0.0 && self.adam.eps > 0.0) {
            return Err(DenoiserError::Config("lr must be >= 0 and eps > 0"));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(DenoiserError::Config("final_lr_fraction must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(DenoiserError::Config("ema_decay must lie in [0, 1)"));
        }
        if !((0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2)) {
            return Err(DenoiserError::Config("Adam betas must lie in [0, 1)"));
        }
        if model.data_dim != 2 {
            return Err(DenoiserError::Config("toy datasets are two-dimensional"));
        }
        if model.token_dim != 2 * self.fourier_freqs {
            return Err(DenoiserError::Config("token_dim must equal 2 * fourier_freqs"));
        }
        model.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights after the last step.
    pub params: DenoiserParams,
    /// Exponential moving average of the weights, the copy used for sampling.
    pub ema: DenoiserParams,
    pub initial: DenoiserParams,
    /// Mean batch loss at every step.
    pub losses: Vec<f64>,
}

/// Draws one training batch: data, condition (nulled at the configured
/// rate), uniform timestep and standard-normal noise.
pub fn draw_batch<D: ToyDataset, R: Rng + ?Sized>(
    data: &D,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Vec<TrainExample> {
    (0..cfg.batch)
        .map(|_| {
            let (x0, k) = data.sample(rng);
            let cond = if rng.random::<f64>() < cfg.null_condition_rate {
                None
            } else {
                Some(anchor_tokens(data.anchor(k), cfg.fourier_freqs))
            };
            TrainExample {
                x0: x0.to_vec(),
                t: rng.random_range(1..=schedule.steps()),
                noise: alloc::vec![normal(rng), normal(rng)],
                cond,
            }
        })
        .collect()
}

/// Half-cosine interpolation from 1 at the first step to `last` at the final one.
pub fn lr_factor(step: usize, steps: usize, last: f64) -> f64 {
    if steps <= 1 {
        return 1.0;
    }
    let progress = step as f64 / (steps - 1) as f64;
    last + (1.0 - last) * 0.5 * (1.0 + libm::cos(PI * progress))
}

/// Initializes a denoiser from `rng` and trains it with Adam.
/// Deterministic for a given generator state.
pub fn train<D: ToyDataset, R: Rng + ?Sized>(
    data: &D,
    model: DenoiserConfig,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome, DenoiserError> {
    cfg.validate(&model)?;
    let initial = DenoiserParams::init(model, rng)?;
    let mut params = initial.clone();
    let mut ema = initial.clone();
    let mut state = AdamState::new(params.num_params());
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut adam = cfg.adam;
    for step in 0..cfg.steps {
        adam.lr = cfg.adam.lr * lr_factor(step, cfg.steps, cfg.final_lr_fraction);
        let batch = draw_batch(data, schedule, cfg, rng);
        let (loss, grads) = params.backward(&batch, schedule)?;
        losses.push(loss);
        state.step(&mut params.tensors_mut(), &grads.tensors(), &adam);
        // Warm-up keeps the average from being dominated by the initial weights.
        let decay = cfg.ema_decay.min((1 + step) as f64 / (10 + step) as f64);
        for (e, p) in ema.tensors_mut().into_iter().zip(params.tensors()) {
            for (e, p) in e.iter_mut().zip(p) {
                *e = decay * *e + (1.0 - decay) * p;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        ema,
        initial,
        losses,
    })
}

/// Noise prediction under classifier-free guidance. Without a condition
/// (or at scale 1) only one network evaluation is made.
pub fn guided_eps(
    params: &DenoiserParams,
    x: &[f64],
    t: usize,
    total: usize,
    cond: Option<&ConditionTokens>,
    scale: f64,
) -> Result<Vec<f64>, DenoiserError> {
    match cond {
        None => params.forward(x, t, total, None),
        Some(c) if scale == 1.0 => params.forward(x, t, total, Some(c)),
        Some(c) => {
            let e_c = params.forward(x, t, total, Some(c))?;
            let e_u = params.forward(x, t, total, None)?;
            Ok(cfg_combine(&e_c, &e_u, scale)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Ddpm(SigmaChoice),
    /// DDIM with this many uniformly strided jumps.
    Ddim(usize),
}

/// Generates one sample starting from `x_start ~ N(0, I)`. `rng` supplies
/// the per-step noise of the ancestral sampler and is unused by DDIM.
pub fn generate<R: Rng + ?Sized>(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    sampler: Sampler,
    cond: Option<&ConditionTokens>,
    cfg_scale: f64,
    x_start: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>, DenoiserError> {
    let total = schedule.steps();
    let mut failure = None;
    let mut eps_fn = |x: &[f64], t: usize| match guided_eps(params, x, t, total, cond, cfg_scale) {
        Ok(e) => e,
        Err(e) => {
            failure.get_or_insert(e);
            alloc::vec![0.0; x.len()]
        }
    };
    let out = match sampler {
        Sampler::Ddim(steps) => {
            let ts = ddim_timesteps(total, steps)?;
            ddim_sample(schedule, &ts, x_start, &mut eps_fn)?
        }
        Sampler::Ddpm(sigma) => {
            let dim = x_start.len();
            ddpm_sample(schedule, x_start, sigma, &mut eps_fn, |_| {
                (0..dim).map(|_| normal(rng)).collect()
            })?
        }
    };
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
