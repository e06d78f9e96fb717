//! DDPM/DDIM machinery on flat sample vectors.
//!
//! Timesteps are 1-based: `t = 1..=T`. Table lookups at `t = 0` use the
//! convention `ᾱ_0 = 1`, which makes the last ancestral step and a DDIM
//! jump to `t_prev = 0` exact instead of special cases.
//!
//! Nothing here draws random numbers. Callers pass noise explicitly so
//! every sampler run can be replayed.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionError {
    InvalidRange,
    /// Betas must be nondecreasing.
    NonMonotone { step: usize },
    DimensionMismatch { expected: usize, actual: usize },
    StepOutOfRange { step: usize, max: usize },
    InvalidStepPair { t: usize, t_prev: usize },
    InvalidStride { steps: usize, total: usize },
}

impl fmt::Display for DiffusionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionError::InvalidRange => {
                f.write_str("schedule needs T >= 1 and 0 < beta_start <= beta_end < 1")
            }
            DiffusionError::NonMonotone { step } => {
                write!(f, "beta decreases at step {step}")
            }
            DiffusionError::DimensionMismatch { expected, actual } => {
                write!(f, "expected {expected} values, got {actual}")
            }
            DiffusionError::StepOutOfRange { step, max } => {
                write!(f, "timestep {step} outside 1..={max}")
            }
            DiffusionError::InvalidStepPair { t, t_prev } => {
                write!(f, "DDIM step needs t_prev < t, got t={t} t_prev={t_prev}")
            }
            DiffusionError::InvalidStride { steps, total } => {
                write!(f, "{steps} sampling steps do not evenly stride {total} timesteps")
            }
        }
    }
}

impl core::error::Error for DiffusionError {}

/// Which variance the ancestral sampler injects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaChoice {
    /// `σ_t² = β̃_t`, the true posterior variance.
    #[default]
    BetaTilde,
    /// `σ_t² = β_t`.
    Beta,
}

/// Precomputed tables for a fixed beta schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    // 1 - ᾱ_t accumulated as (1 - ᾱ_{t-1}) + ᾱ_{t-1}·β_t, which avoids the
    // cancellation of subtracting from 1 while ᾱ_t is close to 1.
    one_minus_alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas interpolated linearly from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidRange);
        }
        let beta = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    /// Betas whose square roots are linear in the step, endpoints inclusive.
    pub fn scaled_linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidRange);
        }
        let (lo, hi) = (libm::sqrt(beta_start), libm::sqrt(beta_end));
        let beta = (0..steps)
            .map(|i| {
                let r = if steps == 1 { lo } else { lo + (hi - lo) * i as f64 / (steps - 1) as f64 };
                r * r
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self, DiffusionError> {
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::InvalidRange);
        }
        if let Some(i) = beta.windows(2).position(|w| w[1] < w[0]) {
            return Err(DiffusionError::NonMonotone { step: i + 2 });
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut one_minus_alpha_bar = Vec::with_capacity(beta.len());
        let (mut acc, mut rest) = (1.0, 0.0);
        for (a, b) in alpha.iter().zip(&beta) {
            rest += acc * b;
            acc *= a;
            alpha_bar.push(acc);
            one_minus_alpha_bar.push(rest);
        }
        let beta_tilde = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 0.0 } else { one_minus_alpha_bar[i - 1] };
                prev / one_minus_alpha_bar[i] * beta[i]
            })
            .collect::<Vec<_>>();
        debug_assert!(beta_tilde.iter().zip(&beta).all(|(bt, b)| bt <= b));
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            one_minus_alpha_bar,
            beta_tilde,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta_tildes(&self) -> &[f64] {
        &self.beta_tilde
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// `1 - ᾱ_t`, with the value `0` at `t = 0`.
    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.one_minus_alpha_bar[t - 1]
        }
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    pub fn sigma(&self, t: usize, choice: SigmaChoice) -> f64 {
        libm::sqrt(match choice {
            SigmaChoice::BetaTilde => self.beta_tilde(t),
            SigmaChoice::Beta => self.beta(t),
        })
    }

    fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange {
                step: t,
                max: self.steps(),
            });
        }
        Ok(())
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), DiffusionError> {
    if a.len() != b.len() {
        return Err(DiffusionError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `x_t = √ᾱ_t·x0 + √(1-ᾱ_t)·noise`.
pub fn forward_sample(
    x0: &[f64],
    t: usize,
    noise: &[f64],
    s: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    s.check_step(t)?;
    check_dims(x0, noise)?;
    let (a, b) = (libm::sqrt(s.alpha_bar(t)), libm::sqrt(s.one_minus_alpha_bar(t)));
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

/// One step of the forward Markov chain, `x_t = √α_t·x_{t-1} + √β_t·noise`.
pub fn forward_step(
    x_prev: &[f64],
    t: usize,
    noise: &[f64],
    s: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    s.check_step(t)?;
    check_dims(x_prev, noise)?;
    let (a, b) = (libm::sqrt(s.alpha(t)), libm::sqrt(s.beta(t)));
    Ok(x_prev.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

/// Mean and variance of the Gaussian `q(x_{t-1} | x_t, x_0)`.
pub fn posterior_params(
    x0: &[f64],
    xt: &[f64],
    t: usize,
    s: &NoiseSchedule,
) -> Result<(Vec<f64>, f64), DiffusionError> {
    s.check_step(t)?;
    check_dims(x0, xt)?;
    let rest_t = s.one_minus_alpha_bar(t);
    let c0 = libm::sqrt(s.alpha_bar(t - 1)) * s.beta(t) / rest_t;
    let ct = libm::sqrt(s.alpha(t)) * s.one_minus_alpha_bar(t - 1) / rest_t;
    let mean = x0.iter().zip(xt).map(|(a, b)| c0 * a + ct * b).collect();
    Ok((mean, s.beta_tilde(t)))
}

/// Posterior mean written in terms of the noise, `(x_t - β_t/√(1-ᾱ_t)·ε)/√α_t`.
pub fn mu_from_eps(
    xt: &[f64],
    eps: &[f64],
    t: usize,
    s: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    s.check_step(t)?;
    check_dims(xt, eps)?;
    let k = s.beta(t) / libm::sqrt(s.one_minus_alpha_bar(t));
    let inv = 1.0 / libm::sqrt(s.alpha(t));
    Ok(xt.iter().zip(eps).map(|(x, e)| inv * (x - k * e)).collect())
}

/// Ancestral update `x_{t-1} = μ(x_t, ε̂) + σ_t·z`; `z` is ignored at `t = 1`.
pub fn ddpm_step(
    xt: &[f64],
    eps_pred: &[f64],
    t: usize,
    z: &[f64],
    s: &NoiseSchedule,
    sigma_choice: SigmaChoice,
) -> Result<Vec<f64>, DiffusionError> {
    check_dims(xt, z)?;
    let mut mean = mu_from_eps(xt, eps_pred, t, s)?;
    if t > 1 {
        let sigma = s.sigma(t, sigma_choice);
        for (m, zi) in mean.iter_mut().zip(z) {
            *m += sigma * zi;
        }
    }
    Ok(mean)
}

/// The data estimate implied by a noise prediction at step `t`.
pub fn predict_x0(xt: &[f64], eps_pred: &[f64], t: usize, s: &NoiseSchedule) -> Result<Vec<f64>, DiffusionError> {
    s.check_step(t)?;
    check_dims(xt, eps_pred)?;
    let (a, b) = (libm::sqrt(s.alpha_bar(t)), libm::sqrt(s.one_minus_alpha_bar(t)));
    Ok(xt.iter().zip(eps_pred).map(|(x, e)| (x - b * e) / a).collect())
}

/// Deterministic (η = 0) DDIM jump from `t` to `t_prev`.
pub fn ddim_step(
    xt: &[f64],
    eps_pred: &[f64],
    t: usize,
    t_prev: usize,
    s: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    if t_prev >= t {
        return Err(DiffusionError::InvalidStepPair { t, t_prev });
    }
    let x0 = predict_x0(xt, eps_pred, t, s)?;
    if t_prev == 0 {
        return Ok(x0);
    }
    let (a, b) = (libm::sqrt(s.alpha_bar(t_prev)), libm::sqrt(s.one_minus_alpha_bar(t_prev)));
    Ok(x0.iter().zip(eps_pred).map(|(x, e)| a * x + b * e).collect())
}

/// `uncond + scale·(cond - uncond)`.
pub fn cfg_combine(eps_cond: &[f64], eps_uncond: &[f64], scale: f64) -> Result<Vec<f64>, DiffusionError> {
    check_dims(eps_cond, eps_uncond)?;
    // The endpoints are returned as-is rather than through the affine form.
    if scale == 1.0 {
        return Ok(eps_cond.to_vec());
    }
    if scale == 0.0 {
        return Ok(eps_uncond.to_vec());
    }
    Ok(eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(c, u)| u + scale * (c - u))
        .collect())
}

/// Squared Euclidean distance between true and predicted noise.
pub fn simple_loss(eps_true: &[f64], eps_pred: &[f64]) -> Result<f64, DiffusionError> {
    check_dims(eps_true, eps_pred)?;
    Ok(eps_true
        .iter()
        .zip(eps_pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Uniformly strided DDIM timesteps `T, T-k, …, k, 0` for `steps` jumps.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>, DiffusionError> {
    if steps == 0 || steps > total || !total.is_multiple_of(steps) {
        return Err(DiffusionError::InvalidStride { steps, total });
    }
    let stride = total / steps;
    Ok((0..=steps).rev().map(|i| i * stride).collect())
}

/// Runs DDIM over `timesteps` (descending, ending at 0) from `x_start`.
///
/// `eps_fn(x_t, t)` is the noise predictor.
pub fn ddim_sample<F>(
    s: &NoiseSchedule,
    timesteps: &[usize],
    x_start: &[f64],
    mut eps_fn: F,
) -> Result<Vec<f64>, DiffusionError>
where
    F: FnMut(&[f64], usize) -> Vec<f64>,
{
    let mut x = x_start.to_vec();
    for pair in timesteps.windows(2) {
        let eps = eps_fn(&x, pair[0]);
        x = ddim_step(&x, &eps, pair[0], pair[1], s)?;
    }
    Ok(x)
}

/// Runs the full `T`-step ancestral chain from `x_start`.
///
/// `z_fn(t)` supplies the standard-normal draw for step `t` (unused at `t = 1`).
pub fn ddpm_sample<F, Z>(
    s: &NoiseSchedule,
    x_start: &[f64],
    sigma_choice: SigmaChoice,
    mut eps_fn: F,
    mut z_fn: Z,
) -> Result<Vec<f64>, DiffusionError>
where
    F: FnMut(&[f64], usize) -> Vec<f64>,
    Z: FnMut(usize) -> Vec<f64>,
{
    let mut x = x_start.to_vec();
    for t in (1..=s.steps()).rev() {
        let eps = eps_fn(&x, t);
        let z = if t > 1 { z_fn(t) } else { vec![0.0; x.len()] };
        x = ddpm_step(&x, &eps, t, &z, s, sigma_choice)?;
    }
    Ok(x)
}
