//! Experiment configuration, read from TOML.
//!
//! Every section and key is optional and falls back to the defaults
//! below; unknown keys are rejected. Example:
//!
//! ```toml
//! seed = 7
//!
//! [schedule]
//! steps = 200
//! family = "linear"        # or "scaled_linear"
//! beta_start = 5e-4
//! beta_end = 0.1
//! sigma = "beta_tilde"     # or "beta"
//!
//! [denoiser]
//! hidden = [128, 128]
//! time_embed_dim = 16
//! fourier_freqs = 4        # token_dim = 2 * fourier_freqs
//! token_dim = 8
//!
//! [training]
//! dataset = "ring"         # or "moons"
//! steps = 20000
//! batch = 128
//! lr = 1e-3
//! final_lr_fraction = 0.05
//! ema_decay = 0.999
//! null_condition_rate = 0.3
//!
//! [sampling]
//! sampler = "ddim"         # or "ddpm"
//! steps = 50
//! cfg_scale = 1.0
//! count = 1000
//!
//! [norm]
//! lambda = 4.0
//! alpha = 0.5
//!
//! [viewport]
//! side = 256
//! min_coverage = 0.2
//!
//! [scene]
//! width = 1096
//! ground_z = -1.8
//! rings = 24
//! points_per_ring = 720
//! object_center = [12.0, 3.0, -0.95]
//! object_size = [4.5, 1.9, 1.6]
//! object_yaw = 0.4
//! object_points = 400
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use rangediff_core::boxes::DEFAULT_MIN_COVERAGE;
use rangediff_core::denoiser::DenoiserConfig;
use rangediff_core::diffusion::{ddim_timesteps, NoiseSchedule, SigmaChoice};
use rangediff_core::norm::{DEFAULT_ALPHA, DEFAULT_LAMBDA};
use rangediff_core::optim::AdamConfig;
use rangediff_core::range_view::{BEAM_COUNT, DEFAULT_WIDTH};
use rangediff_core::synth::{ObjectPose, SceneConfig};
use rangediff_core::toy::{TrainConfig, DEFAULT_NULL_CONDITION_RATE};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub schedule: ScheduleSection,
    pub denoiser: DenoiserSection,
    pub training: TrainingSection,
    pub sampling: SamplingSection,
    pub norm: NormSection,
    pub viewport: ViewportSection,
    pub scene: SceneSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            schedule: ScheduleSection::default(),
            denoiser: DenoiserSection::default(),
            training: TrainingSection::default(),
            sampling: SamplingSection::default(),
            norm: NormSection::default(),
            viewport: ViewportSection::default(),
            scene: SceneSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Linear,
    /// Linear in `√β`.
    ScaledLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    BetaTilde,
    Beta,
}

impl From<SigmaKind> for SigmaChoice {
    fn from(k: SigmaKind) -> Self {
        match k {
            SigmaKind::BetaTilde => SigmaChoice::BetaTilde,
            SigmaKind::Beta => SigmaChoice::Beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub steps: usize,
    pub family: ScheduleFamily,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma: SigmaKind,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 200,
            family: ScheduleFamily::Linear,
            beta_start: 5e-4,
            beta_end: 0.1,
            sigma: SigmaKind::BetaTilde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub token_dim: usize,
    pub fourier_freqs: usize,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            time_embed_dim: 16,
            token_dim: 8,
            fourier_freqs: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Ring,
    Moons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub dataset: Dataset,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub final_lr_fraction: f64,
    pub ema_decay: f64,
    pub null_condition_rate: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: Dataset::Ring,
            steps: t.steps,
            batch: t.batch,
            lr: t.adam.lr,
            final_lr_fraction: t.final_lr_fraction,
            ema_decay: t.ema_decay,
            null_condition_rate: DEFAULT_NULL_CONDITION_RATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddim,
    Ddpm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub sampler: SamplerKind,
    /// DDIM jumps; must divide `schedule.steps`. Ignored by DDPM.
    pub steps: usize,
    pub cfg_scale: f64,
    pub count: usize,
    /// Condition every sample on this dataset component; unconditional when absent.
    pub component: Option<usize>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Ddim,
            steps: 50,
            cfg_scale: 1.0,
            count: 1000,
            component: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormSection {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for NormSection {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewportSection {
    pub side: usize,
    pub min_coverage: f64,
}

impl Default for ViewportSection {
    fn default() -> Self {
        Self {
            side: 256,
            min_coverage: DEFAULT_MIN_COVERAGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub width: usize,
    pub ground_z: f64,
    pub rings: usize,
    pub points_per_ring: usize,
    pub object_center: [f64; 3],
    pub object_size: [f64; 3],
    pub object_yaw: f64,
    pub object_points: usize,
}

impl Default for SceneSection {
    fn default() -> Self {
        let s = SceneConfig::default();
        Self {
            width: DEFAULT_WIDTH,
            ground_z: s.ground_z,
            rings: s.rings,
            points_per_ring: s.points_per_ring,
            object_center: s.object.center,
            object_size: s.object.size,
            object_yaw: s.object.yaw,
            object_points: s.object_points,
        }
    }
}

fn require(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn finite_all(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every value against the domain of the module that uses it.
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        require(s.steps > 0, || "schedule.steps must be positive".into())?;
        require(s.beta_start > 0.0 && s.beta_end < 1.0, || {
            format!(
                "schedule betas must lie in (0, 1); got beta_start = {}, beta_end = {}",
                s.beta_start, s.beta_end
            )
        })?;
        require(s.beta_start <= s.beta_end, || {
            format!(
                "schedule is not monotone: beta_end ({}) < beta_start ({}); swap them",
                s.beta_end, s.beta_start
            )
        })?;

        let d = &self.denoiser;
        require(!d.hidden.is_empty() && d.hidden.iter().all(|&h| h > 0), || {
            "denoiser.hidden needs at least one positive width".into()
        })?;
        require(d.time_embed_dim > 0 && d.time_embed_dim.is_multiple_of(2), || {
            format!("denoiser.time_embed_dim must be positive and even, got {}", d.time_embed_dim)
        })?;
        require(d.fourier_freqs > 0, || "denoiser.fourier_freqs must be positive".into())?;
        require(d.token_dim == 2 * d.fourier_freqs, || {
            format!(
                "denoiser.token_dim ({}) must equal 2 * fourier_freqs ({})",
                d.token_dim,
                2 * d.fourier_freqs
            )
        })?;

        let t = &self.training;
        require(t.batch > 0, || "training.batch must be positive".into())?;
        require(t.lr >= 0.0 && t.lr.is_finite(), || format!("training.lr must be >= 0, got {}", t.lr))?;
        require((0.0..=1.0).contains(&t.final_lr_fraction), || {
            format!("training.final_lr_fraction must lie in [0, 1], got {}", t.final_lr_fraction)
        })?;
        require((0.0..1.0).contains(&t.ema_decay), || {
            format!("training.ema_decay must lie in [0, 1), got {}", t.ema_decay)
        })?;
        require((0.0..=1.0).contains(&t.null_condition_rate), || {
            format!("training.null_condition_rate must lie in [0, 1], got {}", t.null_condition_rate)
        })?;

        let sm = &self.sampling;
        require(sm.cfg_scale.is_finite(), || "sampling.cfg_scale must be finite".into())?;
        if sm.sampler == SamplerKind::Ddim {
            ddim_timesteps(s.steps, sm.steps).map_err(|e| {
                Error::Config(format!(
                    "sampling.steps = {} with schedule.steps = {}: {e} (the step count must divide T)",
                    sm.steps, s.steps
                ))
            })?;
        }

        let n = &self.norm;
        require(n.lambda > 0.0 && n.lambda.is_finite(), || {
            format!("norm.lambda must be positive, got {}", n.lambda)
        })?;
        require(n.alpha > 0.0 && n.alpha < 1.0, || format!("norm.alpha must lie in (0, 1), got {}", n.alpha))?;

        let v = &self.viewport;
        require(v.side > 0 && v.side.is_multiple_of(BEAM_COUNT), || {
            format!("viewport.side must be a positive multiple of {BEAM_COUNT}, got {}", v.side)
        })?;
        require(v.min_coverage > 0.0 && v.min_coverage <= 1.0, || {
            format!("viewport.min_coverage must lie in (0, 1], got {}", v.min_coverage)
        })?;

        let sc = &self.scene;
        require(sc.width > 0, || "scene.width must be positive".into())?;
        require(
            finite_all(&sc.object_center) && finite_all(&sc.object_size) && sc.object_yaw.is_finite() && sc.ground_z.is_finite(),
            || "scene values must be finite".into(),
        )?;
        require(sc.object_size.iter().all(|&x| x > 0.0), || {
            format!("scene.object_size must be positive, got {:?}", sc.object_size)
        })?;
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        let built = match s.family {
            ScheduleFamily::Linear => NoiseSchedule::linear(s.steps, s.beta_start, s.beta_end),
            ScheduleFamily::ScaledLinear => NoiseSchedule::scaled_linear(s.steps, s.beta_start, s.beta_end),
        };
        built.map_err(|e| Error::Config(format!("schedule: {e}")))
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        let d = &self.denoiser;
        DenoiserConfig::new(2, d.time_embed_dim, d.hidden.clone(), d.token_dim)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            steps: t.steps,
            batch: t.batch,
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            final_lr_fraction: t.final_lr_fraction,
            ema_decay: t.ema_decay,
            null_condition_rate: t.null_condition_rate,
            fourier_freqs: self.denoiser.fourier_freqs,
        }
    }

    pub fn scene_config(&self) -> SceneConfig {
        let s = &self.scene;
        SceneConfig {
            ground_z: s.ground_z,
            rings: s.rings,
            points_per_ring: s.points_per_ring,
            object: ObjectPose {
                center: s.object_center,
                size: s.object_size,
                yaw: s.object_yaw,
            },
            object_points: s.object_points,
        }
    }
}
