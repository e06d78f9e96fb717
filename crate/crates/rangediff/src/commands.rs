//! One function per CLI verb. Every command writes into an output
//! directory and returns a short human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rangediff_core::boxes::{project_box_range, rasterize_mask_rect, Box3D, EditMask};
use rangediff_core::denoiser::DenoiserParams;
use rangediff_core::grid::Grid;
use rangediff_core::image_ops::{point_in_box, points_in_box_mask, range_composite};
use rangediff_core::metrics::{intensity_mse, median_depth_error, MaskedPair, MetricsError};
use rangediff_core::norm::{
    depth_linear_denorm, depth_linear_norm, depth_object_denorm, depth_object_norm, intensity_denorm,
    intensity_norm, DepthNormParams,
};
use rangediff_core::range_view::{
    project_tracked, reconstruct, BeamTable, PointCloud, RangeView, MAX_DEPTH,
};
use rangediff_core::synth::{synth_scene, Scene};
use rangediff_core::toy::{anchor_tokens, generate, train, GaussianRing, Sampler, ToyDataset, TwoMoons};

use crate::config::{Dataset, ExperimentConfig, SamplerKind};
use crate::error::{Error, IoContext, Result};
use crate::formats::{
    decode_rdrv, encode_checkpoint, encode_pgm, encode_rdpc, encode_rdrv, format_box_csv, load_box,
    load_checkpoint, load_cloud, read_bytes, write_bytes, write_csv, RDRV_MAGIC,
};

/// Largest acceptable `|denorm(norm(x)) − x|` in `normalize-check`.
pub const NORMALIZE_TOLERANCE: f64 = 1e-9;

/// Shared state of a command invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: ExperimentConfig, out: PathBuf) -> Self {
        Self { config, out }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed)
    }

    fn out_file(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).at(&self.out)?;
        Ok(self.out.join(name))
    }

    fn width(&self) -> usize {
        self.config.scene.width
    }
}

fn numerical(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Numerical(format!("{what}: {e}"))
}

pub fn synth_scene_cmd(ctx: &Context) -> Result<String> {
    let scene = synth_scene(&ctx.config.scene_config(), &mut ctx.rng())
        .map_err(|e| Error::config(format!("scene: {e}")))?;
    let cloud_path = ctx.out_file("scene.rdpc")?;
    write_bytes(&cloud_path, &encode_rdpc(&scene.cloud()))?;
    let box_path = ctx.out_file("box.csv")?;
    write_bytes(&box_path, format_box_csv(&scene.object_box).as_bytes())?;
    Ok(format!(
        "wrote {} ({} background + {} object points) and {}",
        cloud_path.display(),
        scene.background.len(),
        scene.object.len(),
        box_path.display()
    ))
}

/// Outcome of a project → reconstruct pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundtripReport {
    pub input: usize,
    pub out_of_range: usize,
    pub collisions: usize,
    pub retained: usize,
    /// Largest per-coordinate error between a retained point and its reconstruction.
    pub max_error: f64,
    pub mean_error: f64,
}

pub fn roundtrip_report(cloud: &PointCloud, width: usize) -> (RangeView, RoundtripReport) {
    let (view, stats, source) = project_tracked(cloud, &BeamTable::default(), width);
    let rebuilt = reconstruct(&view);
    // Reconstruction walks occupied pixels row-major, as does `source`.
    let originals = source.as_slice().iter().flatten().map(|&k| &cloud.points[k]);
    let (mut max_error, mut sum, mut count) = (0.0f64, 0.0, 0usize);
    for (a, b) in originals.zip(&rebuilt.points) {
        for (u, v) in a.xyz().iter().zip(b.xyz()) {
            let e = (u - v).abs();
            max_error = max_error.max(e);
            sum += e;
            count += 1;
        }
    }
    let report = RoundtripReport {
        input: stats.input,
        out_of_range: stats.out_of_range,
        collisions: stats.collisions,
        retained: stats.retained,
        max_error,
        mean_error: if count == 0 { 0.0 } else { sum / count as f64 },
    };
    (view, report)
}

pub fn roundtrip_cmd(ctx: &Context, input: &Path) -> Result<String> {
    let cloud = load_cloud(input)?;
    let (view, r) = roundtrip_report(&cloud, ctx.width());
    write_bytes(&ctx.out_file("view.rdrv")?, &encode_rdrv(&view))?;
    let report = ctx.out_file("roundtrip.csv")?;
    write_csv(
        &report,
        &["input", "out_of_range", "collisions", "retained", "max_error_m", "mean_error_m"],
        [[
            r.input.to_string(),
            r.out_of_range.to_string(),
            r.collisions.to_string(),
            r.retained.to_string(),
            r.max_error.to_string(),
            r.mean_error.to_string(),
        ]],
    )?;
    Ok(format!(
        "{} points: {} out of range, {} collisions, {} retained; max error {:.3e} m",
        r.input, r.out_of_range, r.collisions, r.retained, r.max_error
    ))
}

/// Loads a range view directly or projects a cloud file.
fn load_view_or_cloud(path: &Path, width: usize) -> Result<RangeView> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(RDRV_MAGIC) {
        return decode_rdrv(&bytes).map_err(|m| Error::parse(path, m));
    }
    Ok(roundtrip_report(&load_cloud(path)?, width).0)
}

fn box_or_default(ctx: &Context, path: Option<&Path>) -> Result<Box3D> {
    match path {
        Some(p) => load_box(p),
        None => {
            let o = ctx.config.scene_config().object;
            Box3D::from_pose(o.center, o.size, o.yaw).map_err(|e| Error::config(format!("scene object: {e}")))
        }
    }
}

/// Maximum round-trip error of one normalization over the occupied pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCheck {
    pub map: &'static str,
    pub count: usize,
    pub max_error: f64,
}

pub fn normalize_checks(view: &RangeView, b: &Box3D, lambda: f64, alpha: f64) -> Result<Vec<NormCheck>> {
    let (near, far) = project_box_range(b, &BeamTable::default(), view.width())
        .map_err(|e| numerical("box projection", e))?
        .depth_range();
    let params = DepthNormParams::from_box_depths(alpha, near, far)
        .map_err(|e| numerical(&format!("box depths {near:.3}..{far:.3} m"), e))?;
    let mut checks = [("depth_linear", 0.0f64), ("depth_object", 0.0), ("intensity", 0.0)];
    let mut count = 0;
    let fail = |e| numerical("normalization", e);
    for ((&d, &i), &occ) in view
        .depth
        .as_slice()
        .iter()
        .zip(view.intensity.as_slice())
        .zip(view.occupancy.as_slice())
    {
        if !occ {
            continue;
        }
        count += 1;
        let lin = depth_linear_norm(d).map_err(fail)?;
        checks[0].1 = checks[0].1.max((depth_linear_denorm(lin).map_err(fail)? - d).abs());
        let obj = depth_object_norm(lin, &params).map_err(fail)?;
        let back = depth_linear_denorm(depth_object_denorm(obj, &params).map_err(fail)?).map_err(fail)?;
        checks[1].1 = checks[1].1.max((back - d).abs());
        let n = intensity_norm(i, lambda).map_err(fail)?;
        checks[2].1 = checks[2].1.max((intensity_denorm(n, lambda).map_err(fail)? - i).abs());
    }
    Ok(checks
        .into_iter()
        .map(|(map, max_error)| NormCheck { map, count, max_error })
        .collect())
}

pub fn normalize_check_cmd(ctx: &Context, input: &Path, box_path: Option<&Path>) -> Result<String> {
    let view = load_view_or_cloud(input, ctx.width())?;
    let b = box_or_default(ctx, box_path)?;
    let checks = normalize_checks(&view, &b, ctx.config.norm.lambda, ctx.config.norm.alpha)?;
    write_csv(
        &ctx.out_file("normalize.csv")?,
        &["map", "pixels", "max_error"],
        checks
            .iter()
            .map(|c| [c.map.to_string(), c.count.to_string(), c.max_error.to_string()]),
    )?;
    let mut summary = String::new();
    for c in &checks {
        let _ = writeln!(summary, "{:<13} {:>8} px  max error {:.3e}", c.map, c.count, c.max_error);
    }
    if let Some(bad) = checks.iter().find(|c| !(c.max_error <= NORMALIZE_TOLERANCE)) {
        return Err(Error::Numerical(format!(
            "{} round trip error {:.3e} exceeds {NORMALIZE_TOLERANCE:e}\n{summary}",
            bad.map, bad.max_error
        )));
    }
    Ok(summary.trim_end().to_string())
}

fn with_dataset<T>(kind: Dataset, f: impl FnOnce(&dyn DatasetRef) -> T) -> T {
    match kind {
        Dataset::Ring => f(&GaussianRing::default()),
        Dataset::Moons => f(&TwoMoons::default()),
    }
}

/// Object-safe view of a toy dataset for the sampler, which only needs anchors.
trait DatasetRef {
    fn components(&self) -> usize;
    fn anchor(&self, k: usize) -> [f64; 2];
}

impl<D: ToyDataset> DatasetRef for D {
    fn components(&self) -> usize {
        ToyDataset::components(self)
    }

    fn anchor(&self, k: usize) -> [f64; 2] {
        ToyDataset::anchor(self, k)
    }
}

pub fn train_toy_cmd(ctx: &Context) -> Result<String> {
    let cfg = &ctx.config;
    let schedule = cfg.noise_schedule()?;
    let model = cfg.denoiser_config();
    let train_cfg = cfg.train_config();
    let mut rng = ctx.rng();
    let outcome = match cfg.training.dataset {
        Dataset::Ring => train(&GaussianRing::default(), model, &schedule, &train_cfg, &mut rng),
        Dataset::Moons => train(&TwoMoons::default(), model, &schedule, &train_cfg, &mut rng),
    }
    .map_err(|e| Error::config(format!("training: {e}")))?;
    let ckpt = ctx.out_file("checkpoint.rdcp")?;
    write_bytes(&ckpt, &encode_checkpoint(&outcome.ema))?;
    write_csv(
        &ctx.out_file("loss.csv")?,
        &["step", "loss"],
        outcome.losses.iter().enumerate().map(|(i, l)| [i.to_string(), l.to_string()]),
    )?;
    let window = outcome.losses.len().min(100);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let losses = &outcome.losses;
    Ok(format!(
        "{} steps, loss {:.4} -> {:.4} (mean of first/last {window}); wrote {}",
        losses.len(),
        mean(&losses[..window]),
        mean(&losses[losses.len() - window..]),
        ckpt.display()
    ))
}

/// Sampling options; the CLI fills them from the config and its flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOptions {
    pub sampler: SamplerKind,
    pub steps: usize,
    pub cfg_scale: f64,
    pub count: usize,
    pub component: Option<usize>,
}

impl SampleOptions {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let s = &cfg.sampling;
        Self {
            sampler: s.sampler,
            steps: s.steps,
            cfg_scale: s.cfg_scale,
            count: s.count,
            component: s.component,
        }
    }
}

/// Draws `opts.count` samples. Each sample's starting noise comes from
/// the seeded generator, followed by its ancestral noise for DDPM.
pub fn draw_samples(
    ctx: &Context,
    params: &DenoiserParams,
    opts: &SampleOptions,
) -> Result<Vec<[f64; 2]>> {
    let cfg = &ctx.config;
    let schedule = cfg.noise_schedule()?;
    let freqs = cfg.denoiser.fourier_freqs;
    if params.config().data_dim != 2 {
        return Err(Error::config("checkpoint is not a 2D toy model"));
    }
    if params.config().token_dim != 2 * freqs {
        return Err(Error::config(format!(
            "checkpoint token_dim {} does not match denoiser.fourier_freqs = {freqs}",
            params.config().token_dim
        )));
    }
    let cond = match opts.component {
        None => None,
        Some(k) => {
            let n = with_dataset(cfg.training.dataset, |d| d.components());
            if k >= n {
                return Err(Error::config(format!("component {k} out of range; the dataset has {n}")));
            }
            Some(anchor_tokens(with_dataset(cfg.training.dataset, |d| d.anchor(k)), freqs))
        }
    };
    let sampler = match opts.sampler {
        SamplerKind::Ddim => {
            rangediff_core::diffusion::ddim_timesteps(schedule.steps(), opts.steps)
                .map_err(|e| Error::config(format!("--steps {}: {e}", opts.steps)))?;
            Sampler::Ddim(opts.steps)
        }
        SamplerKind::Ddpm => Sampler::Ddpm(cfg.schedule.sigma.into()),
    };
    let mut rng = ctx.rng();
    (0..opts.count)
        .map(|_| {
            let x: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            let y = generate(params, &schedule, sampler, cond.as_ref(), opts.cfg_scale, &x, &mut rng)
                .map_err(|e| numerical("sampling", e))?;
            Ok([y[0], y[1]])
        })
        .collect()
}

pub fn sample_cmd(ctx: &Context, checkpoint: &Path, opts: &SampleOptions) -> Result<String> {
    let params = load_checkpoint(checkpoint)?;
    let samples = draw_samples(ctx, &params, opts)?;
    let path = ctx.out_file("samples.csv")?;
    write_csv(&path, &["x", "y"], samples.iter().map(|p| [p[0], p[1]]))?;
    Ok(format!("wrote {} samples to {}", samples.len(), path.display()))
}

/// Splits a sweep into background and the points inside `b`.
pub fn split_scene(cloud: &PointCloud, b: &Box3D) -> Result<Scene> {
    let (mut background, mut object) = (Vec::new(), Vec::new());
    for p in &cloud.points {
        let inside = point_in_box(p.xyz(), b).map_err(|e| numerical("box", e))?;
        if inside { &mut object } else { &mut background }.push(*p);
    }
    Ok(Scene {
        background,
        object,
        object_box: *b,
    })
}

/// Original and composited views of a scene whose object is moved by
/// `yaw` (about the box centre) and then `shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDemo {
    pub original: RangeView,
    pub edited: RangeView,
    pub moved_box: Box3D,
    /// Pixels holding a return of the moved object in the edited view.
    pub m_points: EditMask,
    pub composite: RangeView,
    pub replaced: EditMask,
}

pub fn composite_demo(scene: &Scene, yaw: f64, shift: [f64; 3], width: usize) -> Result<CompositeDemo> {
    let table = BeamTable::default();
    // An identity edit reuses the scene as is; rotating by zero need not be bit-exact.
    let edited_scene = if yaw == 0.0 && shift == [0.0; 3] {
        scene.clone()
    } else {
        scene.with_object_moved(yaw, shift).map_err(|e| numerical("object move", e))?
    };
    let (original, _, _) = project_tracked(&scene.cloud(), &table, width);
    let (edited, _, source) = project_tracked(&edited_scene.cloud(), &table, width);
    let first_object = edited_scene.background.len();
    let m_points = EditMask::from_bools(&source.map(|s| s.is_some_and(|k| k >= first_object)));
    let rc = range_composite(&original, &edited, &edited_scene.object_box, &m_points)
        .map_err(|e| numerical("composite", e))?;
    Ok(CompositeDemo {
        original,
        edited,
        moved_box: edited_scene.object_box,
        m_points,
        composite: rc.view,
        replaced: rc.replaced,
    })
}

/// Grey levels for a figure: depth over the full range, intensity over 0..255, empty pixels black.
fn depth_figure(v: &RangeView) -> Grid<f64> {
    Grid::from_fn(v.height(), v.width(), |r, c| {
        if *v.occupancy.get(r, c) { *v.depth.get(r, c) / MAX_DEPTH } else { 0.0 }
    })
}

fn intensity_figure(v: &RangeView) -> Grid<f64> {
    Grid::from_fn(v.height(), v.width(), |r, c| {
        if *v.occupancy.get(r, c) { *v.intensity.get(r, c) / 255.0 } else { 0.0 }
    })
}

pub fn composite_demo_cmd(
    ctx: &Context,
    scene_path: &Path,
    box_path: &Path,
    yaw: f64,
    shift: [f64; 3],
) -> Result<String> {
    let cloud = load_cloud(scene_path)?;
    let b = load_box(box_path)?;
    let scene = split_scene(&cloud, &b)?;
    let demo = composite_demo(&scene, yaw, shift, ctx.width())?;
    write_bytes(&ctx.out_file("original.rdrv")?, &encode_rdrv(&demo.original))?;
    write_bytes(&ctx.out_file("composite.rdrv")?, &encode_rdrv(&demo.composite))?;
    write_bytes(&ctx.out_file("moved_box.csv")?, format_box_csv(&demo.moved_box).as_bytes())?;
    let figures = [
        ("before_depth.pgm", depth_figure(&demo.original)),
        ("after_depth.pgm", depth_figure(&demo.composite)),
        ("before_intensity.pgm", intensity_figure(&demo.original)),
        ("after_intensity.pgm", intensity_figure(&demo.composite)),
        ("replaced.pgm", demo.replaced.to_f64()),
    ];
    for (name, grid) in &figures {
        write_bytes(&ctx.out_file(name)?, &encode_pgm(grid))?;
    }
    let changed = (0..demo.original.height())
        .flat_map(|r| (0..demo.original.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| demo.original.point_at(r, c) != demo.composite.point_at(r, c))
        .count();
    write_csv(
        &ctx.out_file("composite.csv")?,
        &["object_points", "m_points", "replaced", "changed"],
        [[scene.object.len(), demo.m_points.count(), demo.replaced.count(), changed]],
    )?;
    Ok(format!(
        "object of {} points moved; {} pixels replaced, {} changed",
        scene.object.len(),
        demo.replaced.count(),
        changed
    ))
}

/// Hull of the box's corners in range-view pixels.
pub fn range_edit_mask(b: &Box3D, height: usize, width: usize) -> Result<EditMask> {
    let projected = project_box_range(b, &BeamTable::default(), width).map_err(|e| numerical("box", e))?;
    Ok(rasterize_mask_rect(&projected.points_2d(), height, width).mask)
}

/// Reconstruction metrics over one mask; `None` when the mask is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub mask: &'static str,
    pub pixels: usize,
    pub median_depth_error: Option<f64>,
    pub intensity_mse: Option<f64>,
}

pub fn metric_rows(reference: &RangeView, candidate: &RangeView, b: &Box3D) -> Result<Vec<MetricRow>> {
    if (reference.height(), reference.width()) != (candidate.height(), candidate.width()) {
        return Err(Error::config(format!(
            "views differ in shape: {}x{} vs {}x{}",
            reference.height(),
            reference.width(),
            candidate.height(),
            candidate.width()
        )));
    }
    let object = points_in_box_mask(reference, b).map_err(|e| numerical("box", e))?;
    let edit = range_edit_mask(b, reference.height(), reference.width())?;
    let opt = |r: std::result::Result<f64, MetricsError>| match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::EmptyMask) => Ok(None),
        Err(e) => Err(numerical("metrics", e)),
    };
    [("object", object), ("edit_hull", edit)]
        .into_iter()
        .map(|(name, mask)| {
            let depth = MaskedPair::new(&reference.depth, &candidate.depth, &mask).map_err(|e| numerical("metrics", e))?;
            let inten = MaskedPair::new(&reference.intensity, &candidate.intensity, &mask)
                .map_err(|e| numerical("metrics", e))?;
            Ok(MetricRow {
                mask: name,
                pixels: mask.count(),
                median_depth_error: opt(median_depth_error(&depth))?,
                intensity_mse: opt(intensity_mse(&inten))?,
            })
        })
        .collect()
}

pub fn metrics_cmd(ctx: &Context, reference: &Path, candidate: &Path, box_path: &Path) -> Result<String> {
    let r = load_view_or_cloud(reference, ctx.width())?;
    let c = load_view_or_cloud(candidate, ctx.width())?;
    let rows = metric_rows(&r, &c, &load_box(box_path)?)?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    write_csv(
        &ctx.out_file("metrics.csv")?,
        &["mask", "pixels", "median_depth_error_m", "intensity_mse"],
        rows.iter()
            .map(|m| [m.mask.to_string(), m.pixels.to_string(), cell(m.median_depth_error), cell(m.intensity_mse)]),
    )?;
    let mut table = format!("{:<10} {:>7} {:>16} {:>14}\n", "mask", "pixels", "median depth m", "intensity MSE");
    let shown = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    for m in &rows {
        let _ = writeln!(
            table,
            "{:<10} {:>7} {:>16} {:>14}",
            m.mask,
            m.pixels,
            shown(m.median_depth_error),
            shown(m.intensity_mse)
        );
    }
    Ok(table.trim_end().to_string())
}

pub fn schedule_dump_cmd(ctx: &Context) -> Result<String> {
    let s = ctx.config.noise_schedule()?;
    let path = ctx.out_file("schedule.csv")?;
    write_csv(
        &path,
        &["t", "beta", "alpha", "alpha_bar", "one_minus_alpha_bar", "beta_tilde"],
        (1..=s.steps()).map(|t| {
            [
                t.to_string(),
                s.beta(t).to_string(),
                s.alpha(t).to_string(),
                s.alpha_bar(t).to_string(),
                s.one_minus_alpha_bar(t).to_string(),
                s.beta_tilde(t).to_string(),
            ]
        }),
    )?;
    Ok(format!(
        "T = {}, alpha_bar_T = {:.3e}; wrote {}",
        s.steps(),
        s.alpha_bar(s.steps()),
        path.display()
    ))
}

