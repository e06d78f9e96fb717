use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rangediff::commands::{self, Context, SampleOptions};
use rangediff::config::{ExperimentConfig, SamplerKind};
use rangediff::{Error, Result};

/// Range-view lidar codec, object-aware normalization, compositing and
/// toy diffusion experiments.
///
/// Exit codes: 0 success, 2 config error, 3 I/O or parse error,
/// 4 numerical-validation failure.
#[derive(Debug, Parser)]
#[command(name = "rangediff", version)]
struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplerArg {
    Ddim,
    Ddpm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a synthetic sweep (scene.rdpc) and its object box (box.csv).
    SynthScene,
    /// Projects a cloud to a range view and back; writes roundtrip.csv and view.rdrv.
    Roundtrip {
        /// Cloud as RDPC or CSV.
        cloud: PathBuf,
    },
    /// Checks every normalization round trip on a view's occupied pixels (normalize.csv).
    NormalizeCheck {
        /// Range view (RDRV) or cloud (RDPC/CSV).
        input: PathBuf,
        /// Box CSV setting the object depth band; defaults to the config's scene object.
        #[arg(long = "box", value_name = "PATH")]
        box_path: Option<PathBuf>,
    },
    /// Trains the toy denoiser; writes checkpoint.rdcp (averaged weights) and loss.csv.
    TrainToy,
    /// Draws 2D samples from a checkpoint into samples.csv.
    Sample {
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
        /// DDIM jumps; must divide the schedule length.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cfg_scale: Option<f64>,
        /// Number of samples.
        #[arg(short, long)]
        n: Option<usize>,
        /// Condition on this dataset component.
        #[arg(long)]
        component: Option<usize>,
    },
    /// Moves the scene's object, composites it back and writes figures.
    CompositeDemo {
        scene: PathBuf,
        #[arg(value_name = "BOX")]
        box_path: PathBuf,
        /// Rotation about the box centre, radians.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw: f64,
        /// Translation after the rotation, meters.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.0, 0.0], allow_hyphen_values = true)]
        shift: Vec<f64>,
    },
    /// Reconstruction metrics over the object and edit-hull masks (metrics.csv).
    Metrics {
        /// Range view or cloud.
        reference: PathBuf,
        /// Range view or cloud.
        candidate: PathBuf,
        #[arg(value_name = "BOX")]
        box_path: PathBuf,
    },
    /// Writes the noise schedule tables to schedule.csv.
    ScheduleDump,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String> {
    let ctx = Context::new(load_config(&cli)?, cli.out.clone());
    match cli.command {
        Command::SynthScene => commands::synth_scene_cmd(&ctx),
        Command::Roundtrip { cloud } => commands::roundtrip_cmd(&ctx, &cloud),
        Command::NormalizeCheck { input, box_path } => {
            commands::normalize_check_cmd(&ctx, &input, box_path.as_deref())
        }
        Command::TrainToy => commands::train_toy_cmd(&ctx),
        Command::Sample {
            checkpoint,
            sampler,
            steps,
            cfg_scale,
            n,
            component,
        } => {
            let mut opts = SampleOptions::from_config(&ctx.config);
            if let Some(s) = sampler {
                opts.sampler = match s {
                    SamplerArg::Ddim => SamplerKind::Ddim,
                    SamplerArg::Ddpm => SamplerKind::Ddpm,
                };
            }
            opts.steps = steps.unwrap_or(opts.steps);
            opts.cfg_scale = cfg_scale.unwrap_or(opts.cfg_scale);
            opts.count = n.unwrap_or(opts.count);
            opts.component = component.or(opts.component);
            if !opts.cfg_scale.is_finite() {
                return Err(Error::config("--cfg-scale must be finite"));
            }
            commands::sample_cmd(&ctx, &checkpoint, &opts)
        }
        Command::CompositeDemo {
            scene,
            box_path,
            yaw,
            shift,
        } => {
            let shift: [f64; 3] = shift
                .try_into()
                .map_err(|_| Error::config("--shift takes three comma-separated values"))?;
            if !(yaw.is_finite() && shift.iter().all(|v| v.is_finite())) {
                return Err(Error::config("--yaw and --shift must be finite"));
            }
            commands::composite_demo_cmd(&ctx, &scene, &box_path, yaw, shift)
        }
        Command::Metrics {
            reference,
            candidate,
            box_path,
        } => commands::metrics_cmd(&ctx, &reference, &candidate, &box_path),
        Command::ScheduleDump => commands::schedule_dump_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
