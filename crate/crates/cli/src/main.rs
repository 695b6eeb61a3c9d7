//! Single-binary front end for the low-light enhancement toolkit.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error,
//! 3 numerical failure (NaN loss, solver divergence).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lowlight_core::config::{Config, ConfigError};
use lowlight_core::image::{load_png, save_png};
use lowlight_core::iqa::{self, MetricReport, NiqeModel};
use lowlight_core::pipeline::{
    enhance_image, evaluate, ingest, train_stage1, train_stage2, Models, PipelineError,
};
use lowlight_core::wls::{frequency_split, WlsError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<lowlight_core::image::ImageError> for CliError {
    fn from(e: lowlight_core::image::ImageError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<lowlight_core::checkpoint::CheckpointError> for CliError {
    fn from(e: lowlight_core::checkpoint::CheckpointError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<WlsError> for CliError {
    fn from(e: WlsError) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: e.to_string(),
        }
    }
}

impl From<iqa::IqaError> for CliError {
    fn from(e: iqa::IqaError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::NanLoss { .. } | PipelineError::Wls(_) | PipelineError::Tensor(_) => {
                EXIT_NUMERIC
            }
            PipelineError::Net(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "lowlight", about = "Retinex low-light image enhancement toolkit")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (flat `section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config entry; repeatable. Takes precedence over --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Shorthand for --set train.seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective config to stdout and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Split an image into its smooth base and detail layers.
    Wls {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_base: PathBuf,
        /// Detail layer PNG; signed values are written shifted by +0.5.
        #[arg(long)]
        out_detail: PathBuf,
    },
    /// Run the decomposition net, writing reflectance and illumination.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        /// Checkpoint directory containing decom.ckpt.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out_reflectance: PathBuf,
        #[arg(long)]
        out_illumination: PathBuf,
    },
    /// Train stage 1 (decomposition) or stage 2 (joint enhance+adjust).
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Dataset root containing low/ and high/ PNG directories.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and train_log.csv.
        #[arg(long)]
        out: PathBuf,
        /// Stage-1 checkpoint (required for --stage 2).
        #[arg(long)]
        stage1_ckpt: Option<PathBuf>,
        /// Resume from a checkpoint with embedded optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Enhance one image through the full pipeline.
    Enhance {
        #[arg(long = "in")]
        input: PathBuf,
        /// Checkpoint directory containing decom.ckpt and joint.ckpt.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every intermediate layer into this directory.
        #[arg(long)]
        dump_intermediates: Option<PathBuf>,
    },
    /// Print the full-reference quality metrics of OUTPUT against REFERENCE.
    Metrics {
        output: PathBuf,
        reference: PathBuf,
        /// Add a no-reference NIQE column scored with this model file.
        #[arg(long)]
        niqe_model: Option<PathBuf>,
    },
    /// Enhance a paired dataset and report averaged metrics.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Write eval_report.csv here (the table always goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        niqe_model: Option<PathBuf>,
    },
    /// Fit a NIQE model on a directory of pristine PNGs.
    NiqeFit {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = iqa::NIQE_PATCH_SIZE)]
        patch_size: usize,
        #[arg(long, default_value_t = iqa::NIQE_SHARPNESS_FRACTION)]
        sharpness_fraction: f64,
    },
}

fn effective_config(common: &CommonArgs) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for assignment in &common.set {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            CliError::usage(format!("--set expects KEY=VALUE, got {assignment:?}"))
        })?;
        cfg.set(key.trim(), value)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("train.seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli.common)?;
    if cli.common.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    eprint!("# effective config\n{}", cfg.dump());

    match cli.command {
        Command::Wls {
            input,
            out_base,
            out_detail,
        } => {
            let img = load_png(&input)?;
            let split = frequency_split(&img, &cfg.wls)?;
            save_png(&out_base, &split.low_freq)?;
            save_png(&out_detail, &split.high_freq.map(|v| v + 0.5))?;
        }
        Command::Decompose {
            input,
            ckpt,
            out_reflectance,
            out_illumination,
        } => {
            let img = load_png(&input)?;
            let models = load_decom_only(&ckpt, &cfg)?;
            let result = enhance_partial_decompose(&img, &models, &cfg)?;
            save_png(&out_reflectance, &result.0)?;
            save_png(&out_illumination, &result.1)?;
        }
        Command::Train {
            stage,
            data,
            out,
            stage1_ckpt,
            resume,
        } => {
            let ds = ingest(&data.join("low"), &data.join("high"))?;
            let outcome = match stage {
                1 => train_stage1(&ds, &cfg, &out, resume.as_deref())?,
                2 => {
                    let s1 = stage1_ckpt.ok_or_else(|| {
                        CliError::usage("--stage 2 requires --stage1-ckpt")
                    })?;
                    train_stage2(&ds, &cfg, &s1, &out, resume.as_deref())?
                }
                _ => unreachable!("clap range"),
            };
            println!(
                "stage {stage}: {} steps, loss {:.6e} -> {:.6e}, checkpoint {}",
                outcome.steps_run,
                outcome.initial_total,
                outcome.final_total,
                outcome.checkpoint.display()
            );
        }
        Command::Enhance {
            input,
            ckpt,
            out,
            dump_intermediates,
        } => {
            let img = load_png(&input)?;
            let models = Models::load(&ckpt, &cfg)?;
            let result = enhance_image(&img, &models, &cfg)?;
            save_png(&out, &result.final_image)?;
            if let Some(dir) = dump_intermediates {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
                for (name, layer) in &result.intermediates {
                    save_png(&dir.join(format!("{name}.png")), &layer.clamp01())?;
                }
            }
        }
        Command::Metrics {
            output,
            reference,
            niqe_model,
        } => {
            let a = load_png(&output)?;
            let b = load_png(&reference)?;
            let mut report = MetricReport::full_reference(&a, &b)?;
            if let Some(path) = niqe_model {
                let model = NiqeModel::load(&path)?;
                report.set("niqe", iqa::niqe(&a, &model)?);
            }
            print!("{}", report.to_table());
        }
        Command::Evaluate {
            data,
            ckpt,
            out,
            niqe_model,
        } => {
            let ds = ingest(&data.join("low"), &data.join("high"))?;
            let models = Models::load(&ckpt, &cfg)?;
            let model = match niqe_model {
                Some(path) => Some(NiqeModel::load(&path)?),
                None => None,
            };
            let outcome = evaluate(&ds, &models, &cfg, model.as_ref())?;
            print!("{}", outcome.to_table());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
                let path = dir.join("eval_report.csv");
                std::fs::write(&path, outcome.to_csv())
                    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            }
        }
        Command::NiqeFit {
            corpus,
            out,
            patch_size,
            sharpness_fraction,
        } => {
            let mut images = Vec::new();
            let mut names: Vec<PathBuf> = std::fs::read_dir(&corpus)
                .map_err(|e| CliError::data(format!("{}: {e}", corpus.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .map(|x| x.eq_ignore_ascii_case("png"))
                        .unwrap_or(false)
                })
                .collect();
            names.sort();
            for path in &names {
                images.push(load_png(path)?);
            }
            let model = iqa::niqe_fit(&images, patch_size, sharpness_fraction)?;
            model.save(&out)?;
            println!(
                "fitted NIQE model on {} images, saved to {}",
                images.len(),
                out.display()
            );
        }
    }
    Ok(())
}

/// Load only the decomposition net from `<dir>/decom.ckpt`.
fn load_decom_only(dir: &Path, cfg: &Config) -> Result<Models, CliError> {
    let models = Models::fresh(cfg);
    let ckpt = lowlight_core::checkpoint::Checkpoint::load(&dir.join("decom.ckpt"))?;
    for (name, t) in models.decom.named_params() {
        ckpt.load_into(&name, &t)?;
    }
    Ok(models)
}

/// Decompose a padded image, returning (reflectance, illumination) at the
/// original dimensions.
fn enhance_partial_decompose(
    img: &lowlight_core::Image,
    models: &Models,
    cfg: &Config,
) -> Result<(lowlight_core::Image, lowlight_core::Image), CliError> {
    let padded = img.pad_to_multiple(cfg.net.divisibility());
    let split = frequency_split(&padded, &cfg.wls)?;
    let decom_in = if cfg.train.decom_full_input {
        &padded
    } else {
        &split.low_freq
    };
    let d = models
        .decom
        .forward(&decom_in.to_tensor::<f32>())
        .map_err(PipelineError::from)?;
    let crop = |t: &lowlight_core::Tensor<f32>| {
        lowlight_core::Image::from_tensor(t).crop(0, 0, img.height, img.width)
    };
    Ok((crop(&d.reflectance), crop(&d.illumination)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with success exits
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.common.verbose {
        env_logger::Builder::new()
            .filter_level(log::LevelFilter::Debug)
            .init();
    } else {
        env_logger::init();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
