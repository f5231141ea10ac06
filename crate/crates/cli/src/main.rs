//! `posecraft` command-line front end.
//!
//! Exit codes: 0 success, 2 unreadable or malformed input, 3 well-formed
//! input rejected by the algorithm, 4 internal failure.

mod commands;
mod config;
mod error;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{EditArgs, FitArgs, RunSource};
use crate::config::{Overrides, RunConfig};
use crate::error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(
    name = "posecraft",
    version,
    about = "One-shot pose-guided video generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pick the training frame whose pose best matches the inference poses.
    SelectRef {
        train: PathBuf,
        infer: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
    },
    /// Least-squares affine map between one group of two poses.
    FitAffine {
        reference: PathBuf,
        target: PathBuf,
        #[arg(long, value_parser = ["face", "left_hand", "right_hand", "body"])]
        group: String,
        #[arg(long, default_value_t = 1)]
        reference_frame: usize,
        #[arg(long, default_value_t = 1)]
        target_frame: usize,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
    },
    /// Warp face and hand regions of a latent grid towards a target pose.
    EditLatent {
        latent: PathBuf,
        reference: PathBuf,
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        reference_frame: usize,
        #[arg(long, default_value_t = 1)]
        target_frame: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        padding_cells: Option<usize>,
    },
    /// Encode frames and run DDIM inversion.
    Invert {
        frames: PathBuf,
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Saved model directory; a fresh model is used otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// DDIM sampling from noise-level latents.
    Sample {
        latent: PathBuf,
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write decoded frames instead of latents.
        #[arg(long)]
        decode: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// One-shot fine-tuning of the toy denoiser on a single video.
    Train {
        frames: PathBuf,
        poses: PathBuf,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Full inference pipeline.
    Run {
        #[arg(long, required_unless_present = "manifest")]
        train_frames: Option<PathBuf>,
        #[arg(long, required_unless_present = "manifest")]
        train_poses: Option<PathBuf>,
        #[arg(long, required_unless_present = "manifest")]
        infer_poses: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Replay a previous run from its manifest.
        #[arg(long, conflicts_with_all = ["train_frames", "train_poses", "infer_poses", "params"])]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// PSNR between tensors, or MSE-P / Video-SIM between pose files.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_parser = ["psnr", "mse-p", "video-sim"])]
        metric: String,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
    },
    /// Write one frame of a tensor as binary PGM or PPM.
    Render {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        frame: usize,
        #[arg(long)]
        channel: Option<usize>,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::SelectRef {
            train,
            infer,
            threshold,
        } => commands::select_ref(&train, &infer, threshold),
        Command::FitAffine {
            reference,
            target,
            group,
            reference_frame,
            target_frame,
            threshold,
        } => commands::fit(FitArgs {
            reference: &reference,
            target: &target,
            group: &group,
            reference_frame,
            target_frame,
            threshold,
        }),
        Command::EditLatent {
            latent,
            reference,
            target,
            out,
            reference_frame,
            target_frame,
            config,
            padding_cells,
        } => {
            let mut config = RunConfig::load(config.as_deref())?;
            if let Some(p) = padding_cells {
                config.pipeline.padding_cells = p;
            }
            commands::edit_latent(EditArgs {
                latent: &latent,
                reference: &reference,
                target: &target,
                reference_frame,
                target_frame,
                out: &out,
                config,
            })
        }
        Command::Invert {
            frames,
            poses,
            out,
            params,
            overrides,
        } => commands::invert(
            &frames,
            &poses,
            params.as_deref(),
            &out,
            overrides.resolve()?,
        ),
        Command::Sample {
            latent,
            poses,
            out,
            params,
            decode,
            overrides,
        } => commands::sample(
            &latent,
            &poses,
            params.as_deref(),
            &out,
            decode,
            overrides.resolve()?,
        ),
        Command::Train {
            frames,
            poses,
            out,
            overrides,
        } => commands::train(&frames, &poses, &out, overrides.resolve()?),
        Command::Run {
            train_frames,
            train_poses,
            infer_poses,
            params,
            manifest,
            out,
            overrides,
        } => {
            let source = match &manifest {
                Some(m) => RunSource::Manifest(m),
                None => RunSource::Paths {
                    train_frames: train_frames.as_deref().expect("required by clap"),
                    train_poses: train_poses.as_deref().expect("required by clap"),
                    infer_poses: infer_poses.as_deref().expect("required by clap"),
                    params: params.as_deref(),
                    config: Box::new(overrides.resolve()?),
                },
            };
            commands::run(source, &out)
        }
        Command::Metrics {
            a,
            b,
            metric,
            threshold,
        } => commands::metrics(&a, &b, &metric, threshold),
        Command::Render {
            input,
            out,
            frame,
            channel,
        } => commands::render(&input, frame, channel, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = std::panic::catch_unwind(|| dispatch(cli.command))
        .unwrap_or_else(|_| Err(CliError::internal("internal error (panic)")));
    match result {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
