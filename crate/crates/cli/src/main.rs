use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "difusion", version, about = "Self-supervised diffusion denoising for 4D data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Image,
    Kspace,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// JSON file with "schedule", "train" and "sampler" sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a clean phantom and noisy copies of it.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Dimensions as WxHxDxL.
        #[arg(long, default_value = "32x32x4x4")]
        size: String,
        /// Comma-separated noise standard deviations.
        #[arg(long, value_delimiter = ',', default_value = "0.2")]
        noise_std: Vec<f64>,
        #[arg(long, value_enum, default_value = "image")]
        mode: Mode,
    },
    /// Fit the denoiser to a noisy volume.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// CSV of per-step losses; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Denoise every slice of a volume.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Denoised volume path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csnr: Option<f64>,
        #[arg(long)]
        tr: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        /// Directory for PGM previews of input, output and residual.
        #[arg(long)]
        preview: Option<PathBuf>,
        /// Trace file; defaults to `<out>.traces.json`.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Compare noisy and denoised volumes against the clean one.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        noisy: PathBuf,
        #[arg(long)]
        denoised: PathBuf,
        /// Report path; the JSON goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err
        .chain()
        .any(|e| e.downcast_ref::<difusion::Error>().is_some_and(|e| e.is_config()));
    if config {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, out, size, noise_std, mode } => {
            commands::simulate(&common, &out, &size, &noise_std, mode)
        }
        Command::Train { common, input, out, steps, lr, batch_size, loss_log } => {
            commands::train(&common, &input, &out, steps, lr, batch_size, loss_log)
        }
        Command::Denoise { common, input, checkpoint, out, csnr, tr, p, eta, preview, traces } => {
            let overrides = commands::SamplerOverrides { csnr, tr, p, eta };
            commands::denoise(&common, &input, &checkpoint, &out, overrides, preview, traces)
        }
        Command::Eval { common, clean, noisy, denoised, out } => {
            commands::eval(&common, &clean, &noisy, &denoised, out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
