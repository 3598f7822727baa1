//! Pipeline driver: every stage of the gaze pipeline as a subcommand of one
//! binary, all reading the same JSON config.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use cabingaze_model::Preset;
use clap::{Parser, Subcommand, ValueEnum};

pub use config::PipelineConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cabingaze", version, about = "In-cabin gaze pipeline: calibration, annotation, normalization, training, evaluation")]
pub struct Cli {
    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replaces the model section (and the normalization output size).
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageSource {
    /// Face-centered crops as written by `simulate`.
    Crop,
    /// Full frames from the configured DMS camera.
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cabin, chessboard corners, captures and a rendered dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate depth→DMS extrinsics from paired corner files.
    Calibrate {
        /// Directory of `board_NN_dms.jsonl` / `board_NN_depth.jsonl` pairs.
        #[arg(long)]
        corners: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn captures (face centers + targets) into annotated records.
    Annotate {
        #[arg(long)]
        captures: PathBuf,
        /// Needed when targets are given in the depth-camera frame.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warp each record's image into the normalized view.
    Normalize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "crop")]
        source: ImageSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model on a normalized dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint, or a predictions file, against a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// JSONL of `{"gaze": [x, y, z], "zone": ...}`, one line per record.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check of the configured model.
    Gradcheck {
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an eval report as a table and SVG charts.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective config.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Loads the config and applies the global flags.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.preset {
        cfg.apply_preset(p);
        cfg.validate()?;
    }
    Ok(cfg)
}

/// Runs one subcommand; returns the text to print on stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = effective_config(cli)?;
    use commands::*;
    match &cli.command {
        Command::Simulate { out } => simulate::run(&cfg, out),
        Command::Calibrate { corners, out } => calibrate::run(&cfg, corners, out),
        Command::Annotate { captures, calibration, out } => annotate::run(captures, calibration.as_deref(), out),
        Command::Normalize { dataset, source, out } => normalize::run(&cfg, dataset, *source, out),
        Command::Train { dataset, out } => train::run(&cfg, cli.preset, dataset, out),
        Command::Eval { dataset, checkpoint, predictions, out } => {
            eval::run(&cfg, dataset, checkpoint.as_deref(), predictions.as_deref(), out)
        }
        Command::Gradcheck { out } => gradcheck::run(&cfg, out.as_deref()),
        Command::Report { report, out } => report::run(report, out),
        Command::Config { out } => match out {
            Some(p) => {
                io::write_text(p, &cfg.to_json())?;
                Ok(String::new())
            }
            None => Ok(cfg.to_json()),
        },
    }
}
