//! Command-line interface of the `lab` binary.
//!
//! Every subcommand takes `--config` (a JSON file; defaults apply to missing
//! fields), `--seed` (replaces the configuration's seed) and `--out` (an
//! output directory).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::contrastive::TrainConfig;
use crate::error::{LabError, Result};
use crate::eval::BiasExperimentConfig;
use crate::invariance::FiringConfig;
use crate::pipeline::stages::{self, BiasSubset, GenerateKind, GenerateSpec, ProbeStageConfig, TrackStageConfig};
use crate::pipeline::{run_pipeline, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "lab", version, about = "Contrastive learning and invariance measurement on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a trajectory, video or dataset-bias dataset.
    Generate {
        #[arg(long, value_enum)]
        kind: GenerateKind,
        #[command(flatten)]
        common: Common,
    },
    /// Train an encoder on a generated dataset.
    Train {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Tracks file for the region-tracker regime.
        #[arg(long)]
        tracks: Option<PathBuf>,
        /// Half of a bias dataset to train on.
        #[arg(long, value_enum, default_value = "scenes")]
        subset: BiasSubset,
        #[command(flatten)]
        common: Common,
    },
    /// Build region tracks through every video with a trained encoder.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Top-K invariance scores of a checkpoint on trajectory datasets.
    Ris {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One or more trajectory dataset directories.
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Linear probe of frozen features.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Scene-trained versus box-trained encoders.
    Bias {
        #[command(flatten)]
        common: Common,
    },
    /// Merge stage results into one report.
    Report {
        /// Stage output directories.
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a staged pipeline; unchanged stages are skipped.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    Ok(read_value(path)?.map(serde_json::from_value).transpose()?.unwrap_or_default())
}

fn read_value(path: Option<&Path>) -> Result<Option<serde_json::Value>> {
    let Some(path) = path else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let value = serde_json::from_str(&text).map_err(|e| LabError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(Some(value))
}

fn announce(out: &Path, files: &[String]) {
    for f in files {
        println!("{}", out.join(f).display());
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { kind, common } => {
            let mut spec = GenerateSpec::from_config(kind, read_value(common.config.as_deref())?)?;
            if let Some(seed) = common.seed {
                spec.set_seed(seed);
            }
            announce(&common.out, &stages::generate(&spec, &common.out)?);
        }
        Command::Train {
            data,
            tracks,
            subset,
            common,
        } => {
            let mut config: TrainConfig = read_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            let files = stages::train_stage(&config, &data, tracks.as_deref(), subset, &common.out)?;
            announce(&common.out, &files);
        }
        Command::Track { checkpoint, data, common } => {
            let mut config: TrackStageConfig = read_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                config.tracker.seed = seed;
            }
            announce(&common.out, &stages::track_stage(&config, &checkpoint, &data, &common.out)?);
        }
        Command::Ris { checkpoint, data, common } => {
            // thresholds are quantiles, so the score draws no random numbers
            let config: FiringConfig = read_config(common.config.as_deref())?;
            announce(&common.out, &stages::ris_stage(&config, &checkpoint, &data, &common.out)?);
        }
        Command::Probe { checkpoint, data, common } => {
            let mut config: ProbeStageConfig = read_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            announce(&common.out, &stages::probe_stage(&config, &checkpoint, &data, &common.out)?);
        }
        Command::Bias { common } => {
            let mut config: BiasExperimentConfig = read_config(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                let n = config.seeds.len() as u64;
                config.seeds = (seed..seed + n).collect();
            }
            announce(&common.out, &stages::bias_stage(&config, &common.out)?);
        }
        Command::Report { inputs, common } => {
            announce(&common.out, &stages::report_stage(&inputs, &common.out)?);
        }
        Command::Pipeline { common } => {
            let mut config = match read_value(common.config.as_deref())? {
                Some(v) => serde_json::from_value(v)?,
                None => PipelineConfig::standard(),
            };
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            let outcome = run_pipeline(&config, &common.out)?;
            println!(
                "{} stages executed, {} unchanged",
                outcome.executed.len(),
                outcome.cached.len()
            );
            if !outcome.report.is_empty() {
                print!("{}", outcome.report);
            }
        }
    }
    Ok(())
}
