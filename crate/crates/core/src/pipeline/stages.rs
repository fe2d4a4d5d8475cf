//! One function per CLI stage. Each reads its inputs from disk, writes its
//! artifacts into an output directory and returns the written file names.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::digest_file;
use crate::contrastive::{train, write_metrics_csv, TrainConfig, TrainData, TrainReport};
use crate::encoder::checkpoint::Checkpoint;
use crate::encoder::FeatureLayer;
use crate::error::{LabError, Result};
use crate::eval::{
    linear_probe, render_bias_markdown, run_bias_experiment, BiasExperimentConfig, BiasTable,
    MetricKind, ProbeConfig, ProbeResult, ProbeSplit,
};
use crate::image::Image;
use crate::invariance::{evaluate_all, render_markdown, FiringConfig, RisMetadata, RisReport};
use crate::tracker::{build_tracks, calibrate_threshold, is_pure, load_tracks, save_tracks, TrackerConfig};
use crate::world::store::{self, Dataset, DatasetManifest};
use crate::world::{
    make_bias_datasets, make_trajectory_dataset, make_video_dataset, BiasConfig, Trajectory,
    TrajectoryConfig, Video, VideoConfig,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAIN_FILE: &str = "train.json";
pub const TRACKS_FILE: &str = "tracks.json";
pub const TRACK_SUMMARY_FILE: &str = "track_summary.json";
pub const RIS_FILE: &str = "ris.json";
pub const PROBE_FILE: &str = "probe.json";
pub const BIAS_FILE: &str = "bias.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GenerateKind {
    Trajectories,
    Videos,
    Bias,
}

/// Generator configuration tagged by dataset kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum GenerateSpec {
    Trajectories(TrajectoryConfig),
    Videos(VideoConfig),
    Bias(BiasConfig),
}

impl GenerateSpec {
    /// Parses the kind's own configuration; `None` uses its defaults.
    pub fn from_config(kind: GenerateKind, config: Option<serde_json::Value>) -> Result<Self> {
        Ok(match (kind, config) {
            (GenerateKind::Trajectories, Some(v)) => GenerateSpec::Trajectories(serde_json::from_value(v)?),
            (GenerateKind::Trajectories, None) => {
                return Err(LabError::InvalidConfig(
                    "trajectory generation needs a config naming the transformation".into(),
                ))
            }
            (GenerateKind::Videos, v) => GenerateSpec::Videos(v.map(serde_json::from_value).transpose()?.unwrap_or_default()),
            (GenerateKind::Bias, v) => GenerateSpec::Bias(v.map(serde_json::from_value).transpose()?.unwrap_or_default()),
        })
    }

    pub fn seed(&self) -> u64 {
        match self {
            GenerateSpec::Trajectories(c) => c.seed,
            GenerateSpec::Videos(c) => c.seed,
            GenerateSpec::Bias(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            GenerateSpec::Trajectories(c) => c.seed = seed,
            GenerateSpec::Videos(c) => c.seed = seed,
            GenerateSpec::Bias(c) => c.seed = seed,
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn generate(spec: &GenerateSpec, out: &Path) -> Result<Vec<String>> {
    let (dataset, n_classes, config) = match spec {
        GenerateSpec::Trajectories(c) => (
            Dataset::Trajectories(make_trajectory_dataset(c)?),
            c.n_classes,
            serde_json::to_value(c)?,
        ),
        GenerateSpec::Videos(c) => (
            Dataset::Videos(make_video_dataset(c)?),
            c.n_classes,
            serde_json::to_value(c)?,
        ),
        GenerateSpec::Bias(c) => (
            Dataset::Bias(make_bias_datasets(c)?),
            c.n_classes,
            serde_json::to_value(c)?,
        ),
    };
    store::save(out, &dataset, spec.seed(), n_classes, config)?;
    Ok(vec![store::MANIFEST_FILE.into(), store::PIXELS_FILE.into()])
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    store::load(dir)
}

fn expect_videos(dir: &Path) -> Result<Vec<Video>> {
    match load_dataset(dir)?.0 {
        Dataset::Videos(v) => Ok(v),
        other => Err(LabError::InvalidConfig(format!(
            "{} holds {:?} data, expected videos",
            dir.display(),
            other.kind()
        ))),
    }
}

fn expect_trajectories(dir: &Path) -> Result<Vec<Trajectory>> {
    match load_dataset(dir)?.0 {
        Dataset::Trajectories(t) => Ok(t),
        other => Err(LabError::InvalidConfig(format!(
            "{} holds {:?} data, expected trajectories",
            dir.display(),
            other.kind()
        ))),
    }
}

/// Which half of a bias dataset to train on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BiasSubset {
    #[default]
    Scenes,
    Boxes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub checkpoint_sha256: String,
    pub report: TrainReport,
}

pub fn train_stage(
    config: &TrainConfig,
    data: &Path,
    tracks: Option<&Path>,
    subset: BiasSubset,
    out: &Path,
) -> Result<Vec<String>> {
    let tracks = tracks.map(load_tracks).transpose()?;
    let (dataset, _) = load_dataset(data)?;
    let images: Vec<Image>;
    let train_data = match &dataset {
        Dataset::Videos(videos) => TrainData::Videos {
            videos,
            tracks: tracks.as_deref(),
        },
        Dataset::Trajectories(trajs) => {
            images = trajs.iter().flat_map(|t| t.samples.iter().map(|s| s.image.clone())).collect();
            TrainData::Images(&images)
        }
        Dataset::Bias(bias) => {
            images = match subset {
                BiasSubset::Scenes => bias.scenes.iter().map(|s| s.image.clone()).collect(),
                BiasSubset::Boxes => bias.boxes.iter().map(|s| s.image.clone()).collect(),
            };
            TrainData::Images(&images)
        }
    };
    let outcome = train(train_data, config)?;
    create_dir(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ckpt)?;
    write_metrics_csv(&out.join(METRICS_FILE), &outcome.report.records)?;
    write_json(
        &out.join(TRAIN_FILE),
        &TrainSummary {
            config: config.clone(),
            checkpoint_sha256: digest_file(&ckpt)?,
            report: outcome.report,
        },
    )?;
    Ok(vec![CHECKPOINT_FILE.into(), METRICS_FILE.into(), TRAIN_FILE.into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackStageConfig {
    pub tracker: TrackerConfig,
    /// When set, the threshold is replaced by this quantile of the
    /// candidate scores.
    pub quantile: Option<f64>,
}

impl Default for TrackStageConfig {
    fn default() -> Self {
        Self {
            tracker: TrackerConfig::default(),
            quantile: Some(0.98),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub config: TrackerConfig,
    pub n_tracks: usize,
    /// Fraction of pure tracks over all videos; 0 without tracks.
    pub purity: f64,
}

pub fn track_stage(config: &TrackStageConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<Vec<String>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let videos = expect_videos(data)?;
    let mut tracker = config.tracker;
    if let Some(q) = config.quantile {
        tracker.threshold = calibrate_threshold(&ckpt.params, &videos, &tracker, q)?;
    }
    let mut tracks = Vec::new();
    let mut pure = 0usize;
    for video in &videos {
        let found = build_tracks(&ckpt.params, video, &tracker)?;
        pure += found.iter().filter(|t| is_pure(t, video)).count();
        tracks.extend(found);
    }
    let purity = if tracks.is_empty() {
        0.0
    } else {
        pure as f64 / tracks.len() as f64
    };
    log::info!("{} tracks, purity {purity:.3}", tracks.len());
    create_dir(out)?;
    save_tracks(&out.join(TRACKS_FILE), &tracks)?;
    write_json(
        &out.join(TRACK_SUMMARY_FILE),
        &TrackSummary {
            config: tracker,
            n_tracks: tracks.len(),
            purity,
        },
    )?;
    Ok(vec![TRACKS_FILE.into(), TRACK_SUMMARY_FILE.into()])
}

pub fn ris_stage(config: &FiringConfig, checkpoint: &Path, data: &[PathBuf], out: &Path) -> Result<Vec<String>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut datasets = Vec::new();
    for dir in data {
        let trajs = expect_trajectories(dir)?;
        let t = trajs
            .first()
            .ok_or_else(|| LabError::Empty(format!("trajectory dataset {}", dir.display())))?
            .transformation;
        datasets.push((t, trajs));
    }
    let metadata = RisMetadata {
        checkpoint: digest_file(checkpoint)?,
        datasets: data
            .iter()
            .map(|d| digest_file(&d.join(store::MANIFEST_FILE)))
            .collect::<Result<_>>()?,
    };
    let report = evaluate_all(&ckpt.params, &datasets, config, metadata)?;
    create_dir(out)?;
    write_json(&out.join(RIS_FILE), &report)?;
    write(&out.join("ris.md"), render_markdown(&report))?;
    Ok(vec![RIS_FILE.into(), "ris.md".into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeStageConfig {
    pub probe: ProbeConfig,
    pub train_fraction: f64,
    pub layer: FeatureLayer,
    pub seed: u64,
}

impl Default for ProbeStageConfig {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            train_fraction: 0.5,
            layer: FeatureLayer::PreNorm,
            seed: 0,
        }
    }
}

/// Probes a checkpoint on every task the dataset offers: cropped gt boxes
/// for videos, scenes and boxes for bias data, samples for trajectories.
pub fn probe_stage(config: &ProbeStageConfig, checkpoint: &Path, data: &Path, out: &Path) -> Result<Vec<String>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let id = digest_file(checkpoint)?;
    let (dataset, manifest) = load_dataset(data)?;
    let tasks: Vec<(&str, ProbeSplit)> = match &dataset {
        Dataset::Videos(v) => vec![("video-boxes", ProbeSplit::video_boxes(v, config.train_fraction)?)],
        Dataset::Bias(b) => vec![
            ("scenes", ProbeSplit::scenes(b, config.train_fraction)?),
            ("boxes", ProbeSplit::boxes(b, config.train_fraction)?),
        ],
        Dataset::Trajectories(t) => {
            let samples: Vec<_> = t.iter().flat_map(|t| t.samples.iter()).collect();
            vec![("samples", ProbeSplit::samples(&samples, config.train_fraction)?)]
        }
    };
    let mut results = Vec::new();
    for (task, split) in tasks {
        let fx = |images: &[Image]| crate::encoder::features(&ckpt.params, images, config.layer);
        let scores = linear_probe(
            (&fx(&split.train.0)?, &split.train.1),
            (&fx(&split.test.0)?, &split.test.1),
            manifest.n_classes,
            &config.probe,
            config.seed,
        )?;
        for (metric, value) in [(MetricKind::Top1, scores.top1), (MetricKind::MeanAp, scores.mean_ap)] {
            results.push(ProbeResult {
                task: task.to_string(),
                metric,
                value,
                train_size: split.train.1.len(),
                test_size: split.test.1.len(),
                seed: config.seed,
                checkpoint: id.clone(),
            });
        }
    }
    create_dir(out)?;
    write_json(&out.join(PROBE_FILE), &results)?;
    write(&out.join("probe.md"), render_probe_markdown(&results))?;
    Ok(vec![PROBE_FILE.into(), "probe.md".into()])
}

pub fn render_probe_markdown(results: &[ProbeResult]) -> String {
    let mut out = String::from("# Linear probe\n\n| Task | Metric | Value | Train | Test |\n|---|---|---:|---:|---:|\n");
    for r in results {
        let metric = match r.metric {
            MetricKind::Top1 => "top-1",
            MetricKind::MeanAp => "mean AP",
        };
        let _ = writeln!(out, "| {} | {metric} | {:.4} | {} | {} |", r.task, r.value, r.train_size, r.test_size);
    }
    out
}

pub fn bias_stage(config: &BiasExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let table = run_bias_experiment(config)?;
    create_dir(out)?;
    write_json(&out.join(BIAS_FILE), &table)?;
    write(&out.join("bias.md"), render_bias_markdown(&table))?;
    Ok(vec![BIAS_FILE.into(), "bias.md".into()])
}

/// One stage's machine-readable result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ReportItem {
    Train(Box<TrainSummary>),
    Tracks(TrackSummary),
    Ris(Box<RisReport>),
    Probe(Vec<ProbeResult>),
    Bias(BiasTable),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    /// `(source directory name, item)` in input order.
    pub items: Vec<(String, ReportItem)>,
}

impl Report {
    /// Collects every known result file from `inputs`.
    pub fn collect(inputs: &[PathBuf]) -> Result<Self> {
        let mut items = Vec::new();
        for dir in inputs {
            let name = dir
                .file_name()
                .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
            let found = [
                (TRAIN_FILE, 0),
                (TRACK_SUMMARY_FILE, 1),
                (RIS_FILE, 2),
                (PROBE_FILE, 3),
                (BIAS_FILE, 4),
            ];
            let before = items.len();
            for (file, tag) in found {
                let path = dir.join(file);
                if !path.exists() {
                    continue;
                }
                let item = match tag {
                    0 => {
                        let mut s: TrainSummary = read_json(&path)?;
                        // per-step records stay in metrics.csv
                        s.report.records.clear();
                        ReportItem::Train(Box::new(s))
                    }
                    1 => ReportItem::Tracks(read_json(&path)?),
                    2 => ReportItem::Ris(Box::new(read_json(&path)?)),
                    3 => ReportItem::Probe(read_json(&path)?),
                    _ => ReportItem::Bias(read_json(&path)?),
                };
                items.push((name.clone(), item));
            }
            if items.len() == before {
                log::warn!("no results found in {name}");
            }
        }
        Ok(Self { items })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Report\n");
        for (source, item) in &self.items {
            let _ = writeln!(out, "\n<!-- {source} -->\n");
            match item {
                ReportItem::Train(s) => {
                    let _ = writeln!(
                        out,
                        "# Training `{}`\n\nRegime {}, {} steps, frame gap {}, patch pairs {}, fallback pairs {}.",
                        source,
                        s.config.regime,
                        s.config.steps,
                        s.report.frame_gap.map_or("-".to_string(), |g| g.to_string()),
                        s.report.patch_pairs,
                        s.report.fallback_pairs
                    );
                }
                ReportItem::Tracks(t) => {
                    let _ = writeln!(out, "# Tracks `{source}`\n\n{} tracks, purity {:.4}.", t.n_tracks, t.purity);
                }
                ReportItem::Ris(r) => out.push_str(&render_markdown(r)),
                ReportItem::Probe(p) => out.push_str(&render_probe_markdown(p)),
                ReportItem::Bias(b) => out.push_str(&render_bias_markdown(b)),
            }
        }
        out
    }
}

pub fn report_stage(inputs: &[PathBuf], out: &Path) -> Result<Vec<String>> {
    let report = Report::collect(inputs)?;
    create_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write(&out.join("report.md"), report.to_markdown())?;
    Ok(vec![REPORT_FILE.into(), "report.md".into()])
}
