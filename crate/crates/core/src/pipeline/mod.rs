//! Stage orchestration with content digests.
//!
//! A pipeline is an ordered list of named stages. Each stage writes into
//! `<out>/<name>/`. After every stage the run record `<out>/pipeline.json`
//! is rewritten with the stage's cache key and the SHA-256 of each input and
//! output file. On a rerun a stage whose key is unchanged is skipped once its
//! recorded outputs verify; a file that no longer matches its digest aborts
//! the run naming the stage that produced it.

pub mod stages;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::{Regime, TrainConfig};
use crate::error::{LabError, Result};
use crate::eval::BiasExperimentConfig;
use crate::invariance::FiringConfig;
use crate::world::{TrajectoryConfig, Transformation, VideoConfig};
use stages::{BiasSubset, GenerateSpec, ProbeStageConfig, TrackStageConfig};

pub const RUN_RECORD_FILE: &str = "pipeline.json";
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "/", env!("CARGO_PKG_VERSION"));

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(digest_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageKind {
    Generate {
        #[serde(flatten)]
        spec: GenerateSpec,
    },
    Train {
        /// Stage that generated the training data.
        data: String,
        /// Stage that produced tracks, for track regimes.
        #[serde(default)]
        tracks: Option<String>,
        #[serde(default)]
        subset: BiasSubset,
        #[serde(default)]
        config: TrainConfig,
    },
    Track {
        checkpoint: String,
        data: String,
        #[serde(default)]
        config: TrackStageConfig,
    },
    Ris {
        checkpoint: String,
        data: Vec<String>,
        #[serde(default)]
        config: FiringConfig,
    },
    Probe {
        checkpoint: String,
        data: String,
        #[serde(default)]
        config: ProbeStageConfig,
    },
    Bias {
        #[serde(default)]
        config: BiasExperimentConfig,
    },
    Report {
        inputs: Vec<String>,
    },
}

impl StageKind {
    pub fn name(&self) -> &'static str {
        match self {
            StageKind::Generate { .. } => "generate",
            StageKind::Train { .. } => "train",
            StageKind::Track { .. } => "track",
            StageKind::Ris { .. } => "ris",
            StageKind::Probe { .. } => "probe",
            StageKind::Bias { .. } => "bias",
            StageKind::Report { .. } => "report",
        }
    }

    /// Stages this one reads from.
    pub fn dependencies(&self) -> Vec<&str> {
        match self {
            StageKind::Generate { .. } | StageKind::Bias { .. } => Vec::new(),
            StageKind::Train { data, tracks, .. } => std::iter::once(data.as_str()).chain(tracks.as_deref()).collect(),
            StageKind::Track { checkpoint, data, .. } | StageKind::Probe { checkpoint, data, .. } => {
                vec![checkpoint.as_str(), data.as_str()]
            }
            StageKind::Ris { checkpoint, data, .. } => {
                std::iter::once(checkpoint.as_str()).chain(data.iter().map(String::as_str)).collect()
            }
            StageKind::Report { inputs } => inputs.iter().map(String::as_str).collect(),
        }
    }

    /// Adds `offset` to every seed the stage uses.
    pub fn offset_seeds(&mut self, offset: u64) {
        match self {
            StageKind::Generate { spec } => spec.set_seed(spec.seed().wrapping_add(offset)),
            StageKind::Train { config, .. } => config.seed = config.seed.wrapping_add(offset),
            StageKind::Track { config, .. } => config.tracker.seed = config.tracker.seed.wrapping_add(offset),
            StageKind::Probe { config, .. } => config.seed = config.seed.wrapping_add(offset),
            StageKind::Bias { config } => {
                config.data.seed = config.data.seed.wrapping_add(offset);
                config.eval_seed = config.eval_seed.wrapping_add(offset);
                for s in &mut config.seeds {
                    *s = s.wrapping_add(offset);
                }
            }
            StageKind::Ris { .. } | StageKind::Report { .. } => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: StageKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Added to every stage seed.
    pub seed: u64,
    pub stages: Vec<StageSpec>,
}

impl PipelineConfig {
    /// Stage names are unique and every reference points to an earlier stage.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, &StageKind> = HashMap::new();
        for stage in &self.stages {
            if stage.name.is_empty() || stage.name.contains(['/', '\\']) || stage.name.starts_with('.') {
                return Err(LabError::InvalidConfig(format!("bad stage name `{}`", stage.name)));
            }
            for dep in stage.kind.dependencies() {
                if !seen.contains_key(dep) {
                    return Err(LabError::InvalidConfig(format!(
                        "stage `{}` depends on `{dep}`, which is not an earlier stage",
                        stage.name
                    )));
                }
            }
            if seen.insert(&stage.name, &stage.kind).is_some() {
                return Err(LabError::InvalidConfig(format!("duplicate stage `{}`", stage.name)));
            }
        }
        Ok(())
    }

    /// The full experiment: videos and trajectories, all four regimes, tracks
    /// from the baseline encoder, RIS and probes for every checkpoint, the
    /// dataset-bias experiment and a report.
    pub fn standard() -> Self {
        let mut stages = Vec::new();
        let stage = |name: &str, kind| StageSpec {
            name: name.to_string(),
            kind,
        };
        let videos = VideoConfig {
            n_videos: 256,
            ..VideoConfig::default()
        };
        stages.push(stage("videos", StageKind::Generate { spec: GenerateSpec::Videos(videos.clone()) }));
        stages.push(stage(
            "probe-videos",
            StageKind::Generate {
                spec: GenerateSpec::Videos(VideoConfig {
                    n_videos: 64,
                    seed: 10_000,
                    ..videos
                }),
            },
        ));
        let mut trajectory_stages = Vec::new();
        for (i, t) in [Transformation::Viewpoint, Transformation::InstanceViewpoint].into_iter().enumerate() {
            let name = format!("traj-{}", t.name());
            stages.push(stage(
                &name,
                StageKind::Generate {
                    spec: GenerateSpec::Trajectories(TrajectoryConfig::new(t, 4, 10, 12, 1000 + i as u64)),
                },
            ));
            trajectory_stages.push(name);
        }
        let mut train = TrainConfig {
            steps: 2000,
            frame_gap: Some(2),
            ..TrainConfig::default()
        };
        train.augment.crop_area.0 = 0.6;
        let train_stage = |regime: Regime, tracks: Option<&str>| StageKind::Train {
            data: "videos".into(),
            tracks: tracks.map(str::to_string),
            subset: BiasSubset::Scenes,
            config: TrainConfig {
                regime,
                ..train.clone()
            },
        };
        stages.push(stage("baseline", train_stage(Regime::Baseline, None)));
        stages.push(stage("frame-temporal", train_stage(Regime::FrameTemporal, None)));
        stages.push(stage("gt-tracks", train_stage(Regime::GtTracks, None)));
        let mut tracker = TrackStageConfig::default();
        tracker.tracker.stride = 2;
        tracker.tracker.horizon = 2;
        stages.push(stage(
            "tracks",
            StageKind::Track {
                checkpoint: "baseline".into(),
                data: "videos".into(),
                config: tracker,
            },
        ));
        stages.push(stage("region-tracker", train_stage(Regime::RegionTracker, Some("tracks"))));
        let mut inputs = vec!["tracks".to_string()];
        for model in ["baseline", "frame-temporal", "gt-tracks", "region-tracker"] {
            stages.push(stage(
                &format!("ris-{model}"),
                StageKind::Ris {
                    checkpoint: model.into(),
                    data: trajectory_stages.clone(),
                    config: FiringConfig::default(),
                },
            ));
            stages.push(stage(
                &format!("probe-{model}"),
                StageKind::Probe {
                    checkpoint: model.into(),
                    data: "probe-videos".into(),
                    config: ProbeStageConfig::default(),
                },
            ));
            inputs.push(format!("ris-{model}"));
            inputs.push(format!("probe-{model}"));
        }
        let mut bias = BiasExperimentConfig::default();
        for t in [&mut bias.scene_train, &mut bias.box_train] {
            t.steps = 2000;
            t.augment.crop_area.0 = 0.6;
        }
        stages.push(stage("bias", StageKind::Bias { config: bias }));
        inputs.push("bias".into());
        stages.push(stage("report", StageKind::Report { inputs }));
        Self { seed: 0, stages }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    /// Path relative to the pipeline output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub stage: String,
    /// Digest of the stage configuration, tool version and input digests.
    pub key: String,
    pub config: serde_json::Value,
    pub inputs: Vec<ArtifactDigest>,
    pub outputs: Vec<ArtifactDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| LabError::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| LabError::io(path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineOutcome {
    pub executed: Vec<String>,
    pub cached: Vec<String>,
    /// Markdown of the report stages, in order.
    pub report: String,
}

fn verify(out: &Path, stage: &str, artifacts: &[ArtifactDigest]) -> Result<()> {
    for a in artifacts {
        let path = out.join(&a.path);
        let ok = path.exists() && digest_file(&path)? == a.sha256;
        if !ok {
            return Err(LabError::DigestMismatch {
                stage: stage.to_string(),
                path,
            });
        }
    }
    Ok(())
}

fn run_stage(kind: &StageKind, out: &Path, dir: &Path) -> Result<Vec<String>> {
    let at = |name: &str| out.join(name);
    let ckpt = |name: &str| at(name).join(stages::CHECKPOINT_FILE);
    match kind {
        StageKind::Generate { spec } => stages::generate(spec, dir),
        StageKind::Train {
            data,
            tracks,
            subset,
            config,
        } => {
            let tracks = tracks.as_deref().map(|t| at(t).join(stages::TRACKS_FILE));
            stages::train_stage(config, &at(data), tracks.as_deref(), *subset, dir)
        }
        StageKind::Track { checkpoint, data, config } => stages::track_stage(config, &ckpt(checkpoint), &at(data), dir),
        StageKind::Ris { checkpoint, data, config } => {
            let dirs: Vec<PathBuf> = data.iter().map(|d| at(d)).collect();
            stages::ris_stage(config, &ckpt(checkpoint), &dirs, dir)
        }
        StageKind::Probe { checkpoint, data, config } => stages::probe_stage(config, &ckpt(checkpoint), &at(data), dir),
        StageKind::Bias { config } => stages::bias_stage(config, dir),
        StageKind::Report { inputs } => {
            let dirs: Vec<PathBuf> = inputs.iter().map(|d| at(d)).collect();
            stages::report_stage(&dirs, dir)
        }
    }
}

/// Runs the stages in order, skipping those whose cache key and outputs are
/// unchanged since the last run into `out`.
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<PipelineOutcome> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let record_path = out.join(RUN_RECORD_FILE);
    let previous = if record_path.exists() {
        Some(ExperimentManifest::load(&record_path)?)
    } else {
        None
    };
    let mut manifest = ExperimentManifest {
        tool_version: TOOL_VERSION.to_string(),
        seed: config.seed,
        stages: Vec::new(),
    };
    let mut outcome = PipelineOutcome::default();

    for spec in &config.stages {
        let mut kind = spec.kind.clone();
        kind.offset_seeds(config.seed);

        let mut inputs = Vec::new();
        for dep in kind.dependencies() {
            let producer = manifest.stage(dep).expect("validated order");
            verify(out, &spec.name, &producer.outputs)?;
            inputs.extend(producer.outputs.iter().cloned());
        }
        let stage_json = serde_json::to_value(&kind)?;
        let key = digest_bytes(&serde_json::to_vec(&(TOOL_VERSION, &spec.name, &stage_json, &inputs))?);

        let cached = previous
            .as_ref()
            .and_then(|p| p.stage(&spec.name))
            .filter(|r| r.key == key);
        let record = match cached {
            Some(r) => {
                verify(out, &spec.name, &r.outputs)?;
                log::info!("stage `{}` unchanged; skipped", spec.name);
                outcome.cached.push(spec.name.clone());
                r.clone()
            }
            None => {
                log::info!("running stage `{}` ({})", spec.name, kind.name());
                let dir = out.join(&spec.name);
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
                }
                let files = run_stage(&kind, out, &dir).map_err(|e| LabError::Stage {
                    stage: spec.name.clone(),
                    source: Box::new(e),
                })?;
                let outputs = files
                    .iter()
                    .map(|f| {
                        let rel = format!("{}/{f}", spec.name);
                        Ok(ArtifactDigest {
                            sha256: digest_file(&out.join(&rel))?,
                            path: rel,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                outcome.executed.push(spec.name.clone());
                StageRecord {
                    name: spec.name.clone(),
                    stage: kind.name().to_string(),
                    key,
                    config: stage_json,
                    inputs,
                    outputs,
                }
            }
        };
        if matches!(kind, StageKind::Report { .. }) {
            let md = out.join(&spec.name).join("report.md");
            outcome.report.push_str(&fs::read_to_string(&md).map_err(|e| LabError::io(&md, e))?);
        }
        manifest.stages.push(record);
        manifest.save(&record_path)?;
    }
    manifest.save(&record_path)?;
    Ok(outcome)
}
