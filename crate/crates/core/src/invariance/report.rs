use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{calibrate, top_k_ris, FiringConfig, FiringData, FiringMode, TopKScore};
use crate::encoder::{features, EncoderParams, FeatureLayer};
use crate::error::{LabError, Result};
use crate::image::Image;
use crate::world::{Sample, Trajectory, Transformation};

/// Anything that maps samples to a `samples x units` activation matrix.
pub trait FeatureExtractor {
    fn name(&self) -> String;
    fn extract(&self, samples: &[&Sample]) -> Result<Array2<f64>>;
}

/// Reads one layer of an encoder.
#[derive(Debug, Clone, Copy)]
pub struct EncoderFeatures<'a> {
    pub params: &'a EncoderParams,
    pub layer: FeatureLayer,
}

impl FeatureExtractor for EncoderFeatures<'_> {
    fn name(&self) -> String {
        self.layer.to_string()
    }

    fn extract(&self, samples: &[&Sample]) -> Result<Array2<f64>> {
        let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
        features(self.params, &images, self.layer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationReport {
    pub transformation: Transformation,
    pub n_samples: usize,
    pub n_units: usize,
    pub scores: Vec<TopKScore>,
    /// `I_y(i)`, one row per class (a single row in fixed-rate mode).
    pub invariance: Vec<Vec<f64>>,
}

impl TransformationReport {
    pub fn percentage(&self, k: usize) -> Option<f64> {
        self.scores.iter().find(|s| s.k == k).map(|s| s.percentage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub transformations: Vec<TransformationReport>,
}

impl LayerReport {
    pub fn get(&self, t: Transformation) -> Option<&TransformationReport> {
        self.transformations.iter().find(|r| r.transformation == t)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RisMetadata {
    /// SHA-256 of the checkpoint file.
    pub checkpoint: String,
    /// SHA-256 of each dataset manifest.
    pub datasets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisReport {
    pub metadata: RisMetadata,
    pub config: FiringConfig,
    pub layers: Vec<LayerReport>,
    /// Requested transformations without a dataset.
    pub skipped: Vec<Transformation>,
}

impl RisReport {
    pub fn layer(&self, name: &str) -> Option<&LayerReport> {
        self.layers.iter().find(|l| l.layer == name)
    }
}

/// Extracts activations and runs calibration and Top-K for each `k`.
pub fn evaluate_transformation(
    extractor: &dyn FeatureExtractor,
    trajectories: &[Trajectory],
    config: &FiringConfig,
) -> Result<TransformationReport> {
    config.validate()?;
    let first = trajectories
        .first()
        .ok_or_else(|| LabError::Empty("trajectory dataset".into()))?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut index = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let start = samples.len();
        samples.extend(t.samples.iter());
        labels.extend(std::iter::repeat_n(t.category, t.samples.len()));
        index.push((t.category, (start..samples.len()).collect()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let activations = extractor.extract(&samples)?;
    let data = FiringData::new(activations, labels, n_classes, index)?;
    let calibration = calibrate(&data, config.mode)?;
    let scores = config
        .top_k
        .iter()
        .map(|&k| top_k_ris(&calibration, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransformationReport {
        transformation: first.transformation,
        n_samples: data.n_samples(),
        n_units: data.n_units(),
        scores,
        invariance: calibration.invariance_table(),
    })
}

/// Scores every transformation on the pre-normalisation output and on the
/// normalised embedding. Transformations without a dataset are skipped.
pub fn evaluate_all(
    params: &EncoderParams,
    datasets: &[(Transformation, Vec<Trajectory>)],
    config: &FiringConfig,
    metadata: RisMetadata,
) -> Result<RisReport> {
    let mut skipped = Vec::new();
    let mut present = Vec::new();
    for t in Transformation::ALL {
        match datasets.iter().find(|(d, _)| *d == t) {
            Some((_, trajs)) if !trajs.is_empty() => present.push((t, trajs)),
            _ => {
                log::warn!("no {} dataset; skipped", t.name());
                skipped.push(t);
            }
        }
    }
    let mut layers = Vec::new();
    for layer in [FeatureLayer::PreNorm, FeatureLayer::Embedding] {
        let extractor = EncoderFeatures { params, layer };
        let transformations = present
            .iter()
            .map(|(t, trajs)| {
                let mut r = evaluate_transformation(&extractor, trajs, config)?;
                r.transformation = *t;
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(LayerReport {
            layer: layer.to_string(),
            transformations,
        });
    }
    Ok(RisReport {
        metadata,
        config: config.clone(),
        layers,
        skipped,
    })
}

/// One table per layer: transformations as rows, Top-K as columns.
pub fn render_markdown(report: &RisReport) -> String {
    let mut out = String::new();
    let mode = match report.config.mode {
        FiringMode::ClassAdaptive => "class-adaptive".to_string(),
        FiringMode::FixedRate { rate } => format!("fixed-rate {rate}"),
    };
    let _ = writeln!(out, "# Invariance ({mode})\n");
    if !report.metadata.checkpoint.is_empty() {
        let _ = writeln!(out, "Checkpoint: `{}`\n", report.metadata.checkpoint);
    }
    for layer in &report.layers {
        let _ = writeln!(out, "## Layer `{}`\n", layer.layer);
        let _ = write!(out, "| Transformation |");
        for k in &report.config.top_k {
            let _ = write!(out, " Top-{k} |");
        }
        let _ = write!(out, "\n|---|");
        for _ in &report.config.top_k {
            let _ = write!(out, "---:|");
        }
        out.push('\n');
        for t in &layer.transformations {
            let _ = write!(out, "| {} |", t.transformation.name());
            for k in &report.config.top_k {
                match t.percentage(*k) {
                    Some(p) => {
                        let _ = write!(out, " {p:.2} |");
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    if !report.skipped.is_empty() {
        let names: Vec<&str> = report.skipped.iter().map(|t| t.name()).collect();
        let _ = writeln!(out, "Skipped (no dataset): {}", names.join(", "));
    }
    out
}
