use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{features, EncoderParams, FeatureLayer};
use crate::error::{LabError, Result};
use crate::image::Image;
use crate::rng;
use crate::world::{BiasDatasets, Sample, Video};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Full-batch gradient steps.
    pub steps: usize,
    pub lr: f64,
    /// L2 penalty on the weights.
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Top1,
    MeanAp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub metric: MetricKind,
    pub value: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub checkpoint: String,
}

/// Softmax classifier on standardised features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    mean: Array1<f64>,
    scale: Array1<f64>,
    /// `features x classes`.
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl LinearProbe {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn standardize(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(LabError::DimensionMismatch {
                expected: self.mean.len(),
                actual: x.ncols(),
            });
        }
        Ok((x - &self.mean) / &self.scale)
    }

    /// Class logits for each row of `x`.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.standardize(x)?.dot(&self.weight) + &self.bias)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
    }
}

/// First index of the maximum.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Fits a multinomial logistic regression by full-batch gradient descent
/// for a fixed number of steps. Features are standardised with training
/// statistics; constant features are left centred.
pub fn fit_probe(
    x: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    config: &ProbeConfig,
    seed: u64,
) -> Result<LinearProbe> {
    if x.nrows() != labels.len() {
        return Err(LabError::DimensionMismatch {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(LabError::InvalidConfig(format!("label {bad} outside {n_classes} classes")));
    }
    for y in 0..n_classes {
        if !labels.contains(&y) {
            return Err(LabError::MissingClass(y));
        }
    }
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let scale = x
        .var_axis(Axis(0), 0.0)
        .mapv(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
    let mut probe = LinearProbe {
        mean,
        scale,
        weight: Array2::zeros((x.ncols(), n_classes)),
        bias: Array1::zeros(n_classes),
    };
    let mut init = rng::stream(seed, "probe", 0);
    let normal = Normal::new(0.0, 0.01).expect("valid");
    probe.weight.mapv_inplace(|_| normal.sample(&mut init));

    let xs = probe.standardize(x)?;
    let mut onehot = Array2::<f64>::zeros((labels.len(), n_classes));
    for (i, &y) in labels.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    for _ in 0..config.steps {
        let mut p = xs.dot(&probe.weight) + &probe.bias;
        softmax_rows(&mut p);
        p -= &onehot;
        let mut gw = xs.t().dot(&p) / n;
        gw.scaled_add(config.weight_decay, &probe.weight);
        let gb = p.sum_axis(Axis(0)) / n;
        probe.weight.scaled_add(-config.lr, &gw);
        probe.bias.scaled_add(-config.lr, &gb);
    }
    Ok(probe)
}

/// Fraction of rows whose highest score is the true label (first maximum
/// wins ties).
pub fn top1(scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if scores.nrows() != labels.len() || labels.is_empty() {
        return Err(LabError::DimensionMismatch {
            expected: scores.nrows(),
            actual: labels.len(),
        });
    }
    let hits = scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, &y)| argmax(r.iter().copied()) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Non-interpolated average precision: the mean of the precision at the
/// rank of every positive. Items are ranked by descending score with a
/// stable sort, so ties keep their input order.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(LabError::DimensionMismatch {
            expected: scores.len(),
            actual: positive.len(),
        });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(LabError::Empty("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// One-vs-rest average precision averaged over classes.
pub fn mean_ap(scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if scores.nrows() != labels.len() {
        return Err(LabError::DimensionMismatch {
            expected: scores.nrows(),
            actual: labels.len(),
        });
    }
    let n_classes = scores.ncols();
    let mut total = 0.0;
    for c in 0..n_classes {
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if !positive.contains(&true) {
            return Err(LabError::MissingClass(c));
        }
        total += average_precision(&scores.column(c).to_vec(), &positive)?;
    }
    Ok(total / n_classes as f64)
}

/// Test metrics of a probe trained on frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScores {
    pub top1: f64,
    pub mean_ap: f64,
    pub probe: LinearProbe,
}

pub fn linear_probe(
    train: (&Array2<f64>, &[usize]),
    test: (&Array2<f64>, &[usize]),
    n_classes: usize,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeScores> {
    let probe = fit_probe(train.0, train.1, n_classes, config, seed)?;
    let logits = probe.logits(test.0)?;
    let top1 = top1(&logits, test.1)?;
    let mean_ap = mean_ap(&logits, test.1)?;
    Ok(ProbeScores { top1, mean_ap, probe })
}

/// Labelled probe data split into fit and test parts.
#[derive(Debug, Clone)]
pub struct ProbeSplit {
    pub train: (Vec<Image>, Vec<usize>),
    pub test: (Vec<Image>, Vec<usize>),
}

impl ProbeSplit {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, train_fraction: f64) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(LabError::DimensionMismatch {
                expected: images.len(),
                actual: labels.len(),
            });
        }
        if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(LabError::InvalidConfig(format!(
                "probe train fraction {train_fraction} outside (0, 1)"
            )));
        }
        let cut = (images.len() as f64 * train_fraction).round() as usize;
        let mut images = images;
        let mut labels = labels;
        let test_images = images.split_off(cut);
        let test_labels = labels.split_off(cut);
        Ok(Self {
            train: (images, labels),
            test: (test_images, test_labels),
        })
    }

    /// Cropped ground-truth boxes of every frame, labelled by category.
    /// Videos are split, not boxes, so no object appears on both sides.
    pub fn video_boxes(videos: &[Video], train_fraction: f64) -> Result<Self> {
        let cut = (videos.len() as f64 * train_fraction).round() as usize;
        let collect = |vs: &[Video]| -> Result<(Vec<Image>, Vec<usize>)> {
            let mut images = Vec::new();
            let mut labels = Vec::new();
            for v in vs {
                for (frame, objects) in v.frames.iter().zip(&v.objects) {
                    for o in objects {
                        images.push(frame.crop(o.bbox)?);
                        labels.push(o.spec.category);
                    }
                }
            }
            Ok((images, labels))
        };
        if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(LabError::InvalidConfig(format!(
                "probe train fraction {train_fraction} outside (0, 1)"
            )));
        }
        Ok(Self {
            train: collect(&videos[..cut])?,
            test: collect(&videos[cut..])?,
        })
    }

    pub fn samples(samples: &[&Sample], train_fraction: f64) -> Result<Self> {
        Self::new(
            samples.iter().map(|s| s.image.clone()).collect(),
            samples.iter().map(|s| s.category).collect(),
            train_fraction,
        )
    }

    pub fn scenes(data: &BiasDatasets, train_fraction: f64) -> Result<Self> {
        Self::new(
            data.scenes.iter().map(|s| s.image.clone()).collect(),
            data.scenes.iter().map(|s| s.label).collect(),
            train_fraction,
        )
    }

    pub fn boxes(data: &BiasDatasets, train_fraction: f64) -> Result<Self> {
        Self::new(
            data.boxes.iter().map(|s| s.image.clone()).collect(),
            data.boxes.iter().map(|s| s.category).collect(),
            train_fraction,
        )
    }
}

/// Top-1 of a softmax probe on frozen features of `params`.
pub fn probe_encoder(
    params: &EncoderParams,
    split: &ProbeSplit,
    n_classes: usize,
    layer: FeatureLayer,
    config: &ProbeConfig,
    seed: u64,
) -> Result<(f64, usize, usize)> {
    let fx = |images: &[Image]| -> Result<Array2<f64>> { features(params, images, layer) };
    let train_x = fx(&split.train.0)?;
    let test_x = fx(&split.test.0)?;
    let scores = linear_probe(
        (&train_x, &split.train.1),
        (&test_x, &split.test.1),
        n_classes,
        config,
        seed,
    )?;
    Ok((scores.top1, split.train.1.len(), split.test.1.len()))
}
