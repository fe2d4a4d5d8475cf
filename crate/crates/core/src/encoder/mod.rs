//! A small MLP encoder `pixels -> H -> H -> D` with hand-written gradients.
//!
//! The encoder output is L2-normalised row-wise to give the embedding. A row
//! whose pre-normalisation norm is below [`ZERO_NORM`] is mapped to the first
//! basis vector and passes no gradient.

mod backprop;
pub mod checkpoint;
mod optim;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use backprop::{backward, forward, forward_matrix, ForwardCache};
pub use optim::{sgd_step, MomentumBuffer, SgdConfig};

use crate::error::{LabError, Result};
use crate::image::{BBox, Image, ImageDims};

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `in_dim x out_dim`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input: ImageDims,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Initial bias of every rectified layer.
    pub hidden_bias: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input: ImageDims::new(16, 16, 1),
            hidden: vec![64, 64],
            embedding_dim: 32,
            hidden_bias: 0.2,
        }
    }
}

/// Weights of the encoder. Shapes chain: each layer's `in_dim` equals the
/// previous layer's `out_dim` and the first equals the pixel count.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    input: ImageDims,
    layers: Vec<DenseLayer>,
}

impl EncoderParams {
    pub fn new(input: ImageDims, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LabError::InvalidConfig("encoder needs at least one layer".into()));
        }
        let mut expected = input.len();
        for layer in &layers {
            if layer.in_dim() != expected {
                return Err(LabError::DimensionMismatch {
                    expected,
                    actual: layer.in_dim(),
                });
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(LabError::DimensionMismatch {
                    expected: layer.out_dim(),
                    actual: layer.bias.len(),
                });
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(LabError::InvalidConfig("non-finite encoder weight".into()));
            }
            expected = layer.out_dim();
        }
        Ok(Self { input, layers })
    }

    /// He-normal initialisation for rectified layers, `1/fan_in` variance for
    /// the linear output layer. Rectified layers start with bias
    /// `config.hidden_bias`, the output layer with zero.
    pub fn init(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut dims = vec![config.input.len()];
        dims.extend(&config.hidden);
        dims.push(config.embedding_dim);
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let last = i + 1 == n_layers;
                let gain = if last { 1.0 } else { 2.0 };
                let normal = Normal::new(0.0, (gain / w[0] as f64).sqrt())
                    .map_err(|e| LabError::InvalidConfig(e.to_string()))?;
                let weight = Array2::from_shape_fn((w[0], w[1]), |_| normal.sample(rng));
                Ok(DenseLayer {
                    weight,
                    bias: Array1::from_elem(w[1], if last { 0.0 } else { config.hidden_bias }),
                    activation: if last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(config.input, layers)
    }

    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        let mut params = Self::init(config, &mut crate::rng::stream(0, "zeros", 0))?;
        for layer in &mut params.layers {
            layer.weight.fill(0.0);
        }
        Ok(params)
    }

    pub fn input_dims(&self) -> ImageDims {
        self.input
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Shape-preserving mutable access to weights and biases.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut Array2<f64>, &mut Array1<f64>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(i, &mut layer.weight, &mut layer.bias);
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer: weight (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(LabError::DimensionMismatch {
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = it.next().expect("length checked");
            }
            for b in l.bias.iter_mut() {
                *b = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &EncoderParams) -> bool {
        self.input == other.input
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.activation == b.activation)
    }

    /// FNV-1a over the bit patterns of every parameter. Used to detect
    /// caches that outlive the parameters they were computed with.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Gradient container with this encoder's shapes, all zeros.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            biases: self.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }
}

/// Parameter gradients, shaped like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(alpha, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.weights.iter_mut().for_each(|w| *w *= alpha);
        self.biases.iter_mut().for_each(|b| *b *= alpha);
    }

    fn matches(&self, params: &EncoderParams) -> bool {
        self.weights.len() == params.layers.len()
            && self
                .weights
                .iter()
                .zip(&self.biases)
                .zip(&params.layers)
                .all(|((w, b), l)| w.dim() == l.weight.dim() && b.len() == l.bias.len())
    }
}

/// Rows of unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f64>,
}

/// Tolerance of the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-6;

impl EmbeddingMatrix {
    /// Wraps rows that are already unit norm within [`NORM_TOLERANCE`].
    pub fn from_normalized(values: Array2<f64>) -> Result<Self> {
        check_unit_rows(&values, NORM_TOLERANCE)?;
        Ok(Self { values })
    }

    /// Normalises each row; zero rows become `e_1`.
    pub fn normalize(mut values: Array2<f64>) -> Self {
        for mut row in values.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm < ZERO_NORM {
                row.fill(0.0);
                row[0] = 1.0;
            } else {
                row /= norm;
            }
        }
        Self { values }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn select_rows(&self, rows: &[usize]) -> EmbeddingMatrix {
        EmbeddingMatrix {
            values: self.values.select(Axis(0), rows),
        }
    }
}

pub(crate) fn check_unit_rows(values: &Array2<f64>, tolerance: f64) -> Result<()> {
    for (row, r) in values.rows().into_iter().enumerate() {
        let norm = r.dot(&r).sqrt();
        if (norm - 1.0).abs() > tolerance || !norm.is_finite() {
            return Err(LabError::NotNormalized { row, norm });
        }
    }
    Ok(())
}

/// Which representation to read out of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayer {
    /// Rectified output of hidden layer `i` (zero-based).
    Hidden(usize),
    /// Final layer output before normalisation.
    PreNorm,
    Embedding,
}

impl std::fmt::Display for FeatureLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureLayer::Hidden(i) => write!(f, "hidden{i}"),
            FeatureLayer::PreNorm => f.write_str("pre_norm"),
            FeatureLayer::Embedding => f.write_str("embedding"),
        }
    }
}

impl std::str::FromStr for FeatureLayer {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_norm" | "pre-norm" => Ok(FeatureLayer::PreNorm),
            "embedding" => Ok(FeatureLayer::Embedding),
            other => other
                .strip_prefix("hidden")
                .and_then(|i| i.parse().ok())
                .map(FeatureLayer::Hidden)
                .ok_or_else(|| LabError::InvalidConfig(format!("unknown feature layer `{s}`"))),
        }
    }
}

/// Converts and resizes an image to the encoder input shape.
pub fn prepare_image(image: &Image, dims: ImageDims) -> Result<Image> {
    Ok(image
        .to_channels(dims.channels)?
        .resize_nearest(dims.width, dims.height))
}

/// Stacks images into an `N x pixels` matrix; dimensions must match exactly.
pub fn images_to_matrix(batch: &[Image], dims: ImageDims) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((batch.len(), dims.len()));
    for (mut row, image) in x.rows_mut().into_iter().zip(batch) {
        if image.dims() != dims {
            return Err(LabError::DimensionMismatch {
                expected: dims.len(),
                actual: image.dims().len(),
            });
        }
        for (dst, &src) in row.iter_mut().zip(image.pixels()) {
            *dst = src as f64;
        }
    }
    Ok(x)
}

/// Reads out `layer` for every image, resizing/converting inputs first.
pub fn features(params: &EncoderParams, images: &[Image], layer: FeatureLayer) -> Result<Array2<f64>> {
    let prepared = images
        .iter()
        .map(|img| prepare_image(img, params.input_dims()))
        .collect::<Result<Vec<_>>>()?;
    let x = images_to_matrix(&prepared, params.input_dims())?;
    let (embedding, cache) = forward_matrix(params, x)?;
    Ok(match layer {
        FeatureLayer::Embedding => embedding.into_values(),
        FeatureLayer::PreNorm => cache.pre_norm().clone(),
        FeatureLayer::Hidden(i) => {
            if i + 1 >= params.layers.len() {
                return Err(LabError::InvalidConfig(format!(
                    "hidden layer {i} does not exist"
                )));
            }
            cache.layer_input(i + 1).clone()
        }
    })
}

/// Embeds images of any size by resizing them to the encoder input.
pub fn embed_images(params: &EncoderParams, images: &[Image]) -> Result<EmbeddingMatrix> {
    let values = features(params, images, FeatureLayer::Embedding)?;
    Ok(EmbeddingMatrix { values })
}

/// Crop-resize-encode stand-in for region pooling.
pub fn region_embed(params: &EncoderParams, frame: &Image, bbox: BBox) -> Result<Array1<f64>> {
    if bbox.area() < 4 {
        return Err(LabError::DegenerateBox(bbox));
    }
    let crop = frame.crop(bbox)?;
    let emb = embed_images(params, std::slice::from_ref(&crop))?;
    Ok(emb.values.row(0).to_owned())
}

/// Exponential moving average `key = m * key + (1 - m) * query`.
pub fn momentum_update(key: &mut EncoderParams, query: &EncoderParams, m: f64) -> Result<()> {
    if !key.same_shape(query) {
        return Err(LabError::InvalidConfig(
            "momentum update needs encoders of identical shape".into(),
        ));
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(LabError::InvalidConfig(format!("momentum {m} outside [0, 1]")));
    }
    for (k, q) in key.layers.iter_mut().zip(&query.layers) {
        k.weight.zip_mut_with(&q.weight, |a, &b| *a = m * *a + (1.0 - m) * b);
        k.bias.zip_mut_with(&q.bias, |a, &b| *a = m * *a + (1.0 - m) * b);
    }
    Ok(())
}
