use ndarray::{Array1, Array2, Axis, Zip};

use super::{images_to_matrix, Activation, EmbeddingMatrix, EncoderParams, Gradients, ZERO_NORM};
use crate::error::{LabError, Result};
use crate::image::Image;

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    /// Input to each layer; `inputs[0]` is the pixel matrix.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    /// Pre-normalisation row norms.
    norms: Array1<f64>,
    embedding: Array2<f64>,
}

impl ForwardCache {
    /// Final layer output before normalisation.
    pub fn pre_norm(&self) -> &Array2<f64> {
        self.pre.last().expect("non-empty")
    }

    pub(crate) fn layer_input(&self, layer: usize) -> &Array2<f64> {
        &self.inputs[layer]
    }

    pub fn batch_size(&self) -> usize {
        self.norms.len()
    }
}

/// Embeds a batch of images whose shape matches the encoder input.
pub fn forward(params: &EncoderParams, batch: &[Image]) -> Result<(EmbeddingMatrix, ForwardCache)> {
    let x = images_to_matrix(batch, params.input_dims())?;
    forward_matrix(params, x)
}

/// Forward pass on an `N x pixels` input matrix.
pub fn forward_matrix(params: &EncoderParams, x: Array2<f64>) -> Result<(EmbeddingMatrix, ForwardCache)> {
    if x.ncols() != params.input_dims().len() {
        return Err(LabError::DimensionMismatch {
            expected: params.input_dims().len(),
            actual: x.ncols(),
        });
    }
    let n_layers = params.layers().len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut current = x;
    for layer in params.layers() {
        let mut z = current.dot(&layer.weight);
        z += &layer.bias;
        let out = match layer.activation {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        };
        inputs.push(current);
        pre.push(z);
        current = out;
    }
    let norms = current.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let embedding = EmbeddingMatrix::normalize(current);
    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        inputs,
        pre,
        norms,
        embedding: embedding.values().clone(),
    };
    Ok((embedding, cache))
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// gradient with respect to the normalised embeddings.
///
/// The normalisation Jacobian of a row is `(I - e e^T) / |z|`; rows that hit
/// the zero-norm fallback contribute nothing.
pub fn backward(params: &EncoderParams, cache: &ForwardCache, grad_embeddings: &Array2<f64>) -> Result<Gradients> {
    if cache.fingerprint != params.fingerprint() || cache.pre.len() != params.layers().len() {
        return Err(LabError::StaleCache);
    }
    let expected = (cache.batch_size(), params.embedding_dim());
    if grad_embeddings.dim() != expected {
        return Err(LabError::DimensionMismatch {
            expected: expected.0 * expected.1,
            actual: grad_embeddings.len(),
        });
    }

    let mut upstream = grad_embeddings.clone();
    for ((mut g, e), &norm) in upstream
        .rows_mut()
        .into_iter()
        .zip(cache.embedding.rows())
        .zip(cache.norms.iter())
    {
        if norm < ZERO_NORM {
            g.fill(0.0);
            continue;
        }
        let along = g.dot(&e);
        Zip::from(&mut g).and(&e).for_each(|gi, &ei| *gi = (*gi - along * ei) / norm);
    }

    let mut grads = params.zero_gradients();
    for (l, layer) in params.layers().iter().enumerate().rev() {
        if layer.activation == Activation::Relu {
            Zip::from(&mut upstream)
                .and(&cache.pre[l])
                .for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
        }
        grads.weights[l] = cache.inputs[l].t().dot(&upstream);
        grads.biases[l] = upstream.sum_axis(Axis(0));
        if l > 0 {
            upstream = upstream.dot(&layer.weight.t());
        }
    }
    Ok(grads)
}
