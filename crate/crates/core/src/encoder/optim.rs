use serde::{Deserialize, Serialize};

use super::{EncoderParams, Gradients};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Velocity state of SGD with momentum, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumBuffer(Gradients);

impl MomentumBuffer {
    pub fn new(params: &EncoderParams) -> Self {
        Self(params.zero_gradients())
    }

    pub fn velocity(&self) -> &Gradients {
        &self.0
    }
}

/// One step of SGD with momentum and L2 weight decay:
///
/// ```text
/// g' = g + weight_decay * p
/// v  = momentum * v + g'
/// p  = p - lr * v
/// ```
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &Gradients,
    config: &SgdConfig,
    buffer: &mut MomentumBuffer,
) -> Result<()> {
    if !grads.matches(params) || !buffer.0.matches(params) {
        return Err(LabError::InvalidConfig(
            "gradient or momentum buffer shape differs from parameters".into(),
        ));
    }
    let SgdConfig {
        lr,
        momentum,
        weight_decay,
    } = *config;
    params.for_each_param_mut(|l, weight, bias| {
        let vw = &mut buffer.0.weights[l];
        ndarray::Zip::from(&mut *vw)
            .and(&grads.weights[l])
            .and(&*weight)
            .for_each(|v, &g, &p| *v = momentum * *v + g + weight_decay * p);
        weight.scaled_add(-lr, vw);
        let vb = &mut buffer.0.biases[l];
        ndarray::Zip::from(&mut *vb)
            .and(&grads.biases[l])
            .and(&*bias)
            .for_each(|v, &g, &p| *v = momentum * *v + g + weight_decay * p);
        bias.scaled_add(-lr, vb);
    });
    Ok(())
}
