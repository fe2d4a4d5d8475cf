use ndarray::{Array1, Array2, Axis};

use super::queue::NegativeQueue;
use crate::encoder::{check_unit_rows, EmbeddingMatrix};
use crate::error::{LabError, Result};

/// Rows fed to the loss must be unit norm within this tolerance.
pub const LOSS_NORM_TOLERANCE: f64 = 1e-5;

/// Value and query gradient of the queue-based contrastive loss.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// `d loss / d q`, shaped like the queries.
    pub grad_q: Array2<f64>,
    /// Per-row losses, before averaging.
    pub per_row: Array1<f64>,
}

/// Cross-entropy over the logits `[q.k+, q.n_1, ..., q.n_K] / tau` with the
/// positive in slot 0, averaged over rows. Keys and queue entries are
/// constants: only the gradient with respect to `q` is returned.
pub fn contrastive_loss(
    q: &EmbeddingMatrix,
    k_pos: &EmbeddingMatrix,
    queue: &NegativeQueue,
    temperature: f64,
) -> Result<LossOutput> {
    if queue.is_empty() {
        return Err(LabError::EmptyQueue);
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(LabError::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if q.rows() != k_pos.rows() {
        return Err(LabError::DimensionMismatch {
            expected: q.rows(),
            actual: k_pos.rows(),
        });
    }
    for dim in [k_pos.dim(), queue.dim()] {
        if dim != q.dim() {
            return Err(LabError::DimensionMismatch {
                expected: q.dim(),
                actual: dim,
            });
        }
    }
    check_unit_rows(q.values(), LOSS_NORM_TOLERANCE)?;
    check_unit_rows(k_pos.values(), LOSS_NORM_TOLERANCE)?;
    let negatives = queue.to_matrix();
    check_unit_rows(&negatives, LOSS_NORM_TOLERANCE)?;

    let n = q.rows();
    let inv_t = 1.0 / temperature;
    let pos = (q.values() * k_pos.values()).sum_axis(Axis(1)) * inv_t;
    let neg = q.values().dot(&negatives.t()) * inv_t;

    let mut per_row = Array1::zeros(n);
    let mut grad_q = Array2::zeros(q.values().dim());
    for i in 0..n {
        let lp = pos[i];
        let ln_row = neg.row(i);
        let max_neg = ln_row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let m = lp.max(max_neg);
        let e_pos = (lp - m).exp();
        let e_neg = ln_row.mapv(|l| (l - m).exp());
        let sum_neg = e_neg.sum();
        let total = e_pos + sum_neg;
        // -log softmax_0; the ln_1p branch keeps tiny losses accurate
        per_row[i] = if lp >= max_neg {
            sum_neg.ln_1p()
        } else {
            (m - lp) + total.ln()
        };

        let p_pos = e_pos / total;
        let mut g = grad_q.row_mut(i);
        g.scaled_add(p_pos - 1.0, &k_pos.row(i));
        let weights = e_neg / total;
        g += &weights.dot(&negatives);
        g *= inv_t / n as f64;
    }
    Ok(LossOutput {
        loss: per_row.mean().expect("non-empty"),
        grad_q,
        per_row,
    })
}
