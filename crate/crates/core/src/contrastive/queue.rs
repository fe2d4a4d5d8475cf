use ndarray::{s, Array2};

use crate::encoder::EmbeddingMatrix;
use crate::error::{LabError, Result};

/// FIFO dictionary of key embeddings used as negatives.
///
/// Backed by a ring buffer; [`NegativeQueue::to_matrix`] returns rows oldest
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    buf: Array2<f64>,
    start: usize,
    len: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(LabError::InvalidConfig(
                "queue capacity and dimension must be positive".into(),
            ));
        }
        Ok(Self {
            buf: Array2::zeros((capacity, dim)),
            start: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.buf.nrows()
    }

    pub fn dim(&self) -> usize {
        self.buf.ncols()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends every row of `keys`, evicting the oldest rows once full.
    pub fn push(&mut self, keys: &EmbeddingMatrix) -> Result<()> {
        if keys.dim() != self.dim() {
            return Err(LabError::DimensionMismatch {
                expected: self.dim(),
                actual: keys.dim(),
            });
        }
        let cap = self.capacity();
        for row in keys.values().rows() {
            let slot = if self.len < cap {
                self.len += 1;
                (self.start + self.len - 1) % cap
            } else {
                let slot = self.start;
                self.start = (self.start + 1) % cap;
                slot
            };
            self.buf.row_mut(slot).assign(&row);
        }
        Ok(())
    }

    /// Current contents, oldest row first.
    pub fn to_matrix(&self) -> Array2<f64> {
        let cap = self.capacity();
        let head = (cap - self.start).min(self.len);
        let mut out = Array2::zeros((self.len, self.dim()));
        out.slice_mut(s![..head, ..])
            .assign(&self.buf.slice(s![self.start..self.start + head, ..]));
        if head < self.len {
            out.slice_mut(s![head.., ..])
                .assign(&self.buf.slice(s![..self.len - head, ..]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(ids: &[f64]) -> EmbeddingMatrix {
        // unit rows tagged by their first coordinate's angle
        let values = Array2::from_shape_fn((ids.len(), 2), |(i, j)| {
            if j == 0 {
                ids[i].cos()
            } else {
                ids[i].sin()
            }
        });
        EmbeddingMatrix::from_normalized(values).unwrap()
    }

    fn tags(q: &NegativeQueue) -> Vec<f64> {
        q.to_matrix()
            .rows()
            .into_iter()
            .map(|r| (r[1].atan2(r[0]) * 1e6).round() / 1e6)
            .collect()
    }

    #[test]
    fn keeps_latest_batches() {
        let mut q = NegativeQueue::new(4, 2).unwrap();
        q.push(&batch(&[0.1, 0.2])).unwrap();
        q.push(&batch(&[0.3, 0.4])).unwrap();
        q.push(&batch(&[0.5, 0.6])).unwrap();
        assert_eq!(tags(&q), vec![0.3, 0.4, 0.5, 0.6]);
    }

    #[test]
    fn full_batch_into_empty_queue() {
        let mut q = NegativeQueue::new(3, 2).unwrap();
        q.push(&batch(&[0.1, 0.2, 0.3])).unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(tags(&q), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn uneven_pushes_keep_last_rows() {
        let mut q = NegativeQueue::new(5, 2).unwrap();
        q.push(&batch(&[0.1, 0.2])).unwrap();
        q.push(&batch(&[0.3, 0.4, 0.5])).unwrap();
        q.push(&batch(&[0.6, 0.7])).unwrap();
        assert_eq!(tags(&q), vec![0.3, 0.4, 0.5, 0.6, 0.7]);
    }

    #[test]
    fn dimension_mismatch() {
        let mut q = NegativeQueue::new(5, 3).unwrap();
        assert!(q.push(&batch(&[0.1])).is_err());
        assert!(NegativeQueue::new(0, 3).is_err());
    }
}
