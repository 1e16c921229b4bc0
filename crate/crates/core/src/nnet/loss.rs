use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

/// Training objective. Both losses take probabilities (the output of a
/// final softmax or sigmoid) and targets of the same shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Categorical cross-entropy over axis 1, averaged over samples and
    /// positions.
    CrossEntropy,
    /// Element-wise binary cross-entropy, averaged over all elements.
    BinaryCrossEntropy,
}

impl Loss {
    fn count(self, p: &Tensor) -> usize {
        match self {
            Loss::CrossEntropy => p.dim(0) * p.positions(),
            Loss::BinaryCrossEntropy => p.len(),
        }
    }

    fn check(p: &Tensor, target: &Tensor) -> Result<()> {
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "prediction {:?} and target {:?} differ",
                p.shape(),
                target.shape()
            )));
        }
        Ok(())
    }

    pub fn value(self, p: &Tensor, target: &Tensor) -> Result<f64> {
        Self::check(p, target)?;
        let count = self.count(p).max(1) as f64;
        let total: f64 = match self {
            Loss::CrossEntropy => p
                .data()
                .iter()
                .zip(target.data())
                .filter(|(_, &y)| y != 0.0)
                .map(|(&q, &y)| -y * q.max(PROB_FLOOR).ln())
                .sum(),
            Loss::BinaryCrossEntropy => p
                .data()
                .iter()
                .zip(target.data())
                .map(|(&q, &y)| {
                    let q = q.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
                })
                .sum(),
        };
        Ok(total / count)
    }

    /// Gradient with respect to the probabilities.
    pub fn grad(self, p: &Tensor, target: &Tensor) -> Result<Tensor> {
        Self::check(p, target)?;
        let count = self.count(p).max(1) as f64;
        let g = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&q, &y)| match self {
                Loss::CrossEntropy => -y / q.max(PROB_FLOOR) / count,
                Loss::BinaryCrossEntropy => {
                    let q = q.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    (q - y) / (q * (1.0 - q)) / count
                }
            })
            .collect();
        Tensor::new(p.shape().to_vec(), g)
    }

    /// Gradient with respect to the logits feeding the matching output
    /// activation: `(p - y) / count`.
    pub fn fused_grad(self, p: &Tensor, target: &Tensor) -> Result<Tensor> {
        Self::check(p, target)?;
        let count = self.count(p).max(1) as f64;
        let g = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&q, &y)| (q - y) / count)
            .collect();
        Tensor::new(p.shape().to_vec(), g)
    }
}

/// One-hot targets `[n, k, positions..]` from class indices laid out as
/// `[n, positions..]`.
pub fn one_hot(classes: &[usize], n: usize, k: usize, positions: &[usize]) -> Result<Tensor> {
    let per: usize = positions.iter().product();
    if classes.len() != n * per {
        return Err(Error::Shape(format!(
            "{} class indices for {n} samples of {per} positions",
            classes.len()
        )));
    }
    let mut data = vec![0.0; n * k * per];
    for b in 0..n {
        for p in 0..per {
            let c = classes[b * per + p];
            if c >= k {
                return Err(Error::Invalid(format!("class index {c} out of {k}")));
            }
            data[(b * k + c) * per + p] = 1.0;
        }
    }
    let mut shape = vec![n, k];
    shape.extend_from_slice(positions);
    Tensor::new(shape, data)
}
