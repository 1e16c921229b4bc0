use serde::{Deserialize, Serialize};

use super::FrameSeries;
use crate::error::{Error, Result};

/// Per-band feature standardisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    pub fn fit<'a>(series: impl IntoIterator<Item = &'a FrameSeries>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for s in series {
            if sum.is_empty() {
                sum = vec![0.0; s.dims()];
                sq = vec![0.0; s.dims()];
            }
            if s.dims() != sum.len() {
                return Err(Error::Shape("feature dims differ across files".into()));
            }
            for i in 0..s.frames() {
                for (d, &v) in s.row(i).iter().enumerate() {
                    sum[d] += v as f64;
                    sq[d] += (v as f64).powi(2);
                }
            }
            count += s.frames();
        }
        if count == 0 {
            return Err(Error::Invalid("no frames to fit normalisation".into()));
        }
        let n = count as f64;
        Ok(Self {
            mean: sum.iter().map(|s| (s / n) as f32).collect(),
            std: sum
                .iter()
                .zip(&sq)
                .map(|(s, q)| ((q / n - (s / n).powi(2)).max(0.0).sqrt().max(1e-3)) as f32)
                .collect(),
        })
    }

    pub fn apply(&self, x: &FrameSeries) -> Result<FrameSeries> {
        if x.dims() != self.mean.len() {
            return Err(Error::Shape(format!(
                "features have {} dims, normaliser expects {}",
                x.dims(),
                self.mean.len()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.frames() {
            for (d, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[d]) / self.std[d];
            }
        }
        Ok(out)
    }
}
