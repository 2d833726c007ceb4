//! Running per-feature standardization for observations and the critic
//! state. Stats update from raw batches between episodes during training and
//! stay frozen at evaluation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    /// Sum of squared deviations (Welford M2).
    pub m2: Vec<f64>,
    pub count: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> RunningNorm {
        RunningNorm {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim());
        self.count += 1.0;
        for (i, &x) in row.iter().enumerate() {
            let d = x - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (x - self.mean[i]);
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2[i] / self.count).sqrt().max(1e-6)
        }
    }

    /// Standardize and clip to +-5 so outliers cannot blow up the nets.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, &x)| ((x - self.mean[i]) / self.std(i)).clamp(-5.0, 5.0))
            .collect()
    }
}
