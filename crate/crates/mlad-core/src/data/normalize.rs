//! Per-feature z-score normalization. Statistics are fit on the training
//! split only and applied to other splits as a pure transform.

use super::MultimodalDataset;
use crate::error::{MladError, Result};
use serde::{Deserialize, Serialize};

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    /// `[modality][feature]`
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl Normalizer {
    pub fn fit(train: &MultimodalDataset) -> Self {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for f in &train.features {
            let mu = f.col_means();
            let var = f.col_vars(&mu);
            std.push(var.iter().map(|v| v.sqrt().max(STD_FLOOR)).collect());
            mean.push(mu);
        }
        Normalizer { mean, std }
    }

    pub fn apply(&self, ds: &MultimodalDataset) -> Result<MultimodalDataset> {
        if ds.num_modalities() != self.mean.len() {
            return Err(MladError::dim("normalizer modality count mismatch"));
        }
        let mut out = ds.clone();
        for (m, f) in out.features.iter_mut().enumerate() {
            if f.cols() != self.mean[m].len() {
                return Err(MladError::dim(format!(
                    "normalizer dim mismatch in modality {m}"
                )));
            }
            for i in 0..f.rows() {
                for (j, v) in f.row_mut(i).iter_mut().enumerate() {
                    *v = (*v - self.mean[m][j]) / self.std[m][j];
                }
            }
        }
        Ok(out)
    }
}
