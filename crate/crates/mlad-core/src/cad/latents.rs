//! Class latent distributions and their exit depths.

use crate::data::MultimodalDataset;
use crate::error::{MladError, Result};
use crate::numerics::{GaussianDiag, Mat};

use super::tower::ModalityTower;

/// Diagonal-Gaussian MLE over one class's latents (column means, biased
/// column variances, floored).
pub fn fit_class_distribution(latents: &Mat) -> Result<GaussianDiag> {
    GaussianDiag::fit(latents)
}

/// Per (modality, class): the class latent distribution and its exit
/// depth, plus empirical class priors.
#[derive(Debug, Clone)]
pub struct ClassLatentTable {
    /// `[modality][class]`
    pub dists: Vec<Vec<GaussianDiag>>,
    /// `[modality][class]`, 1-based depth.
    pub exit_depths: Vec<Vec<usize>>,
    pub priors: Vec<f64>,
}

impl ClassLatentTable {
    pub fn num_modalities(&self) -> usize {
        self.dists.len()
    }

    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn validate(&self, max_depth: usize) -> Result<()> {
        for depths in &self.exit_depths {
            if depths.iter().any(|&d| d == 0 || d > max_depth) {
                return Err(MladError::validation("exit depth out of range"));
            }
        }
        let s: f64 = self.priors.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(MladError::validation("class priors must sum to 1"));
        }
        Ok(())
    }
}

/// Class distributions cached at every depth: `[modality][depth-1][class]`.
#[derive(Debug, Clone)]
pub struct PerDepthTable {
    pub dists: Vec<Vec<Vec<GaussianDiag>>>,
}

impl PerDepthTable {
    /// Fits the distribution of every class at every depth of every
    /// modality from the dataset's latents.
    pub fn fit(towers: &[ModalityTower], ds: &MultimodalDataset) -> Result<Self> {
        let groups = ds.class_indices();
        let mut dists = Vec::with_capacity(towers.len());
        for (m, tower) in towers.iter().enumerate() {
            let fwd = tower.forward_full(&ds.features[m])?;
            let mut per_depth = Vec::with_capacity(tower.depth());
            for d in 0..tower.depth() {
                let mut per_class = Vec::with_capacity(ds.num_classes);
                for g in &groups {
                    per_class.push(fit_class_distribution(&fwd.latents[d].select_rows(g))?);
                }
                per_depth.push(per_class);
            }
            dists.push(per_depth);
        }
        Ok(PerDepthTable { dists })
    }

    pub fn dist(&self, m: usize, depth: usize, class: usize) -> &GaussianDiag {
        &self.dists[m][depth - 1][class]
    }

    /// Table entry at the given per-class exit depths.
    pub fn at_depths(&self, exit_depths: &[Vec<usize>], priors: Vec<f64>) -> ClassLatentTable {
        let dists = exit_depths
            .iter()
            .enumerate()
            .map(|(m, per_class)| {
                per_class
                    .iter()
                    .enumerate()
                    .map(|(c, &d)| self.dist(m, d, c).clone())
                    .collect()
            })
            .collect();
        ClassLatentTable { dists, exit_depths: exit_depths.to_vec(), priors }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_is_gaussian_mle() {
        let m = Mat::from_rows(&[vec![0.0, 1.0], vec![2.0, 1.0], vec![4.0, 1.0]]).unwrap();
        let g = fit_class_distribution(&m).unwrap();
        assert_eq!(g.mean, vec![2.0, 1.0]);
        assert!((g.var[0] - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(g.var[1], crate::numerics::VAR_FLOOR);
    }

    #[test]
    fn table_validation() {
        let g = GaussianDiag::new(vec![0.0], vec![1.0]).unwrap();
        let t = ClassLatentTable {
            dists: vec![vec![g.clone(), g]],
            exit_depths: vec![vec![1, 7]],
            priors: vec![0.5, 0.5],
        };
        assert!(t.validate(5).is_err());
        assert!(t.validate(7).is_ok());
    }
}
