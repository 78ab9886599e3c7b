//! Diagonal Gaussian distributions over latent vectors.

use super::mat::Mat;
use super::rng::{gaussian_sample, Rng};
use crate::error::{MladError, Result};

/// Variance floor applied to every fitted diagonal Gaussian.
pub const VAR_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian: independent per-dimension mean and variance.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GaussianDiag {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianDiag {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(MladError::dim("GaussianDiag mean/var length mismatch"));
        }
        let var = var.into_iter().map(|v| v.max(VAR_FLOOR)).collect();
        Ok(GaussianDiag { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// MLE fit over the rows of `latents`: column means and biased column
    /// variances, floored at `VAR_FLOOR`. Needs at least two rows.
    pub fn fit(latents: &Mat) -> Result<Self> {
        if latents.rows() < 2 {
            return Err(MladError::validation(format!(
                "need at least 2 rows to fit a class distribution, got {}",
                latents.rows()
            )));
        }
        let mean = latents.col_means();
        let var = latents.col_vars(&mean);
        GaussianDiag::new(mean, var)
    }

    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.sqrt()).collect()
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(MladError::dim("log_density dimension mismatch"));
        }
        let mut acc = 0.0;
        for ((&x, &m), &v) in z.iter().zip(&self.mean).zip(&self.var) {
            let d = x - m;
            acc += d * d / v + v.ln() + LN_2PI;
        }
        Ok(-0.5 * acc)
    }

    /// One reparameterized draw.
    pub fn sample(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        gaussian_sample(rng, &self.mean, &self.std())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_hit_the_floor() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let g = GaussianDiag::fit(&m).unwrap();
        assert_eq!(g.mean, vec![1.0, 2.0]);
        assert_eq!(g.var, vec![VAR_FLOOR, VAR_FLOOR]);
    }

    #[test]
    fn hand_fit() {
        let m = Mat::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let g = GaussianDiag::fit(&m).unwrap();
        assert_eq!(g.mean, vec![1.0, 0.0]);
        assert_eq!(g.var[0], 1.0);
        assert_eq!(g.var[1], VAR_FLOOR);
    }

    #[test]
    fn sampling_oracle_recovers_moments() {
        let mut rng = Rng::seed_from(123);
        let mut rows = Vec::new();
        for _ in 0..1000 {
            rows.push(vec![3.0 + 2.0 * rng.normal(), 3.0 + 2.0 * rng.normal()]);
        }
        let m = Mat::from_rows(&rows).unwrap();
        let g = GaussianDiag::fit(&m).unwrap();
        for d in 0..2 {
            assert!((g.mean[d] - 3.0).abs() < 0.2, "mean {}", g.mean[d]);
            assert!((g.var[d] - 4.0).abs() < 0.5, "var {}", g.var[d]);
        }
    }

    #[test]
    fn single_row_rejected() {
        let m = Mat::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(GaussianDiag::fit(&m).is_err());
    }

    #[test]
    fn log_density_standard_normal_at_origin() {
        let g = GaussianDiag::new(vec![0.0], vec![1.0]).unwrap();
        let ld = g.log_density(&[0.0]).unwrap();
        assert!((ld + 0.5 * LN_2PI).abs() < 1e-12);
    }
}
