//! Confusion-free modality priors: entropy-weighted MLE Gaussian over the
//! low-confusion latents, ridge-stabilized, with the eigendecomposition
//! and the variance-anticorrelated reweighting vector.

use crate::error::{MladError, Result};
use crate::numerics::{sym_eig, Mat, SymEig};

pub const DEFAULT_COV_RIDGE: f64 = 1e-3;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub struct ModalityPrior {
    pub mean: Vec<f64>,
    pub cov: Mat,
    pub eig: SymEig,
    /// `softmax(-eigvals)`: axes with low prior variance (high confusion)
    /// receive the most compensation.
    pub reweight: Vec<f64>,
    pub support_count: usize,
}

/// Softmax of `sign * (-eigvals)`, max-shifted.
pub fn eigval_softmax(eigvals: &[f64], negate: bool) -> Vec<f64> {
    let scores: Vec<f64> = eigvals.iter().map(|&l| if negate { -l } else { l }).collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Weighted MLE over the low-confusion latents: weights are
/// `softmax(-H_i)`, the covariance gets `ridge * I`, and the reweighting
/// vector is `softmax(-lambda)` over the eigenvalues.
pub fn fit_prior(latents: &Mat, entropies: &[f64], ridge: f64) -> Result<ModalityPrior> {
    let n = latents.rows();
    if n < 2 {
        return Err(MladError::validation(format!(
            "prior needs at least 2 low-confusion samples, got {n}"
        )));
    }
    if entropies.len() != n {
        return Err(MladError::dim("entropy count must match latent rows"));
    }
    let d = latents.cols();

    // softmax(-H) sample weights, max-shifted
    let mx = entropies.iter().cloned().fold(f64::NEG_INFINITY, |a, b| a.max(-b));
    let mut w: Vec<f64> = entropies.iter().map(|h| (-h - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);

    let mut mean = vec![0.0; d];
    for (i, &wi) in w.iter().enumerate() {
        for (mj, &xj) in mean.iter_mut().zip(latents.row(i)) {
            *mj += wi * xj;
        }
    }
    let mut cov = Mat::zeros(d, d);
    for (i, &wi) in w.iter().enumerate() {
        let row = latents.row(i);
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                let v = wi * da * (row[b] - mean[b]);
                *cov.at_mut(a, b) += v;
            }
        }
    }
    for a in 0..d {
        for b in (a + 1)..d {
            *cov.at_mut(b, a) = cov.at(a, b);
        }
        *cov.at_mut(a, a) += ridge;
    }

    let mut eig = sym_eig(&cov)?;
    // the ridge guarantees eigenvalues >= ridge up to rotation error
    for l in &mut eig.eigvals {
        *l = l.max(ridge);
    }
    let reweight = eigval_softmax(&eig.eigvals, true);
    Ok(ModalityPrior { mean, cov, eig, reweight, support_count: n })
}

impl ModalityPrior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density via the eigendecomposition:
    /// `-1/2 [ sum_k (u_k^T (z - mu))^2 / lambda_k + sum_k ln lambda_k + d ln 2pi ]`.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        let centered: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let t = self.eig.project(&centered)?;
        let mut maha = 0.0;
        let mut logdet = 0.0;
        for (tk, &lk) in t.iter().zip(&self.eig.eigvals) {
            maha += tk * tk / lk;
            logdet += lk.ln();
        }
        Ok(-0.5 * (maha + logdet + self.dim() as f64 * LN_2PI))
    }

    /// Gradient of `-log p` with respect to `z`: `U diag(1/lambda) U^T (z - mu)`.
    pub fn nll_grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        let centered: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut t = self.eig.project(&centered)?;
        for (tk, &lk) in t.iter_mut().zip(&self.eig.eigvals) {
            *tk /= lk;
        }
        self.eig.unproject(&t)
    }

    /// Negative log density at the mean (the NLL floor).
    pub fn nll_at_mean(&self) -> f64 {
        let logdet: f64 = self.eig.eigvals.iter().map(|l| l.ln()).sum();
        0.5 * (logdet + self.dim() as f64 * LN_2PI)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn uniform_entropies_give_plain_mean() {
        let latents =
            Mat::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0], vec![5.0, 4.0]]).unwrap();
        let p = fit_prior(&latents, &[0.4, 0.4, 0.4], 1e-3).unwrap();
        assert!((p.mean[0] - 3.0).abs() < 1e-12);
        assert!((p.mean[1] - 2.0).abs() < 1e-12);
        assert_eq!(p.support_count, 3);
    }

    #[test]
    fn softmax_weights_hand_case() {
        // entropies (0, ln 2) -> weights (2/3, 1/3)
        let latents = Mat::from_rows(&[vec![3.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let p = fit_prior(&latents, &[0.0, 2f64.ln()], 1e-3).unwrap();
        assert!((p.mean[0] - 2.0).abs() < 1e-12);
        assert!((p.mean[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_eigvals_give_uniform_reweight() {
        let w = eigval_softmax(&[1.0, 1.0, 1.0], true);
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn reweight_shift_invariant() {
        let a = eigval_softmax(&[0.5, 1.5, 3.0], true);
        let b = eigval_softmax(&[10.5, 11.5, 13.0], true);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eigvals_at_least_ridge_and_density_floor() {
        let mut rng = Rng::seed_from(3);
        // rank-deficient: 3 samples in 5 dims
        let mut rows = Vec::new();
        for _ in 0..3 {
            rows.push((0..5).map(|_| rng.normal()).collect());
        }
        let latents = Mat::from_rows(&rows).unwrap();
        let p = fit_prior(&latents, &[0.1, 0.2, 0.3], 1e-3).unwrap();
        for &l in &p.eig.eigvals {
            assert!(l >= 1e-3);
        }
        // NLL at the mean equals the closed form
        let nll = -p.log_density(&p.mean).unwrap();
        assert!((nll - p.nll_at_mean()).abs() < 1e-10);
    }

    #[test]
    fn nll_grad_matches_finite_difference() {
        let mut rng = Rng::seed_from(4);
        let mut rows = Vec::new();
        for _ in 0..10 {
            rows.push((0..4).map(|_| rng.normal()).collect());
        }
        let latents = Mat::from_rows(&rows).unwrap();
        let entropies: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        let p = fit_prior(&latents, &entropies, 1e-3).unwrap();
        let z: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let g = p.nll_grad(&z).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut zp = z.clone();
            zp[j] += h;
            let fp = -p.log_density(&zp).unwrap();
            zp[j] -= 2.0 * h;
            let fm = -p.log_density(&zp).unwrap();
            let num = (fp - fm) / (2.0 * h);
            assert!((num - g[j]).abs() < 1e-5 * num.abs().max(1.0), "{num} vs {}", g[j]);
        }
    }

    #[test]
    fn single_sample_rejected() {
        let latents = Mat::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(fit_prior(&latents, &[0.1], 1e-3).is_err());
    }
}
