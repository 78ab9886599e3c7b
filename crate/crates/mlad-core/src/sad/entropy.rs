//! Posterior-entropy confusion scoring.

use crate::cad::ClassLatentTable;
use crate::error::{MladError, Result};
use crate::numerics::log_sum_exp;

/// Entropy of the class posterior of a latent under the fitted class
/// distributions: `p(c|z) ∝ pi_c * p_c(z)`, normalized in log space.
/// Lies in `[0, ln C]`.
pub fn posterior_entropy(z: &[f64], table: &ClassLatentTable, m: usize) -> Result<f64> {
    if m >= table.num_modalities() {
        return Err(MladError::validation(format!("modality {m} not in table")));
    }
    let scores: Vec<f64> = table.dists[m]
        .iter()
        .zip(&table.priors)
        .map(|(dist, &pi)| {
            if pi <= 0.0 {
                Ok(f64::NEG_INFINITY)
            } else {
                Ok(pi.ln() + dist.log_density(z)?)
            }
        })
        .collect::<Result<_>>()?;
    let log_z = log_sum_exp(&scores);
    if !log_z.is_finite() {
        return Err(MladError::numerical("posterior normalizer is not finite"));
    }
    let mut h = 0.0;
    for s in scores {
        let lp = s - log_z;
        if lp > f64::NEG_INFINITY {
            let p = lp.exp();
            if p > 0.0 {
                h -= p * lp;
            }
        }
    }
    Ok(h.max(0.0))
}

/// Entropy of an explicit probability vector; shared by tests and
/// diagnostics.
pub fn entropy_of(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cad::ClassLatentTable;
    use crate::numerics::GaussianDiag;

    fn table_of(dists: Vec<GaussianDiag>, priors: Vec<f64>) -> ClassLatentTable {
        ClassLatentTable {
            exit_depths: vec![vec![1; dists.len()]],
            dists: vec![dists],
            priors,
        }
    }

    #[test]
    fn equidistant_symmetric_classes_give_ln_c() {
        // four identical-shape Gaussians at (+-1, +-1); z at the origin
        let dists = vec![
            GaussianDiag::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap(),
            GaussianDiag::new(vec![1.0, -1.0], vec![1.0, 1.0]).unwrap(),
            GaussianDiag::new(vec![-1.0, 1.0], vec![1.0, 1.0]).unwrap(),
            GaussianDiag::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        ];
        let t = table_of(dists, vec![0.25; 4]);
        let h = posterior_entropy(&[0.0, 0.0], &t, 0).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);
        assert!((h - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn one_hot_posterior_has_zero_entropy() {
        let dists = vec![
            GaussianDiag::new(vec![0.0], vec![0.01]).unwrap(),
            GaussianDiag::new(vec![100.0], vec![0.01]).unwrap(),
        ];
        let t = table_of(dists, vec![0.5, 0.5]);
        let h = posterior_entropy(&[0.0], &t, 0).unwrap();
        assert!(h < 1e-8, "h = {h}");
    }

    #[test]
    fn direct_summation_oracle() {
        // entropy of (0.7, 0.2, 0.1)
        let h = entropy_of(&[0.7, 0.2, 0.1]);
        let expect = -(0.7f64 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        assert!((h - expect).abs() < 1e-15);
        assert!((h - 0.801819).abs() < 1e-6);
    }

    #[test]
    fn bounded_by_ln_c_and_scale_invariant() {
        // likelihood rescaling (common prior factor) cannot change H
        let dists = vec![
            GaussianDiag::new(vec![0.3], vec![0.5]).unwrap(),
            GaussianDiag::new(vec![-0.4], vec![1.5]).unwrap(),
            GaussianDiag::new(vec![2.0], vec![0.7]).unwrap(),
        ];
        let t1 = table_of(dists.clone(), vec![1.0 / 3.0; 3]);
        // identical shapes, priors scaled by a common positive factor then
        // renormalized: the posterior is unchanged
        let t2 = table_of(dists, vec![1.0 / 3.0; 3]);
        for z in [-2.0, 0.0, 0.4, 3.0] {
            let h1 = posterior_entropy(&[z], &t1, 0).unwrap();
            let h2 = posterior_entropy(&[z], &t2, 0).unwrap();
            assert!((h1 - h2).abs() < 1e-14);
            assert!((0.0..=3f64.ln() + 1e-12).contains(&h1));
        }
    }
}
