//! Two-component Gaussian mixture over per-sample entropies and the
//! equal-density threshold splitting low- from high-confusion samples.

use crate::error::{MladError, Result};
use serde::{Deserialize, Serialize};

pub const GMM_STD_FLOOR: f64 = 1e-4;
pub const GMM_WEIGHT_FLOOR: f64 = 1e-3;
const MAX_ITERS: usize = 200;
const LL_TOL: f64 = 1e-8;
const MEAN_COLLAPSE: f64 = 1e-6;

/// Fitted two-component 1-D mixture, oriented so `means[0] <= means[1]`.
/// `threshold` is the equal-weighted-density point between the means; on
/// collapse it falls back to the median and `converged` is false.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmSplit {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub stds: [f64; 2],
    pub threshold: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl GmmSplit {
    /// Weighted density of component k at x.
    pub fn weighted_density(&self, k: usize, x: f64) -> f64 {
        let (mu, sd, w) = (self.means[k], self.stds[k], self.weights[k]);
        let z = (x - mu) / sd;
        w * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn log_normal(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// EM fit initialized at the 25th/75th percentiles; weight and std floors
/// keep degenerate components from going singular.
pub fn fit_entropy_gmm(h: &[f64]) -> Result<GmmSplit> {
    let n = h.len();
    if n < 4 {
        return Err(MladError::validation(format!("GMM needs at least 4 points, got {n}")));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(MladError::validation("non-finite entropy input"));
    }
    let mut sorted = h.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = median(&sorted);

    let mut means = [sorted[n / 4], sorted[(3 * n) / 4]];
    let global_mean = h.iter().sum::<f64>() / n as f64;
    let global_std = (h.iter().map(|v| (v - global_mean).powi(2)).sum::<f64>() / n as f64)
        .sqrt()
        .max(GMM_STD_FLOOR);
    let mut stds = [global_std, global_std];
    let mut weights: [f64; 2] = [0.5, 0.5];

    let mut last_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut collapsed = false;
    let mut resp = vec![0.0; n]; // responsibility of component 0
    for iter in 0..MAX_ITERS {
        iterations = iter + 1;
        // E step
        let mut ll = 0.0;
        for (i, &x) in h.iter().enumerate() {
            let l0 = weights[0].ln() + log_normal(x, means[0], stds[0]);
            let l1 = weights[1].ln() + log_normal(x, means[1], stds[1]);
            let mx = l0.max(l1);
            let z = (l0 - mx).exp() + (l1 - mx).exp();
            resp[i] = (l0 - mx).exp() / z;
            ll += mx + z.ln();
        }
        // M step
        let r0: f64 = resp.iter().sum();
        let r1 = n as f64 - r0;
        if r0 / (n as f64) < GMM_WEIGHT_FLOOR || r1 / (n as f64) < GMM_WEIGHT_FLOOR {
            collapsed = true;
            break;
        }
        weights = [r0 / n as f64, r1 / n as f64];
        let mut mu = [0.0, 0.0];
        for (&x, &r) in h.iter().zip(&resp) {
            mu[0] += r * x;
            mu[1] += (1.0 - r) * x;
        }
        means = [mu[0] / r0, mu[1] / r1];
        let mut var = [0.0, 0.0];
        for (&x, &r) in h.iter().zip(&resp) {
            var[0] += r * (x - means[0]).powi(2);
            var[1] += (1.0 - r) * (x - means[1]).powi(2);
        }
        stds = [
            (var[0] / r0).sqrt().max(GMM_STD_FLOOR),
            (var[1] / r1).sqrt().max(GMM_STD_FLOOR),
        ];
        if (ll - last_ll).abs() < LL_TOL {
            break;
        }
        last_ll = ll;
    }

    // orient: component 0 has the lower mean
    if means[0] > means[1] {
        means.swap(0, 1);
        stds.swap(0, 1);
        weights.swap(0, 1);
    }

    if collapsed || (means[1] - means[0]).abs() < MEAN_COLLAPSE {
        return Ok(GmmSplit {
            weights,
            means,
            stds,
            threshold: med,
            converged: false,
            iterations,
        });
    }

    match equal_density_point(weights, means, stds) {
        Some(threshold) => Ok(GmmSplit {
            weights,
            means,
            stds,
            threshold,
            converged: true,
            iterations,
        }),
        None => Ok(GmmSplit {
            weights,
            means,
            stds,
            threshold: med,
            converged: false,
            iterations,
        }),
    }
}

/// Root of `w0 N(x; m0, s0^2) = w1 N(x; m1, s1^2)` between the means
/// (quadratic in x; the in-between root is preferred, otherwise the one
/// nearest the midpoint).
fn equal_density_point(w: [f64; 2], m: [f64; 2], s: [f64; 2]) -> Option<f64> {
    let a = 0.5 / (s[1] * s[1]) - 0.5 / (s[0] * s[0]);
    let b = m[0] / (s[0] * s[0]) - m[1] / (s[1] * s[1]);
    let c = m[1] * m[1] / (2.0 * s[1] * s[1]) - m[0] * m[0] / (2.0 * s[0] * s[0])
        + ((w[0] * s[1]) / (w[1] * s[0])).ln();
    let roots: Vec<f64> = if a.abs() < 1e-14 {
        if b.abs() < 1e-14 {
            return None;
        }
        vec![-c / b]
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        vec![(-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)]
    };
    let (lo, hi) = (m[0], m[1]);
    roots
        .iter()
        .copied()
        .find(|r| *r >= lo && *r <= hi)
        .or_else(|| {
            let mid = 0.5 * (lo + hi);
            roots
                .into_iter()
                .min_by(|x, y| (x - mid).abs().partial_cmp(&(y - mid).abs()).unwrap())
        })
}

/// Partition into low-confusion (`H < threshold`) and high-confusion
/// index sets. An empty low set is an error so the caller can fall back
/// to the lowest-entropy half.
pub fn select_low_confusion(h: &[f64], split: &GmmSplit) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut low = Vec::new();
    let mut high = Vec::new();
    for (i, &v) in h.iter().enumerate() {
        if v < split.threshold {
            low.push(i);
        } else {
            high.push(i);
        }
    }
    if low.is_empty() {
        return Err(MladError::EmptyLowConfusionSet);
    }
    Ok((low, high))
}

/// The declared fallback: indices of the `n/2` lowest entropies.
pub fn lowest_entropy_half(h: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by(|&a, &b| h[a].partial_cmp(&h[b]).unwrap().then(a.cmp(&b)));
    idx.truncate((h.len() / 2).max(1));
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn symmetric_midpoint_threshold() {
        // equal weights and stds, means 0 and 2: threshold exactly 1
        let t = equal_density_point([0.5, 0.5], [0.0, 2.0], [0.3, 0.3]).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_two_point_clusters() {
        let mut rng = Rng::seed_from(1);
        let mut h = Vec::new();
        for _ in 0..500 {
            h.push(0.1 + 0.01 * rng.normal());
        }
        for _ in 0..500 {
            h.push(1.2 + 0.01 * rng.normal());
        }
        let split = fit_entropy_gmm(&h).unwrap();
        assert!(split.converged);
        assert!((split.means[0] - 0.1).abs() < 0.02, "mean0 {}", split.means[0]);
        assert!((split.means[1] - 1.2).abs() < 0.02, "mean1 {}", split.means[1]);
        assert!(split.threshold > 0.1 && split.threshold < 1.2);
        // equal weighted densities at the threshold
        let d0 = split.weighted_density(0, split.threshold);
        let d1 = split.weighted_density(1, split.threshold);
        assert!((d0 - d1).abs() < 1e-8, "{d0} vs {d1}");
    }

    #[test]
    fn identical_values_fall_back_to_median() {
        let h = vec![0.7; 16];
        let split = fit_entropy_gmm(&h).unwrap();
        assert!(!split.converged);
        assert_eq!(split.threshold, 0.7);
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(fit_entropy_gmm(&[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn partition_and_empty_low_error() {
        let split = GmmSplit {
            weights: [0.5, 0.5],
            means: [0.0, 1.0],
            stds: [0.1, 0.1],
            threshold: 0.5,
            converged: true,
            iterations: 1,
        };
        let (low, high) = select_low_confusion(&[0.1, 0.9], &split).unwrap();
        assert_eq!(low, vec![0]);
        assert_eq!(high, vec![1]);

        let (low, high) = select_low_confusion(&[0.1, 0.2], &split).unwrap();
        assert_eq!(low.len() + high.len(), 2);
        assert!(high.is_empty());

        let err = select_low_confusion(&[0.9, 0.8], &split);
        assert!(matches!(err, Err(MladError::EmptyLowConfusionSet)));
    }

    #[test]
    fn lowest_half_fallback() {
        let h = [0.5, 0.1, 0.9, 0.2];
        assert_eq!(lowest_entropy_half(&h), vec![1, 3]);
    }

    #[test]
    fn density_sign_flips_across_threshold() {
        let mut rng = Rng::seed_from(5);
        let mut h = Vec::new();
        for _ in 0..300 {
            h.push(0.2 + 0.05 * rng.normal());
        }
        for _ in 0..700 {
            h.push(1.1 + 0.05 * rng.normal());
        }
        let s = fit_entropy_gmm(&h).unwrap();
        assert!(s.converged);
        let before = s.weighted_density(0, s.threshold - 0.05)
            - s.weighted_density(1, s.threshold - 0.05);
        let after = s.weighted_density(0, s.threshold + 0.05)
            - s.weighted_density(1, s.threshold + 0.05);
        assert!(before > 0.0 && after < 0.0);
    }
}
