//! Noise injection: Gaussian feature noise and salt-pepper corruption,
//! applied to a seeded permutation prefix of the samples so the same
//! subset is corrupted across every method in a sweep.

use super::MultimodalDataset;
use crate::error::{MladError, Result};
use crate::numerics::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    SaltPepper,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseKind::Gaussian => write!(f, "gaussian"),
            NoiseKind::SaltPepper => write!(f, "salt_pepper"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Intensity sigma.
    pub sigma: f64,
    /// Fraction of samples affected.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Modalities to corrupt; `None` means all.
    #[serde(default)]
    pub target_modalities: Option<Vec<usize>>,
    pub seed: u64,
    /// RNG purpose tag; cells of a paired sweep share it.
    #[serde(default = "default_stream")]
    pub seed_stream: String,
}

fn default_fraction() -> f64 {
    0.5
}
fn default_stream() -> String {
    "noise".to_string()
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(MladError::validation("noise sigma must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(MladError::validation("noise fraction must be in [0,1]"));
        }
        Ok(())
    }

    /// The corrupted sample set: first `floor(fraction*n)` entries of a
    /// seeded permutation. Depends only on (seed, tag, n), never on sigma
    /// or kind, so sweep cells stay paired.
    pub fn affected_indices(&self, n: usize) -> Vec<usize> {
        let mut rng = Rng::stream(self.seed, &format!("{}/perm", self.seed_stream));
        let k = (self.fraction * n as f64).floor() as usize;
        let mut idx = rng.sample_indices(n, k);
        idx.sort_unstable();
        idx
    }
}

/// Per-feature min/max of a reference split (normally train), used as the
/// salt and pepper values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRanges {
    pub min: Vec<Vec<f64>>,
    pub max: Vec<Vec<f64>>,
}

impl FeatureRanges {
    pub fn from_dataset(ds: &MultimodalDataset) -> Self {
        let mut min = Vec::new();
        let mut max = Vec::new();
        for f in &ds.features {
            let mut lo = vec![f64::INFINITY; f.cols()];
            let mut hi = vec![f64::NEG_INFINITY; f.cols()];
            for i in 0..f.rows() {
                for (j, &v) in f.row(i).iter().enumerate() {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
            min.push(lo);
            max.push(hi);
        }
        FeatureRanges { min, max }
    }
}

/// Returns a corrupted copy of the dataset; unaffected samples are
/// bit-identical and `sigma = 0` is the identity.
///
/// Gaussian: `x + sigma * eps`, `eps ~ N(0, I)`. Salt-pepper: each feature
/// of an affected sample is independently set, with probability
/// `min(sigma/20, 0.5)`, to the per-feature reference min or max with
/// equal probability.
pub fn inject_noise(
    ds: &MultimodalDataset,
    spec: &NoiseSpec,
    ranges: &FeatureRanges,
) -> Result<MultimodalDataset> {
    spec.validate()?;
    let mut out = ds.clone();
    if spec.sigma == 0.0 {
        return Ok(out);
    }
    let affected = spec.affected_indices(ds.len());
    let targets: Vec<usize> = match &spec.target_modalities {
        Some(t) => {
            if let Some(&bad) = t.iter().find(|&&m| m >= ds.num_modalities()) {
                return Err(MladError::validation(format!("target modality {bad} out of range")));
            }
            t.clone()
        }
        None => (0..ds.num_modalities()).collect(),
    };
    for &m in &targets {
        let mut rng = Rng::substream(spec.seed, &format!("{}/draw", spec.seed_stream), m as u64);
        let feat = &mut out.features[m];
        match spec.kind {
            NoiseKind::Gaussian => {
                for &i in &affected {
                    for v in feat.row_mut(i) {
                        *v += spec.sigma * rng.normal();
                    }
                }
            }
            NoiseKind::SaltPepper => {
                let p = (spec.sigma / 20.0).min(0.5);
                for &i in &affected {
                    for (j, v) in feat.row_mut(i).iter_mut().enumerate() {
                        if rng.uniform() < p {
                            *v = if rng.uniform() < 0.5 {
                                ranges.min[m][j]
                            } else {
                                ranges.max[m][j]
                            };
                        }
                    }
                }
            }
        }
        feat.check_finite("inject_noise output")?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::tests_support::small_dataset;

    fn spec(kind: NoiseKind, sigma: f64, fraction: f64) -> NoiseSpec {
        NoiseSpec {
            kind,
            sigma,
            fraction,
            target_modalities: None,
            seed: 7,
            seed_stream: "noise".into(),
        }
    }

    #[test]
    fn sigma_zero_is_identity() {
        let ds = small_dataset();
        let ranges = FeatureRanges::from_dataset(&ds);
        let out = inject_noise(&ds, &spec(NoiseKind::Gaussian, 0.0, 1.0), &ranges).unwrap();
        for m in 0..ds.num_modalities() {
            assert_eq!(ds.features[m], out.features[m]);
        }
    }

    #[test]
    fn unaffected_samples_bit_identical_and_input_untouched() {
        let ds = small_dataset();
        let before = ds.clone();
        let ranges = FeatureRanges::from_dataset(&ds);
        let s = spec(NoiseKind::Gaussian, 2.0, 0.5);
        let out = inject_noise(&ds, &s, &ranges).unwrap();
        let affected = s.affected_indices(ds.len());
        for m in 0..ds.num_modalities() {
            assert_eq!(ds.features[m], before.features[m]);
            for i in 0..ds.len() {
                let same = ds.features[m].row(i) == out.features[m].row(i);
                assert_eq!(same, !affected.contains(&i), "sample {i}");
            }
        }
    }

    #[test]
    fn gaussian_perturbation_variance_matches() {
        // fraction 1, sigma 5: mean per-feature squared perturbation ~ 25
        let ds = crate::data::synth::tests_support::wide_dataset(1000, 100);
        let ranges = FeatureRanges::from_dataset(&ds);
        let out = inject_noise(&ds, &spec(NoiseKind::Gaussian, 5.0, 1.0), &ranges).unwrap();
        let mut sq = 0.0;
        let mut count = 0usize;
        for i in 0..ds.len() {
            for (a, b) in ds.features[0].row(i).iter().zip(out.features[0].row(i)) {
                sq += (a - b) * (a - b);
                count += 1;
            }
        }
        let mean_sq = sq / count as f64;
        assert!((mean_sq - 25.0).abs() < 25.0 * 0.05, "mean sq {mean_sq}");
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = small_dataset();
        let ranges = FeatureRanges::from_dataset(&ds);
        let s = spec(NoiseKind::SaltPepper, 10.0, 0.5);
        let a = inject_noise(&ds, &s, &ranges).unwrap();
        let b = inject_noise(&ds, &s, &ranges).unwrap();
        for m in 0..ds.num_modalities() {
            assert_eq!(a.features[m], b.features[m]);
        }
    }

    #[test]
    fn affected_set_is_paired_across_sigma_and_kind() {
        let a = spec(NoiseKind::Gaussian, 1.0, 0.5).affected_indices(100);
        let b = spec(NoiseKind::SaltPepper, 10.0, 0.5).affected_indices(100);
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
    }

    #[test]
    fn salt_pepper_sets_reference_extremes() {
        let ds = small_dataset();
        let ranges = FeatureRanges::from_dataset(&ds);
        let out = inject_noise(&ds, &spec(NoiseKind::SaltPepper, 1000.0, 1.0), &ranges).unwrap();
        // probability clamps at 0.5; corrupted cells must equal min or max
        let mut corrupted = 0;
        for m in 0..ds.num_modalities() {
            for i in 0..ds.len() {
                for (j, (&v, &orig)) in out.features[m]
                    .row(i)
                    .iter()
                    .zip(ds.features[m].row(i))
                    .enumerate()
                {
                    if v != orig {
                        corrupted += 1;
                        assert!(v == ranges.min[m][j] || v == ranges.max[m][j]);
                    }
                }
            }
        }
        assert!(corrupted > 0);
    }
}
