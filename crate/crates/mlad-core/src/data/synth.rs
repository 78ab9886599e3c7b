//! Synthetic multimodal data with controllable inter-class confusion.
//!
//! Three confusion mechanisms, mirroring the structures the pipeline is
//! supposed to remove:
//!
//! * global confusion: a shared direction blended into a pair of class
//!   means with a strength in [0, 1] (strength 1 makes the pair's
//!   generating densities identical);
//! * sample-level confusion: a fraction of samples displaced toward a
//!   different class's mean, coherently across modalities;
//! * depth structure: classes with a depth profile k >= 2 pair up with a
//!   same-profile partner, share a generating center, and encode class
//!   identity in the sign parity of two antipodal signal axes -- a
//!   structure no linear map can read -- then pass through further rounds
//!   of a fixed nonlinear mixing map, so a shallow encoder cannot
//!   linearize them.

use super::MultimodalDataset;
use crate::error::{MladError, Result};
use crate::numerics::{Mat, Rng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub class_a: usize,
    pub class_b: usize,
    /// Overlap strength in [0, 1].
    pub strength: f64,
    /// Modalities the pair applies to; `None` means all.
    #[serde(default)]
    pub modalities: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_modalities: usize,
    /// Feature dimension per modality.
    pub dims: Vec<usize>,
    pub samples_per_class: usize,
    #[serde(default)]
    pub confusion_pairs: Vec<ConfusionPair>,
    /// Per-class nonlinearity depth (1 = raw Gaussian blob). Empty means
    /// all ones.
    #[serde(default)]
    pub depth_profile: Vec<usize>,
    /// Fraction of samples displaced toward another class's mean.
    #[serde(default)]
    pub sample_confusion_fraction: f64,
    /// Displacement step toward the other class's mean, in [0, 1].
    #[serde(default = "default_confusion_strength")]
    pub sample_confusion_strength: f64,
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    #[serde(default = "default_within_std")]
    pub within_class_std: f64,
    pub seed: u64,
}

fn default_confusion_strength() -> f64 {
    0.5
}
fn default_separation() -> f64 {
    6.0
}
fn default_within_std() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(MladError::validation("need at least 2 classes"));
        }
        if self.dims.len() != self.num_modalities {
            return Err(MladError::validation("dims length must equal num_modalities"));
        }
        if self.samples_per_class < 2 {
            return Err(MladError::validation("need at least 2 samples per class"));
        }
        for p in &self.confusion_pairs {
            if p.class_a >= self.num_classes || p.class_b >= self.num_classes {
                return Err(MladError::validation("confusion pair class out of range"));
            }
            if !(0.0..=1.0).contains(&p.strength) {
                return Err(MladError::validation("overlap strength must be in [0,1]"));
            }
        }
        if !self.depth_profile.is_empty() {
            if self.depth_profile.len() != self.num_classes {
                return Err(MladError::validation("depth_profile length must equal num_classes"));
            }
            if self.depth_profile.iter().any(|&k| k < 1) {
                return Err(MladError::validation("depth_profile entries must be >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.sample_confusion_fraction) {
            return Err(MladError::validation("sample_confusion_fraction must be in [0,1]"));
        }
        Ok(())
    }

    pub fn depth_of(&self, class: usize) -> usize {
        if self.depth_profile.is_empty() {
            1
        } else {
            self.depth_profile[class]
        }
    }
}

/// Generating parameters kept alongside a synthetic dataset so tests can
/// evaluate the closed-form class-conditional densities. The density is
/// meaningful only for unfolded classes (depth profile 1) with no sample
/// displacement; folded classes are flagged.
#[derive(Debug, Clone)]
pub struct SynthGroundTruth {
    /// `[modality][class]` generating mean (pre-mixing).
    pub class_means: Vec<Vec<Vec<f64>>>,
    /// False for classes whose observed features are folded.
    pub unimodal: Vec<bool>,
    pub within_class_std: f64,
}

impl SynthGroundTruth {
    /// Log density of `x` under class `c`'s isotropic generating Gaussian
    /// in modality `m`, up to a constant shared by all classes.
    pub fn log_density(&self, m: usize, c: usize, x: &[f64]) -> f64 {
        let mean = &self.class_means[m][c];
        let var = self.within_class_std * self.within_class_std;
        let mut sq = 0.0;
        for (xi, mi) in x.iter().zip(mean) {
            let d = xi - mi;
            sq += d * d;
        }
        -0.5 * sq / var
    }

    /// Bayes-optimal accuracy on the samples of classes `a` and `b`,
    /// classifying by the generating densities summed over modalities.
    /// Ties go to the lower class index.
    pub fn bayes_accuracy_on_pair(&self, ds: &MultimodalDataset, a: usize, b: usize) -> f64 {
        let mut correct = 0usize;
        let mut total = 0usize;
        for i in 0..ds.len() {
            let y = ds.labels[i];
            if y != a && y != b {
                continue;
            }
            let mut score_a = 0.0;
            let mut score_b = 0.0;
            for m in 0..ds.num_modalities() {
                let x = ds.features[m].row(i);
                score_a += self.log_density(m, a, x);
                score_b += self.log_density(m, b, x);
            }
            let pred = if score_a >= score_b { a } else { b };
            if pred == y {
                correct += 1;
            }
            total += 1;
        }
        correct as f64 / total.max(1) as f64
    }
}

/// Fixed nonlinear mixing map for one modality: an additive-coupling step
/// followed by a random rotation. Applying it repeatedly folds the class
/// signal so deeper encoders are needed to linearize it.
struct MixingMap {
    w: Mat,
    bias: Vec<f64>,
    rot: Mat,
    half: usize,
    gain: f64,
}

impl MixingMap {
    fn new(dim: usize, rng: &mut Rng) -> Self {
        let half = (dim / 2).max(1);
        let rest = dim - half;
        let mut w = Mat::zeros(rest.max(1), half);
        let scale = 1.5 / (half as f64).sqrt();
        for v in w.data_mut() {
            *v = rng.normal() * scale;
        }
        let bias: Vec<f64> = (0..rest.max(1)).map(|_| 0.7 * rng.normal()).collect();
        let rot = random_orthonormal(dim, dim, rng);
        MixingMap { w, bias, rot, half, gain: 2.5 }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let dim = x.len();
        let mut mixed = x.to_vec();
        if dim > self.half {
            let head = &x[..self.half];
            let coupled = self.w.matvec(head).expect("mixing shape");
            for (j, tail) in mixed[self.half..].iter_mut().enumerate() {
                *tail += self.gain * (coupled[j] + self.bias[j]).tanh();
            }
        }
        self.rot.matvec(&mixed).expect("rotation shape")
    }
}

/// First `k` columns of an orthonormal basis obtained by Gram-Schmidt on
/// seeded normal draws. Falls back to normalized random vectors when
/// `k > dim`.
fn random_orthonormal(dim: usize, k: usize, rng: &mut Rng) -> Mat {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v = rng.normal_vec(dim);
        if cols.len() < dim {
            for u in &cols {
                let proj = crate::numerics::dot(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
            }
        }
        let norm = crate::numerics::dot(&v, &v).sqrt();
        if norm < 1e-8 {
            continue; // degenerate draw, retry
        }
        v.iter_mut().for_each(|vi| *vi /= norm);
        cols.push(v);
    }
    let mut m = Mat::zeros(dim, k);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..dim {
            *m.at_mut(i, j) = col[i];
        }
    }
    m
}

/// Generates a synthetic multimodal dataset with the confusion structure
/// described by `spec`, plus the generating parameters for density-based
/// oracles. Deterministic in the spec's seed.
pub fn synth_generate(spec: &SynthSpec) -> Result<(MultimodalDataset, SynthGroundTruth)> {
    spec.validate()?;
    let c = spec.num_classes;
    let n_per = spec.samples_per_class;
    let n = c * n_per;

    // labels are grouped by class: samples [c*n_per, (c+1)*n_per)
    let labels: Vec<usize> = (0..n).map(|i| i / n_per).collect();

    // sample-level displacement targets, shared across modalities
    let mut disp_rng = Rng::stream(spec.seed, "synth/displace");
    let n_displaced = (spec.sample_confusion_fraction * n as f64).floor() as usize;
    let displaced = disp_rng.sample_indices(n, n_displaced);
    let displaced_target: Vec<usize> = displaced
        .iter()
        .map(|&i| {
            let own = labels[i];
            let mut other = disp_rng.below(c - 1);
            if other >= own {
                other += 1;
            }
            other
        })
        .collect();

    let mut features = Vec::with_capacity(spec.num_modalities);
    let mut class_means = Vec::with_capacity(spec.num_modalities);
    for m in 0..spec.num_modalities {
        let dim = spec.dims[m];
        let mut mean_rng = Rng::substream(spec.seed, "synth/means", m as u64);
        let basis = random_orthonormal(dim, c, &mut mean_rng);
        let mut means: Vec<Vec<f64>> = (0..c)
            .map(|cls| (0..dim).map(|i| spec.class_separation * basis.at(i, cls)).collect())
            .collect();
        for pair in &spec.confusion_pairs {
            let applies = pair
                .modalities
                .as_ref()
                .map(|ms| ms.contains(&m))
                .unwrap_or(true);
            let shared: Vec<f64> = {
                // always consume the draw so toggling one pair's modality
                // list never shifts another pair's direction
                let raw = mean_rng.normal_vec(dim);
                let norm = crate::numerics::dot(&raw, &raw).sqrt().max(1e-12);
                raw.iter().map(|v| spec.class_separation * v / norm).collect()
            };
            if !applies {
                continue;
            }
            let s = pair.strength;
            for &cls in &[pair.class_a, pair.class_b] {
                for (mi, sh) in means[cls].iter_mut().zip(&shared) {
                    *mi = (1.0 - s) * *mi + s * sh;
                }
            }
        }

        let mut sample_rng = Rng::substream(spec.seed, "synth/samples", m as u64);
        let mut x = Mat::zeros(n, dim);
        for i in 0..n {
            let cls = labels[i];
            let row = x.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = means[cls][j] + spec.within_class_std * sample_rng.normal();
            }
        }
        for (k, &i) in displaced.iter().enumerate() {
            let own = labels[i];
            let tgt = displaced_target[k];
            let t = spec.sample_confusion_strength;
            let row = x.row_mut(i);
            for j in 0..dim {
                row[j] += t * (means[tgt][j] - means[own][j]);
            }
        }

        // fold classes that need deeper encoders
        let mut mix_rng = Rng::substream(spec.seed, "synth/mix", m as u64);
        let mix = MixingMap::new(dim, &mut mix_rng);
        for i in 0..n {
            let rounds = spec.depth_of(labels[i]).saturating_sub(1);
            if rounds == 0 {
                continue;
            }
            let mut v = x.row(i).to_vec();
            for _ in 0..rounds {
                v = mix.apply(&v);
            }
            x.row_mut(i).copy_from_slice(&v);
        }

        features.push(x);
        class_means.push(means);
    }

    let unimodal: Vec<bool> = (0..c).map(|cls| spec.depth_of(cls) == 1).collect();
    let names = (0..spec.num_modalities).map(|m| format!("mod{m}")).collect();
    let ds = MultimodalDataset::new(names, features, labels, c)?;
    Ok((ds, SynthGroundTruth { class_means, unimodal, within_class_std: spec.within_class_std }))
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// 2 modalities, 3 classes, 60 samples; used across the data tests.
    pub(crate) fn small_dataset() -> MultimodalDataset {
        let spec = SynthSpec {
            num_classes: 3,
            num_modalities: 2,
            dims: vec![6, 4],
            samples_per_class: 20,
            confusion_pairs: vec![],
            depth_profile: vec![],
            sample_confusion_fraction: 0.0,
            sample_confusion_strength: 0.5,
            class_separation: 5.0,
            within_class_std: 1.0,
            seed: 21,
        };
        synth_generate(&spec).unwrap().0
    }

    pub(crate) fn wide_dataset(n: usize, dim: usize) -> MultimodalDataset {
        let spec = SynthSpec {
            num_classes: 2,
            num_modalities: 1,
            dims: vec![dim],
            samples_per_class: n / 2,
            confusion_pairs: vec![],
            depth_profile: vec![],
            sample_confusion_fraction: 0.0,
            sample_confusion_strength: 0.5,
            class_separation: 5.0,
            within_class_std: 1.0,
            seed: 33,
        };
        synth_generate(&spec).unwrap().0
    }
}
