//! Dataset representation, ingestion, synthetic generation, noise
//! injection, and stratified splitting.

pub mod manifest;
pub mod noise;
pub mod normalize;
pub mod split;
pub mod synth;

pub use manifest::{load_dataset, save_dataset, DatasetManifest};
pub use noise::{inject_noise, FeatureRanges, NoiseKind, NoiseSpec};
pub use normalize::Normalizer;
pub use split::{stratified_split, stratified_split_indices};
pub use synth::{synth_generate, ConfusionPair, SynthGroundTruth, SynthSpec};

use crate::error::{MladError, Result};
use crate::numerics::Mat;

/// A multimodal dataset: one feature matrix per modality (shared row
/// count) plus class labels.
#[derive(Debug, Clone)]
pub struct MultimodalDataset {
    pub modality_names: Vec<String>,
    pub features: Vec<Mat>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl MultimodalDataset {
    /// Constructs and fully validates (including the two-samples-per-class
    /// requirement needed for distribution fitting).
    pub fn new(
        modality_names: Vec<String>,
        features: Vec<Mat>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = MultimodalDataset { modality_names, features, labels, num_classes };
        ds.validate(true)?;
        Ok(ds)
    }

    pub fn validate(&self, require_class_support: bool) -> Result<()> {
        if self.features.is_empty() {
            return Err(MladError::validation("dataset has no modalities"));
        }
        if self.modality_names.len() != self.features.len() {
            return Err(MladError::validation("modality name/feature count mismatch"));
        }
        let n = self.features[0].rows();
        for (name, f) in self.modality_names.iter().zip(&self.features) {
            if f.rows() != n {
                return Err(MladError::validation(format!(
                    "modality '{}' has {} rows, expected {}",
                    name,
                    f.rows(),
                    n
                )));
            }
        }
        if self.labels.len() != n {
            return Err(MladError::validation(format!(
                "{} labels for {} samples",
                self.labels.len(),
                n
            )));
        }
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            if y >= self.num_classes {
                return Err(MladError::validation(format!(
                    "label {y} out of range for {} classes",
                    self.num_classes
                )));
            }
            counts[y] += 1;
        }
        if require_class_support {
            if let Some((c, _)) = counts.iter().enumerate().find(|(_, &k)| k < 2) {
                return Err(MladError::validation(format!(
                    "class {c} has fewer than 2 samples"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.features.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.cols()).collect()
    }

    /// Sample indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }

    /// Empirical class priors.
    pub fn class_priors(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.num_classes];
        for &y in &self.labels {
            p[y] += 1.0;
        }
        let n = self.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    /// Row subset in the given index order. Split outputs may leave a
    /// class with fewer than two samples; fitting operations re-check.
    pub fn subset(&self, idx: &[usize]) -> Self {
        MultimodalDataset {
            modality_names: self.modality_names.clone(),
            features: self.features.iter().map(|f| f.select_rows(idx)).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Feature vectors of one sample across modalities.
    pub fn sample(&self, i: usize) -> Vec<&[f64]> {
        self.features.iter().map(|f| f.row(i)).collect()
    }
}
