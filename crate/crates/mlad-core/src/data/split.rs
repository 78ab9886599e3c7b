//! Stratified train/val/test splitting.

use super::MultimodalDataset;
use crate::error::{MladError, Result};
use crate::numerics::Rng;

/// Per-class proportional allocation: `floor(train_frac * n_c)` to train,
/// `floor(val_frac * n_c)` to val, the rounding remainder to test.
/// Splits are disjoint and exhaustive.
pub fn stratified_split(
    ds: &MultimodalDataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(MultimodalDataset, MultimodalDataset, MultimodalDataset)> {
    let (tr, va, te) = stratified_split_indices(ds, train_frac, val_frac, seed)?;
    Ok((ds.subset(&tr), ds.subset(&va), ds.subset(&te)))
}

/// Index sets of the three splits, each sorted ascending.
pub fn stratified_split_indices(
    ds: &MultimodalDataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if !(0.0 < train_frac && train_frac < 1.0) || !(0.0 < val_frac && val_frac < 1.0) {
        return Err(MladError::validation("split fractions must be in (0,1)"));
    }
    if train_frac + val_frac >= 1.0 {
        return Err(MladError::validation("train_frac + val_frac must be < 1"));
    }
    let mut rng = Rng::stream(seed, "split");
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (c, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.len() < 3 {
            return Err(MladError::validation(format!(
                "class {c} has {} samples, fewer than the 3 splits",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let n_train = (train_frac * idx.len() as f64).floor() as usize;
        let n_val = (val_frac * idx.len() as f64).floor() as usize;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthSpec};

    fn balanced(n_per: usize) -> MultimodalDataset {
        let spec = SynthSpec {
            num_classes: 2,
            num_modalities: 1,
            dims: vec![4],
            samples_per_class: n_per,
            confusion_pairs: vec![],
            depth_profile: vec![],
            sample_confusion_fraction: 0.0,
            sample_confusion_strength: 0.5,
            class_separation: 5.0,
            within_class_std: 1.0,
            seed: 3,
        };
        synth_generate(&spec).unwrap().0
    }

    #[test]
    fn balanced_60_20_20() {
        let ds = balanced(50);
        let (tr, va, te) = stratified_split(&ds, 0.6, 0.2, 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (60, 20, 20));
        for split in [&tr, &va, &te] {
            let counts = split.class_indices().iter().map(|g| g.len()).collect::<Vec<_>>();
            assert_eq!(counts[0], counts[1]); // per-class proportional
        }
    }

    #[test]
    fn partition_property() {
        let ds = balanced(17);
        let (tr, va, te) = stratified_split_indices(&ds, 0.55, 0.2, 9).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).cloned().collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..ds.len()).collect();
        assert_eq!(all, expect); // disjoint and exhaustive
    }

    #[test]
    fn class_ratio_within_one_sample() {
        let ds = balanced(33);
        let (tr, va, te) = stratified_split(&ds, 0.6, 0.2, 4).unwrap();
        for split in [&tr, &va, &te] {
            let counts: Vec<usize> = split.class_indices().iter().map(|g| g.len()).collect();
            // global ratio is 1:1 -> per-split counts differ by <= 1
            assert!(counts[0].abs_diff(counts[1]) <= 1, "{counts:?}");
        }
    }

    #[test]
    fn tiny_class_rejected() {
        let mut ds = balanced(10);
        // shrink class 1 to two samples
        let keep: Vec<usize> = (0..10).chain(10..12).collect();
        ds = ds.subset(&keep);
        assert!(stratified_split(&ds, 0.6, 0.2, 1).is_err());
    }

    #[test]
    fn bad_fractions_rejected() {
        let ds = balanced(10);
        assert!(stratified_split(&ds, 0.8, 0.3, 1).is_err());
        assert!(stratified_split(&ds, 0.0, 0.2, 1).is_err());
    }
}
