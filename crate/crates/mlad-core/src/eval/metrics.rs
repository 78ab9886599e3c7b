//! Classification metrics and the silhouette separability score.

use crate::error::{MladError, Result};
use crate::numerics::Mat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    /// Rank-statistic AUC; binary tasks only.
    pub auc: Option<f64>,
    pub per_class_f1: Vec<f64>,
    /// `[true][pred]` counts; row sums equal per-class support.
    pub confusion_matrix: Vec<Vec<usize>>,
    /// Classes with zero support, excluded from the macro average.
    pub zero_support_classes: Vec<usize>,
}

/// Accuracy, weighted/macro F1 from the confusion matrix, and midrank
/// AUC for binary tasks (`scores` holds per-class probabilities).
pub fn compute_metrics(
    preds: &[usize],
    scores: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
) -> Result<MetricReport> {
    if preds.len() != labels.len() || scores.len() != labels.len() {
        return Err(MladError::dim("preds/scores/labels length mismatch"));
    }
    if preds.is_empty() {
        return Err(MladError::validation("empty evaluation set"));
    }
    let n = labels.len();
    let mut cm = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= num_classes || y >= num_classes {
            return Err(MladError::validation("class index out of range"));
        }
        cm[y][p] += 1;
    }
    let accuracy = (0..num_classes).map(|c| cm[c][c]).sum::<usize>() as f64 / n as f64;

    let mut per_class_f1 = vec![0.0; num_classes];
    let mut zero_support = Vec::new();
    let mut weighted = 0.0;
    let mut macro_sum = 0.0;
    let mut macro_count = 0usize;
    for c in 0..num_classes {
        let support: usize = cm[c].iter().sum();
        let tp = cm[c][c];
        let fp: usize = (0..num_classes).filter(|&r| r != c).map(|r| cm[r][c]).sum();
        let fn_: usize = support - tp;
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        per_class_f1[c] = f1;
        if support == 0 {
            zero_support.push(c);
        } else {
            macro_sum += f1;
            macro_count += 1;
            weighted += support as f64 * f1;
        }
    }
    let macro_f1 = if macro_count > 0 { macro_sum / macro_count as f64 } else { 0.0 };
    let weighted_f1 = weighted / n as f64;

    let auc = if num_classes == 2 { Some(binary_auc(scores, labels)?) } else { None };
    Ok(MetricReport {
        accuracy,
        weighted_f1,
        macro_f1,
        auc,
        per_class_f1,
        confusion_matrix: cm,
        zero_support_classes: zero_support,
    })
}

/// Mann-Whitney AUC with midranks for ties; positive class is 1.
fn binary_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let s: Vec<f64> = scores
        .iter()
        .map(|row| {
            row.get(1)
                .copied()
                .ok_or_else(|| MladError::dim("binary AUC needs two-class scores"))
        })
        .collect::<Result<_>>()?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(0.5);
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap());
    // midranks over tie groups
    let mut ranks = vec![0.0; s.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && s[order[j + 1]] == s[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == 1)
        .map(|(i, _)| ranks[i])
        .sum();
    Ok((rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Mean silhouette coefficient with Euclidean distances; the separability
/// surrogate used by the deconfusion comparisons. Samples in singleton
/// clusters contribute zero.
pub fn silhouette_score(points: &Mat, labels: &[usize]) -> Result<f64> {
    let n = points.rows();
    if n != labels.len() {
        return Err(MladError::dim("silhouette points/labels mismatch"));
    }
    let num_classes = labels.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        // mean distance to every cluster
        let mut sums = vec![0.0; num_classes];
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut d = 0.0;
            for (a, b) in points.row(i).iter().zip(points.row(j)) {
                d += (a - b) * (a - b);
            }
            sums[labels[j]] += d.sqrt();
        }
        let own = labels[i];
        if counts[own] < 2 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..num_classes)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    Ok(total / n as f64)
}
