//! Noise-robustness sweeps: train per seed, evaluate across noise kinds
//! and intensities with paired corruption (the corrupted sample set is a
//! function of the seed alone, so every cell and every model variant sees
//! the same corrupted indices).

use crate::config::{ExperimentConfig, NoiseApply, NoiseSetting};
use crate::data::NoiseKind;
use crate::error::Result;
use crate::model::{train_full, MladModel, PreparedData};
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSettings {
    pub kinds: Vec<NoiseKind>,
    pub sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub fraction: f64,
    #[serde(default)]
    pub target_modalities: Option<Vec<usize>>,
    pub apply_to: NoiseApply,
}

impl SweepSettings {
    pub fn from_config(config: &ExperimentConfig, kinds: Vec<NoiseKind>, sigmas: Vec<f64>) -> Self {
        let (fraction, targets, apply_to) = match &config.noise {
            Some(n) => (n.fraction, n.target_modalities.clone(), n.apply_to),
            None => (0.5, None, NoiseApply::TestOnly),
        };
        SweepSettings {
            kinds,
            sigmas,
            seeds: config.seeds.clone(),
            fraction,
            target_modalities: targets,
            apply_to,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub kind: NoiseKind,
    pub sigma: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_weighted_f1: f64,
    pub mean_macro_f1: f64,
    pub num_seeds: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(String, NoiseKind, f64)> = Vec::new();
        for r in &self.rows {
            let key = (r.variant.clone(), r.kind, r.sigma);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(variant, kind, sigma)| {
                let cells: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.variant == variant && r.kind == kind && r.sigma == sigma)
                    .collect();
                let n = cells.len() as f64;
                let mean_acc = cells.iter().map(|r| r.report.accuracy).sum::<f64>() / n;
                let var_acc = cells
                    .iter()
                    .map(|r| (r.report.accuracy - mean_acc).powi(2))
                    .sum::<f64>()
                    / n;
                AggregateRow {
                    variant,
                    kind,
                    sigma,
                    mean_accuracy: mean_acc,
                    std_accuracy: var_acc.sqrt(),
                    mean_weighted_f1: cells.iter().map(|r| r.report.weighted_f1).sum::<f64>() / n,
                    mean_macro_f1: cells.iter().map(|r| r.report.macro_f1).sum::<f64>() / n,
                    num_seeds: cells.len(),
                }
            })
            .collect()
    }

    /// One row per (variant, kind, sigma, seed) with all metrics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,kind,sigma,seed,accuracy,weighted_f1,macro_f1,auc\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.kind,
                r.sigma,
                r.seed,
                r.report.accuracy,
                r.report.weighted_f1,
                r.report.macro_f1,
                r.report.auc.map(|a| a.to_string()).unwrap_or_default(),
            ));
        }
        out
    }

    pub fn mean_accuracy(&self, variant: &str, kind: NoiseKind, sigma: f64) -> Option<f64> {
        self.aggregate()
            .into_iter()
            .find(|a| a.variant == variant && a.kind == kind && a.sigma == sigma)
            .map(|a| a.mean_accuracy)
    }
}

/// Evaluates a trained model on a dataset.
pub fn evaluate_model(model: &MladModel, ds: &crate::data::MultimodalDataset) -> Result<MetricReport> {
    let batch = model.predict_batch(ds, 0)?;
    compute_metrics(&batch.preds, &batch.probs, &ds.labels, ds.num_classes)
}

fn clear_noise(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    c.noise = None;
    c
}

/// Sweeps one model variant. With `TestOnly` the model trains once per
/// seed on clean data and only the test corruption varies; with
/// `TrainAndTest` every cell retrains on identically corrupted data.
pub fn noise_sweep_variant(
    config: &ExperimentConfig,
    settings: &SweepSettings,
    variant: &str,
) -> Result<SweepTable> {
    let mut table = SweepTable::default();
    for &seed in &settings.seeds {
        match settings.apply_to {
            NoiseApply::TestOnly => {
                let (model, prep) = train_full(&clear_noise(config), seed)?;
                for &kind in &settings.kinds {
                    for &sigma in &settings.sigmas {
                        let test = prep.corrupted_test(
                            kind,
                            sigma,
                            settings.fraction,
                            settings.target_modalities.clone(),
                            seed,
                        )?;
                        let report = evaluate_model(&model, &test)?;
                        table.rows.push(SweepRow {
                            variant: variant.to_string(),
                            kind,
                            sigma,
                            seed,
                            report,
                        });
                    }
                }
            }
            NoiseApply::TrainAndTest => {
                for &kind in &settings.kinds {
                    for &sigma in &settings.sigmas {
                        let mut cell_cfg = config.clone();
                        cell_cfg.noise = Some(NoiseSetting {
                            kind,
                            sigma,
                            fraction: settings.fraction,
                            target_modalities: settings.target_modalities.clone(),
                            apply_to: NoiseApply::TrainAndTest,
                        });
                        let (model, prep) = train_full(&cell_cfg, seed)?;
                        let report = evaluate_model(&model, &prep.test)?;
                        table.rows.push(SweepRow {
                            variant: variant.to_string(),
                            kind,
                            sigma,
                            seed,
                            report,
                        });
                    }
                }
            }
        }
    }
    Ok(table)
}

/// The plain sweep over the configured model.
pub fn noise_sweep(config: &ExperimentConfig, settings: &SweepSettings) -> Result<SweepTable> {
    noise_sweep_variant(config, settings, "full")
}

/// Convenience for tests: a trained model per seed with its prepared data.
pub fn train_each_seed(
    config: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<(MladModel, PreparedData)>> {
    seeds.iter().map(|&s| train_full(config, s)).collect()
}
