//! Experiment configuration: one JSON document with full defaulting.

use crate::cad::{CadOptions, Phase1Config, QlearnConfig};
use crate::data::{NoiseKind, SynthSpec};
use crate::error::{MladError, Result};
use crate::eval::AblationToggles;
use crate::sad::{Phase2Config, ReweightMode, DEFAULT_COV_RIDGE, DEFAULT_GATE_EPS};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Path to a dataset manifest (see `data::manifest`).
    Manifest(PathBuf),
    /// Inline synthetic-data specification.
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_psi_hidden")]
    pub psi_hidden: usize,
    #[serde(default = "default_rho_hidden")]
    pub rho_hidden: usize,
}

fn default_depth() -> usize {
    5
}
fn default_hidden_width() -> usize {
    128
}
fn default_latent_dim() -> usize {
    128
}
fn default_psi_hidden() -> usize {
    256
}
fn default_rho_hidden() -> usize {
    512
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: default_depth(),
            hidden_width: default_hidden_width(),
            latent_dim: default_latent_dim(),
            psi_hidden: default_psi_hidden(),
            rho_hidden: default_rho_hidden(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_frac: 0.6, val_frac: 0.2 }
    }
}

/// Whether injected noise corrupts the training data too or only the
/// evaluation data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseApply {
    TrainAndTest,
    TestOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSetting {
    pub kind: NoiseKind,
    pub sigma: f64,
    #[serde(default = "default_noise_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub target_modalities: Option<Vec<usize>>,
    #[serde(default = "default_noise_apply")]
    pub apply_to: NoiseApply,
}

fn default_noise_fraction() -> f64 {
    0.5
}
fn default_noise_apply() -> NoiseApply {
    NoiseApply::TrainAndTest
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SadConfig {
    #[serde(default = "default_ridge")]
    pub cov_ridge: f64,
    #[serde(default = "default_gate_eps")]
    pub gate_eps: f64,
    /// Literal-equation flags for comparison runs.
    #[serde(default)]
    pub literal_residual_comparison: bool,
    #[serde(default)]
    pub additive_gate: bool,
    #[serde(default)]
    pub literal_frame: bool,
    #[serde(default = "default_reweight")]
    pub reweight: ReweightMode,
    #[serde(default)]
    pub phase2: Phase2Config,
}

fn default_ridge() -> f64 {
    DEFAULT_COV_RIDGE
}
fn default_gate_eps() -> f64 {
    DEFAULT_GATE_EPS
}
fn default_reweight() -> ReweightMode {
    ReweightMode::Normal
}

impl Default for SadConfig {
    fn default() -> Self {
        SadConfig {
            cov_ridge: default_ridge(),
            gate_eps: default_gate_eps(),
            literal_residual_comparison: false,
            additive_gate: false,
            literal_frame: false,
            reweight: default_reweight(),
            phase2: Phase2Config::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub phase1: Phase1Config,
    #[serde(default)]
    pub qlearn: QlearnConfig,
    #[serde(default)]
    pub sad: SadConfig,
    #[serde(default)]
    pub noise: Option<NoiseSetting>,
    #[serde(default)]
    pub ablation: AblationToggles,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Attention maps exported per eval, counted in samples.
    #[serde(default = "default_diag_attention")]
    pub diag_attention_samples: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_diag_attention() -> usize {
    8
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| MladError::Config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(MladError::Config("need at least one seed".into()));
        }
        if self.model.depth == 0 || self.model.latent_dim == 0 {
            return Err(MladError::Config("model sizes must be positive".into()));
        }
        if let Some(noise) = &self.noise {
            if noise.sigma < 0.0 || !(0.0..=1.0).contains(&noise.fraction) {
                return Err(MladError::Config("bad noise setting".into()));
            }
        }
        if let DatasetSource::Synth(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    /// Phase-1 options with the ablation toggles and literal-equation
    /// flags applied.
    pub fn effective_cad_options(&self) -> CadOptions {
        CadOptions {
            alpha: self.phase1.cad.alpha,
            include_cross: self.ablation.rccr,
            decode_residual: !self.sad.literal_residual_comparison,
        }
    }

    /// Rectification reweighting with the CFMP toggle applied.
    pub fn effective_reweight(&self) -> ReweightMode {
        if self.ablation.cfmp {
            self.reweight_mode()
        } else {
            ReweightMode::None
        }
    }

    fn reweight_mode(&self) -> ReweightMode {
        self.sad.reweight
    }

    /// The effective-config dump printed alongside every run.
    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_reference_settings() {
        let json = r#"{"dataset": {"synth": {
            "num_classes": 4, "num_modalities": 2, "dims": [16, 16],
            "samples_per_class": 50, "seed": 7}}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model.depth, 5);
        assert_eq!(cfg.model.latent_dim, 128);
        assert_eq!(cfg.model.psi_hidden, 256);
        assert_eq!(cfg.model.rho_hidden, 512);
        assert_eq!(cfg.phase1.lr, 1e-4);
        assert_eq!(cfg.phase1.weight_decay, 1e-4);
        assert_eq!(cfg.phase1.lr_decay_factor, 0.2);
        assert_eq!(cfg.seeds.len(), 5);
        assert!(cfg.ablation.de && cfg.ablation.rccr && cfg.ablation.cfmp && cfg.ablation.cmr);
    }

    #[test]
    fn toggles_flow_into_options() {
        let json = r#"{"dataset": {"synth": {
            "num_classes": 3, "num_modalities": 2, "dims": [4, 4],
            "samples_per_class": 10, "seed": 1}},
            "ablation": {"de": true, "rccr": false, "cfmp": false, "cmr": true}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert!(!cfg.effective_cad_options().include_cross);
        assert_eq!(cfg.effective_reweight(), ReweightMode::None);
    }

    #[test]
    fn round_trips_through_json() {
        let json = r#"{"dataset": {"synth": {
            "num_classes": 3, "num_modalities": 2, "dims": [4, 4],
            "samples_per_class": 10, "seed": 1}}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        let dumped = cfg.dump();
        let back: ExperimentConfig = serde_json::from_str(&dumped).unwrap();
        assert_eq!(back.model.depth, cfg.model.depth);
        assert_eq!(back.seeds, cfg.seeds);
    }
}
