//! Ablation harness: trains toggled-down variants from the same seeds and
//! emits the grid of metrics across noise levels.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::sad::ReweightMode;
use serde::{Deserialize, Serialize};

use super::sweep::{noise_sweep_variant, SweepSettings, SweepTable};

/// Component toggles, all on for the full model:
/// * `de` off forces every input to exit from the deepest encoder layer;
/// * `rccr` off drops the cross-class term of the reconstruction loss;
/// * `cfmp` off adds the raw compensatory feature instead of the
///   reweighted projection;
/// * `cmr` off feeds the class-adaptive latents straight to the
///   classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationToggles {
    pub de: bool,
    pub rccr: bool,
    pub cfmp: bool,
    pub cmr: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles { de: true, rccr: true, cfmp: true, cmr: true }
    }
}

impl AblationToggles {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn without_de() -> Self {
        AblationToggles { de: false, ..Self::default() }
    }
    pub fn without_rccr() -> Self {
        AblationToggles { rccr: false, ..Self::default() }
    }
    pub fn without_cfmp() -> Self {
        AblationToggles { cfmp: false, ..Self::default() }
    }
    pub fn without_cmr() -> Self {
        AblationToggles { cmr: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub toggles: AblationToggles,
    /// Overrides the reweighting direction (the Fig-8 style comparison).
    #[serde(default)]
    pub reweight: Option<ReweightMode>,
}

impl Variant {
    pub fn new(name: &str, toggles: AblationToggles) -> Self {
        Variant { name: name.to_string(), toggles, reweight: None }
    }

    pub fn with_reweight(name: &str, mode: ReweightMode) -> Self {
        Variant {
            name: name.to_string(),
            toggles: AblationToggles::full(),
            reweight: Some(mode),
        }
    }
}

/// The standard single-toggle grid.
pub fn default_variants() -> Vec<Variant> {
    vec![
        Variant::new("full", AblationToggles::full()),
        Variant::new("de_off", AblationToggles::without_de()),
        Variant::new("rccr_off", AblationToggles::without_rccr()),
        Variant::new("cfmp_off", AblationToggles::without_cfmp()),
        Variant::new("cmr_off", AblationToggles::without_cmr()),
    ]
}

/// The reweighting-direction comparison.
pub fn reweight_variants() -> Vec<Variant> {
    vec![
        Variant::with_reweight("reweight_normal", ReweightMode::Normal),
        Variant::with_reweight("reweight_none", ReweightMode::None),
        Variant::with_reweight("reweight_negative", ReweightMode::Negative),
    ]
}

/// Trains every variant from the same seeds (per-purpose RNG streams keep
/// initialization and noise identical across variants) and merges the
/// per-cell reports into one table.
pub fn ablation_run(
    config: &ExperimentConfig,
    variants: &[Variant],
    settings: &SweepSettings,
) -> Result<SweepTable> {
    let mut table = SweepTable::default();
    for variant in variants {
        let mut cfg = config.clone();
        cfg.ablation = variant.toggles;
        if let Some(mode) = variant.reweight {
            cfg.sad.reweight = mode;
        }
        let part = noise_sweep_variant(&cfg, settings, &variant.name)?;
        table.rows.extend(part.rows);
    }
    Ok(table)
}
