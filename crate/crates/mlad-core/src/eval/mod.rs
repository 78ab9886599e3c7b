//! Metrics, noise-robustness sweeps, and the ablation harness.

pub mod ablate;
pub mod metrics;
pub mod sweep;

pub use ablate::{ablation_run, default_variants, reweight_variants, AblationToggles, Variant};
pub use metrics::{compute_metrics, silhouette_score, MetricReport};
pub use sweep::{
    evaluate_model, noise_sweep, noise_sweep_variant, AggregateRow, SweepRow, SweepSettings,
    SweepTable,
};
