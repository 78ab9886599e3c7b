//! Multi-Level Adaptive DeConfusion (MLAD) for multimodal classification.
//!
//! The pipeline removes inter-class confusion from multimodal feature
//! data at two levels:
//!
//! * class level: dynamic-exit modality encoders pick a per-class output
//!   depth, and a residual cross-class reconstruction loss squeezes
//!   content shared between classes out of the learned latents;
//! * sample level: posterior-entropy confusion scores, a two-component
//!   GMM split, confusion-free modality priors, and entropy-gated
//!   cross-modality rectification clean up individual samples.
//!
//! The crate also ships synthetic data generation with controllable
//! confusion structure, a deterministic noise-injection protocol,
//! metrics, noise-robustness sweeps, and an ablation harness.

pub mod error;
pub mod numerics;

pub mod data;

pub mod cad;
pub mod sad;

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod model;

pub use error::{MladError, Result};
