//! Sample-adaptive deconfusion: posterior-entropy confusion scoring, the
//! two-component GMM split, confusion-free modality priors, entropy-gated
//! cross-modality rectification, and the phase-2 training loop.

pub mod entropy;
pub mod gmm;
pub mod phase2;
pub mod prior;
pub mod rectify;

pub use entropy::posterior_entropy;
pub use gmm::{fit_entropy_gmm, lowest_entropy_half, select_low_confusion, GmmSplit};
pub use phase2::{
    phase2_batch, phase2_train, ClassifierHead, Phase2BatchResult, Phase2Config, Phase2State,
};
pub use prior::{fit_prior, ModalityPrior, DEFAULT_COV_RIDGE};
pub use rectify::{
    entropy_gate, rectify, rectify_backward, Rectifier, RectifyFlags, RectifyOutput, ReweightMode,
    DEFAULT_GATE_EPS,
};
