//! Class-adaptive deconfusion: dynamic-exit modality towers, class latent
//! distributions, residual cross-class reconstruction, the phase-1
//! training loop, and the Q-learning exit policy.

pub mod latents;
pub mod loss;
pub mod phase1;
pub mod qlearn;
pub mod tower;

pub use latents::{fit_class_distribution, ClassLatentTable, PerDepthTable};
pub use loss::{
    compute_residual, loss_cad, loss_cad_sampled, CadBatch, CadDraws, CadGrads, CadLossParts,
    CadOptions,
};
pub use phase1::{phase1_train, Phase1Config, Phase1Output};
pub use qlearn::{choose_exit, choose_exit_batch, qlearn_train, ExitPolicy, QlearnConfig};
pub use tower::{ModalityTower, TowerConfig, TowerForward};
