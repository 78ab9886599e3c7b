//! Numerical substrate: dense matrices, differentiable layers with
//! explicit gradients, Adam, symmetric eigendecomposition, deterministic
//! RNG streams, and the finite-difference gradient oracle.
//!
//! All operations here are pure functions of their inputs plus an
//! explicitly passed RNG; `Param` mutation is single-writer.

pub mod eig;
pub mod gaussian;
pub mod gradcheck;
pub mod layers;
pub mod mat;
pub mod param;
pub mod rng;
pub mod serialize;

pub use eig::{sym_eig, SymEig};
pub use gaussian::{GaussianDiag, VAR_FLOOR};
pub use gradcheck::{finite_diff_check, GradCheckReport, DEFAULT_FD_STEP};
pub use layers::{cross_entropy, relu, relu_backward, Linear, Mlp2};
pub use mat::{dot, log_sum_exp, Mat};
pub use param::{adam_step_all, ensure_finite_loss, Param};
pub use rng::{gaussian_sample, Rng};
