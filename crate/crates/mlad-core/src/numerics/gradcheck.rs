//! Central finite-difference gradient verification.

use super::mat::Mat;
use super::param::Param;
use super::rng::Rng;
use crate::error::Result;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Relative-error floor: below this combined magnitude a coordinate is
/// roundoff-dominated and compared absolutely.
const DENOM_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compares analytic gradients against central differences with step `h`.
///
/// `grad_of` must compute the loss and accumulate gradients into the
/// parameters returned by `params_of`; `loss_of` must evaluate the same
/// loss without touching gradients and must be a pure function of the
/// parameter values (callers freeze any random draws beforehand).
/// At most `max_coords_per_param` coordinates are sampled per parameter.
pub fn finite_diff_check<M>(
    model: &mut M,
    params_of: &mut dyn FnMut(&mut M) -> Vec<&mut Param>,
    loss_of: &mut dyn FnMut(&mut M) -> Result<f64>,
    grad_of: &mut dyn FnMut(&mut M) -> Result<f64>,
    h: f64,
    max_coords_per_param: usize,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    for p in params_of(model) {
        p.zero_grad();
    }
    let _ = grad_of(model)?;
    let analytic: Vec<Mat> = params_of(model).iter().map(|p| p.grad.clone()).collect();

    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.data().len();
        let coords: Vec<usize> = if n <= max_coords_per_param {
            (0..n).collect()
        } else {
            let mut idx = rng.sample_indices(n, max_coords_per_param);
            idx.sort_unstable();
            idx
        };
        for k in coords {
            let orig = params_of(model)[pi].value.data()[k];
            params_of(model)[pi].value.data_mut()[k] = orig + h;
            let lp = loss_of(model)?;
            params_of(model)[pi].value.data_mut()[k] = orig - h;
            let lm = loss_of(model)?;
            params_of(model)[pi].value.data_mut()[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = grads.data()[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(DENOM_FLOOR);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, coords_checked: checked })
}
