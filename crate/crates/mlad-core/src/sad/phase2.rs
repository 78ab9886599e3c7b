//! Phase-2 training: the rectification maps and the classifier head are
//! trained under `L_tot = (1/(M N)) sum_i sum_m -log p^m(z^_i^m) + CE`,
//! with the CAD side frozen (latents, entropies, gates, priors are
//! constants here; an optional joint fine-tuning driver lives at the
//! model level).

use crate::error::{MladError, Result};
use crate::numerics::{cross_entropy, ensure_finite_loss, Linear, Mat, Param, Rng};
use serde::{Deserialize, Serialize};

use super::prior::ModalityPrior;
use super::rectify::{rectify, rectify_backward, Rectifier, RectifyCache};

/// Linear classifier on the concatenated rectified modality latents.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn new(num_modalities: usize, latent_dim: usize, num_classes: usize, root_seed: u64) -> Self {
        let mut rng = Rng::stream(root_seed, "init/head");
        ClassifierHead { linear: Linear::new(num_modalities * latent_dim, num_classes, &mut rng) }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.linear.params_mut()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase2Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub lr_decay_milestones: Vec<usize>,
    /// Off = CMR ablation: feed the CAD latents straight to the head.
    pub use_rectification: bool,
    /// Fine-tune the towers under the phase-2 loss as well.
    pub joint_finetune: bool,
    /// Prior refresh cadence (epochs) during joint fine-tuning.
    pub prior_refresh_every: usize,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Phase2Config {
            epochs: 40,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 1e-4,
            lr_decay_factor: 0.2,
            lr_decay_milestones: Vec::new(),
            use_rectification: true,
            joint_finetune: false,
            prior_refresh_every: 5,
        }
    }
}

/// Frozen per-sample CAD outputs for one split.
pub struct Phase2State<'a> {
    /// Per modality: N x L latents at the chosen exit depths.
    pub latents: &'a [Mat],
    /// Per modality: per-sample posterior entropies.
    pub entropies: &'a [Vec<f64>],
    pub labels: &'a [usize],
}

pub struct Phase2BatchResult {
    pub loss: f64,
    pub nll: f64,
    pub ce: f64,
    /// Per modality, gradient w.r.t. the batch latents (joint mode).
    pub dlatents: Option<Vec<Mat>>,
}

/// Forward (and optionally backward) for one batch of samples. Gradients
/// accumulate into the rectifier and head.
#[allow(clippy::too_many_arguments)]
pub fn phase2_batch(
    rectifier: &mut Rectifier,
    head: &mut ClassifierHead,
    priors: &[ModalityPrior],
    state: &Phase2State,
    rows: &[usize],
    use_rectification: bool,
    want_grads: bool,
    want_dz: bool,
) -> Result<Phase2BatchResult> {
    let m_count = state.latents.len();
    let latent_dim = state.latents[0].cols();
    let b = rows.len();
    if b == 0 {
        return Err(MladError::validation("empty phase-2 batch"));
    }

    let mut concat = Mat::zeros(b, m_count * latent_dim);
    let mut caches: Vec<Option<RectifyCache>> = Vec::with_capacity(b);
    let mut rectified: Vec<Vec<Vec<f64>>> = Vec::with_capacity(b);
    let mut nll = 0.0;
    let norm = 1.0 / (m_count * b) as f64;
    for (bi, &i) in rows.iter().enumerate() {
        let z: Vec<Vec<f64>> = (0..m_count).map(|m| state.latents[m].row(i).to_vec()).collect();
        let (zhat, cache) = if use_rectification {
            let h: Vec<f64> = (0..m_count).map(|m| state.entropies[m][i]).collect();
            let (out, cache) = rectify(&z, &h, priors, rectifier)?;
            (out.rectified, Some(cache))
        } else {
            (z, None)
        };
        for (m, zm) in zhat.iter().enumerate() {
            nll -= norm * priors[m].log_density(zm)?;
            concat.row_mut(bi)[m * latent_dim..(m + 1) * latent_dim].copy_from_slice(zm);
        }
        caches.push(cache);
        rectified.push(zhat);
    }

    let labels: Vec<usize> = rows.iter().map(|&i| state.labels[i]).collect();
    let logits = head.linear.forward(&concat)?;
    let (ce, dlogits) = cross_entropy(&logits, &labels)?;
    let loss = ensure_finite_loss(nll + ce, "phase 2")?;
    if !want_grads {
        return Ok(Phase2BatchResult { loss, nll, ce, dlatents: None });
    }

    let dconcat = head.linear.backward(&concat, &dlogits)?;
    let mut dlatents =
        want_dz.then(|| (0..m_count).map(|_| Mat::zeros(b, latent_dim)).collect::<Vec<_>>());
    for (bi, &_i) in rows.iter().enumerate() {
        // combine the head path with the prior NLL path
        let mut dzhat: Vec<Vec<f64>> = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let mut g = priors[m].nll_grad(&rectified[bi][m])?;
            for v in g.iter_mut() {
                *v *= norm;
            }
            for (gv, dv) in g
                .iter_mut()
                .zip(&dconcat.row(bi)[m * latent_dim..(m + 1) * latent_dim])
            {
                *gv += dv;
            }
            dzhat.push(g);
        }
        match &caches[bi] {
            Some(cache) => {
                let dz = rectify_backward(rectifier, priors, cache, &dzhat, want_dz)?;
                if let (Some(dls), Some(dz)) = (&mut dlatents, dz) {
                    for (m, dzm) in dz.iter().enumerate() {
                        dls[m].row_mut(bi).copy_from_slice(dzm);
                    }
                }
            }
            None => {
                if let Some(dls) = &mut dlatents {
                    for (m, dzm) in dzhat.iter().enumerate() {
                        dls[m].row_mut(bi).copy_from_slice(dzm);
                    }
                }
            }
        }
    }
    Ok(Phase2BatchResult { loss, nll, ce, dlatents })
}

/// Adam training of the rectification maps and classifier head with the
/// CAD side frozen. Returns the per-epoch mean loss.
pub fn phase2_train(
    rectifier: &mut Rectifier,
    head: &mut ClassifierHead,
    priors: &[ModalityPrior],
    state: &Phase2State,
    cfg: &Phase2Config,
    root_seed: u64,
) -> Result<Vec<f64>> {
    let n = state.labels.len();
    if n == 0 {
        return Err(MladError::validation("empty phase-2 training set"));
    }
    let mut shuffle_rng = Rng::stream(root_seed, "phase2/shuffle");
    let mut lr = cfg.lr;
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.lr_decay_milestones.contains(&epoch) {
            lr *= cfg.lr_decay_factor;
        }
        let order = shuffle_rng.permutation(n);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let res = phase2_batch(
                rectifier,
                head,
                priors,
                state,
                chunk,
                cfg.use_rectification,
                true,
                false,
            )?;
            epoch_loss += res.loss;
            batches += 1;
            if cfg.use_rectification {
                crate::numerics::adam_step_all(
                    &mut rectifier.params_mut(),
                    lr,
                    cfg.weight_decay,
                )?;
            } else {
                for p in rectifier.params_mut() {
                    p.zero_grad();
                }
            }
            crate::numerics::adam_step_all(&mut head.params_mut(), lr, cfg.weight_decay)?;
        }
        trajectory.push(epoch_loss / batches as f64);
    }
    Ok(trajectory)
}
