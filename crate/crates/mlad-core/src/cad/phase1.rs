//! Phase-1 training: every-depth auxiliary cross-entropy plus the
//! residual cross-class reconstruction loss with final-layer latents,
//! minimized jointly over all modality towers by Adam.

use crate::data::MultimodalDataset;
use crate::error::{MladError, Result};
use crate::numerics::{cross_entropy, ensure_finite_loss, Mat, Rng};
use serde::{Deserialize, Serialize};

use super::latents::{ClassLatentTable, PerDepthTable};
use super::loss::{loss_cad, CadBatch, CadDraws, CadOptions};
use super::tower::ModalityTower;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    #[serde(default)]
    pub lr_decay_milestones: Vec<usize>,
    pub cad: CadOptions,
    /// Refit the per-depth class-distribution cache every K epochs.
    pub cache_refresh_every: usize,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Phase1Config {
            epochs: 60,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 1e-4,
            lr_decay_factor: 0.2,
            lr_decay_milestones: Vec::new(),
            cad: CadOptions::default(),
            cache_refresh_every: 5,
        }
    }
}

pub struct Phase1Output {
    /// Mean total loss per epoch.
    pub loss_trajectory: Vec<f64>,
    pub depth_cache: PerDepthTable,
    /// Class table with every exit at the final depth.
    pub final_table: ClassLatentTable,
}

/// Stratified batch plan: every batch carries at least two samples of
/// every class so the class distributions stay fittable.
struct BatchPlan {
    quotas: Vec<usize>,
    batches_per_epoch: usize,
}

impl BatchPlan {
    fn new(class_sizes: &[usize], batch_size: usize) -> Result<Self> {
        let n: usize = class_sizes.iter().sum();
        if let Some((c, _)) = class_sizes.iter().enumerate().find(|(_, &s)| s < 2) {
            return Err(MladError::validation(format!(
                "class {c} has fewer than 2 training samples"
            )));
        }
        let quotas: Vec<usize> = class_sizes
            .iter()
            .map(|&s| {
                let q = (batch_size as f64 * s as f64 / n as f64).round() as usize;
                q.clamp(2, s)
            })
            .collect();
        let batches_per_epoch = class_sizes
            .iter()
            .zip(&quotas)
            .map(|(&s, &q)| s / q)
            .min()
            .unwrap_or(1)
            .max(1);
        Ok(BatchPlan { quotas, batches_per_epoch })
    }
}

/// Trains the towers; afterwards fits the class distributions at every
/// depth (needed by the depth search and the Q reward).
pub fn phase1_train(
    towers: &mut [ModalityTower],
    train: &MultimodalDataset,
    cfg: &Phase1Config,
    root_seed: u64,
) -> Result<Phase1Output> {
    if towers.len() != train.num_modalities() {
        return Err(MladError::dim("tower count must match dataset modalities"));
    }
    let groups = train.class_indices();
    let class_sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    let plan = BatchPlan::new(&class_sizes, cfg.batch_size)?;
    let depth = towers[0].depth();
    let latent_dim = towers[0].cfg.latent_dim;

    let mut shuffle_rng = Rng::stream(root_seed, "phase1/shuffle");
    let mut draw_rng = Rng::stream(root_seed, "phase1/draws");
    let mut lr = cfg.lr;
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    let mut depth_cache = None;

    for epoch in 0..cfg.epochs {
        if cfg.lr_decay_milestones.contains(&epoch) {
            lr *= cfg.lr_decay_factor;
        }
        let mut shuffled: Vec<Vec<usize>> = groups.clone();
        for g in &mut shuffled {
            shuffle_rng.shuffle(g);
        }
        let mut epoch_loss = 0.0;
        for b in 0..plan.batches_per_epoch {
            // class-contiguous batch assembly
            let mut batch_rows = Vec::new();
            let mut labels = Vec::new();
            let mut class_chunks: Vec<Vec<usize>> = Vec::with_capacity(groups.len());
            for (c, g) in shuffled.iter().enumerate() {
                let q = plan.quotas[c];
                let chunk: Vec<usize> = g[b * q..(b + 1) * q].to_vec();
                batch_rows.extend_from_slice(&chunk);
                labels.extend(std::iter::repeat(c).take(q));
                class_chunks.push(chunk);
            }

            let mut fwds = Vec::with_capacity(towers.len());
            let mut batch_inputs = Vec::with_capacity(towers.len());
            for (m, tower) in towers.iter().enumerate() {
                let x = train.features[m].select_rows(&batch_rows);
                fwds.push(tower.forward_full(&x)?);
                batch_inputs.push(
                    class_chunks
                        .iter()
                        .map(|chunk| train.features[m].select_rows(chunk))
                        .collect::<Vec<_>>(),
                );
            }

            // auxiliary cross-entropy at every depth
            let mut ce_total = 0.0;
            let mut dlatents: Vec<Vec<Option<Mat>>> =
                (0..towers.len()).map(|_| vec![None; depth]).collect();
            for (m, tower) in towers.iter_mut().enumerate() {
                for d in 0..depth {
                    let logits = tower.aux_head.forward(&fwds[m].latents[d])?;
                    let (ce, dlogits) = cross_entropy(&logits, &labels)?;
                    ce_total += ce;
                    let dlat = tower.aux_head.backward(&fwds[m].latents[d], &dlogits)?;
                    dlatents[m][d] = Some(dlat);
                }
            }

            // reconstruction loss on final-layer latents
            let cad_batch = CadBatch {
                inputs: batch_inputs,
                latents: (0..towers.len())
                    .map(|m| {
                        let final_lat = &fwds[m].latents[depth - 1];
                        let mut per_class = Vec::with_capacity(groups.len());
                        let mut offset = 0;
                        for &q in &plan.quotas {
                            let rows: Vec<usize> = (offset..offset + q).collect();
                            per_class.push(final_lat.select_rows(&rows));
                            offset += q;
                        }
                        per_class
                    })
                    .collect(),
            };
            let draws = CadDraws::for_batch(&mut draw_rng, &cad_batch, latent_dim);
            let (parts, grads) = loss_cad(towers, &cad_batch, &cfg.cad, &draws, true)?;
            let grads = grads.expect("gradients requested");

            // scatter CAD latent gradients into the final depth
            for (m, per_class) in grads.dlatents.iter().enumerate() {
                let dfinal = dlatents[m][depth - 1]
                    .get_or_insert_with(|| Mat::zeros(batch_rows.len(), latent_dim));
                let mut offset = 0;
                for (c, dlat) in per_class.iter().enumerate() {
                    for r in 0..dlat.rows() {
                        for (dst, src) in dfinal
                            .row_mut(offset + r)
                            .iter_mut()
                            .zip(dlat.row(r))
                        {
                            *dst += src;
                        }
                    }
                    offset += plan.quotas[c];
                }
            }

            for (m, tower) in towers.iter_mut().enumerate() {
                tower.backward(&fwds[m], &dlatents[m])?;
            }

            let batch_loss = ensure_finite_loss(ce_total + parts.total, "phase 1")?;
            epoch_loss += batch_loss;
            for tower in towers.iter_mut() {
                crate::numerics::adam_step_all(&mut tower.params_mut(), lr, cfg.weight_decay)?;
            }
        }
        trajectory.push(epoch_loss / plan.batches_per_epoch as f64);

        if cfg.cache_refresh_every > 0 && (epoch + 1) % cfg.cache_refresh_every == 0 {
            depth_cache = Some(PerDepthTable::fit(towers, train)?);
        }
    }

    let depth_cache = match depth_cache {
        Some(c) if cfg.epochs % cfg.cache_refresh_every.max(1) == 0 => c,
        _ => PerDepthTable::fit(towers, train)?,
    };
    let final_depths = vec![vec![depth; train.num_classes]; towers.len()];
    let final_table = depth_cache.at_depths(&final_depths, train.class_priors());
    Ok(Phase1Output { loss_trajectory: trajectory, depth_cache, final_table })
}

/// Training accuracy of the auxiliary classifier at one depth.
pub fn aux_accuracy(
    tower: &ModalityTower,
    features: &Mat,
    labels: &[usize],
    depth: usize,
) -> Result<f64> {
    let lat = tower.forward_to_depth(features, depth)?;
    let logits = tower.aux_head.forward(&lat)?;
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        if pred == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}
