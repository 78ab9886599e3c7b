//! Q-learning for per-class exit depths.
//!
//! Each (modality, layer) below the final one carries a linear Q head
//! scoring the two actions (exit, continue). Episodes walk a training
//! sample's per-layer latents shallow to deep with epsilon-greedy
//! exploration; exiting at depth d earns `exp(-L)` where `L` is the
//! class's residual-reconstruction loss at that depth evaluated from the
//! cached per-depth class distributions, continuing earns nothing now and
//! the discounted best of the next layer later. All transitions of an
//! episode are applied as one squared-Bellman-error update.

use crate::data::MultimodalDataset;
use crate::error::{MladError, Result};
use crate::numerics::{ensure_finite_loss, GaussianDiag, Linear, Mat, Rng};
use serde::{Deserialize, Serialize};

use super::latents::PerDepthTable;
use super::loss::CadOptions;
use super::tower::ModalityTower;

pub const ACTION_EXIT: usize = 0;
pub const ACTION_CONTINUE: usize = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QlearnConfig {
    /// Passes over the training samples (one episode per sample per pass).
    pub passes: usize,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub lr: f64,
    /// Sharpness of the reward `exp(-scale * L)`.
    pub reward_loss_scale: f64,
    /// Decoder-calibration epochs before the depth search: psi/rho are
    /// fine-tuned (encoders frozen) on the cached class distributions of
    /// every depth, so the reward is evaluated inside the decoders'
    /// trained domain at every candidate depth.
    #[serde(default = "default_calibration_epochs")]
    pub calibration_epochs: usize,
    #[serde(default = "default_calibration_lr")]
    pub calibration_lr: f64,
    pub cad: CadOptions,
}

fn default_calibration_epochs() -> usize {
    30
}
fn default_calibration_lr() -> f64 {
    3e-3
}

impl Default for QlearnConfig {
    fn default() -> Self {
        QlearnConfig {
            passes: 20,
            gamma: 0.9,
            eps_start: 0.9,
            eps_end: 0.05,
            lr: 1e-3,
            reward_loss_scale: 1.0,
            calibration_epochs: default_calibration_epochs(),
            calibration_lr: default_calibration_lr(),
            cad: CadOptions::default(),
        }
    }
}

/// Fine-tunes the residual decoders on every depth's cached latents with
/// the encoders frozen. The phase-1 objective grounds the decoders on
/// final-layer draws only; the depth search needs them defined on every
/// layer's latent region.
pub fn calibrate_decoders(
    towers: &mut [ModalityTower],
    train: &MultimodalDataset,
    cfg: &QlearnConfig,
    root_seed: u64,
) -> Result<()> {
    if cfg.calibration_epochs == 0 {
        return Ok(());
    }
    let groups = train.class_indices();
    let depth = towers[0].depth();
    let latent_dim = towers[0].cfg.latent_dim;
    // per-depth latents are fixed while the encoders are frozen
    let mut latents_per_depth: Vec<Vec<Vec<crate::numerics::Mat>>> = Vec::new(); // [m][d][c]
    let mut inputs: Vec<Vec<crate::numerics::Mat>> = Vec::new(); // [m][c]
    for (m, tower) in towers.iter().enumerate() {
        let fwd = tower.forward_full(&train.features[m])?;
        latents_per_depth.push(
            (0..depth)
                .map(|d| groups.iter().map(|g| fwd.latents[d].select_rows(g)).collect())
                .collect(),
        );
        inputs.push(groups.iter().map(|g| train.features[m].select_rows(g)).collect());
    }
    let mut rng = Rng::stream(root_seed, "qlearn/calibrate");
    for _ in 0..cfg.calibration_epochs {
        for d in 0..depth {
            let batch = super::loss::CadBatch {
                inputs: inputs.clone(),
                latents: (0..towers.len())
                    .map(|m| latents_per_depth[m][d].clone())
                    .collect(),
            };
            let draws = super::loss::CadDraws::for_batch(&mut rng, &batch, latent_dim);
            let (parts, _) = super::loss::loss_cad(towers, &batch, &cfg.cad, &draws, true)?;
            ensure_finite_loss(parts.total, "decoder calibration")?;
            for tower in towers.iter_mut() {
                // decoders only; the latent gradients are discarded and
                // the encoder parameters keep zero grads
                crate::numerics::adam_step_all(&mut tower.psi.params_mut(), cfg.calibration_lr, 0.0)?;
                crate::numerics::adam_step_all(&mut tower.rho.params_mut(), cfg.calibration_lr, 0.0)?;
                for p in tower.params_mut() {
                    p.zero_grad();
                }
            }
        }
    }
    Ok(())
}

/// Per-(modality, layer) Q heads; the final layer has none (exit forced).
#[derive(Debug, Clone)]
pub struct ExitPolicy {
    pub q_heads: Vec<Vec<Linear>>,
    pub depth: usize,
}

impl ExitPolicy {
    pub fn new(num_modalities: usize, depth: usize, latent_dim: usize, root_seed: u64) -> Self {
        let q_heads = (0..num_modalities)
            .map(|m| {
                let mut rng = Rng::substream(root_seed, "init/qnet", m as u64);
                (0..depth.saturating_sub(1))
                    .map(|_| {
                        let mut head = Linear::new(latent_dim, 2, &mut rng);
                        // optimistic start: rewards are exp(-L) <= 1, so a
                        // bias of 1 keeps untried actions attractive and
                        // deep layers from starving once the policy turns
                        // greedy
                        head.b.value.fill(1.0);
                        head
                    })
                    .collect()
            })
            .collect();
        ExitPolicy { q_heads, depth }
    }

    /// Q values `[exit, continue]` at a 1-based depth `d <= depth - 1`.
    pub fn q_values(&self, m: usize, d: usize, state: &[f64]) -> Result<[f64; 2]> {
        let head = self
            .q_heads
            .get(m)
            .and_then(|per| per.get(d - 1))
            .ok_or_else(|| MladError::validation(format!("no Q head at ({m}, depth {d})")))?;
        let x = Mat::from_vec(1, state.len(), state.to_vec())?;
        let q = head.forward(&x)?;
        Ok([q.at(0, 0), q.at(0, 1)])
    }

    /// Greedy action; ties continue deeper.
    pub fn prefers_exit(&self, m: usize, d: usize, state: &[f64]) -> Result<bool> {
        let q = self.q_values(m, d, state)?;
        Ok(q[ACTION_EXIT] > q[ACTION_CONTINUE])
    }
}

/// Reward table `exp(-scale * L(m, c, d))`, indexed `[m][c][d-1]`.
pub type RewardTable = Vec<Vec<Vec<f64>>>;

/// The class's own terms of the reconstruction loss at one depth,
/// normalized per entry, with latents drawn from the cached distribution.
fn per_class_loss(
    tower: &ModalityTower,
    dist: &GaussianDiag,
    class_inputs: &[Mat],
    c: usize,
    opts: &CadOptions,
    rng: &mut Rng,
) -> Result<f64> {
    let x = &class_inputs[c];
    let (n_c, dim) = (x.rows(), x.cols());
    let n_min = class_inputs.iter().map(|m| m.rows()).min().unwrap_or(0);
    let c_count = class_inputs.len();
    let std = dist.std();
    let mut z = Mat::zeros(n_c, dist.dim());
    for r in 0..n_c {
        for j in 0..dist.dim() {
            *z.at_mut(r, j) = dist.mean[j] + std[j] * rng.normal();
        }
    }
    let (decoded, _) = tower.psi.forward(&z)?;
    let diff = decoded.sub(x)?;
    let intra = diff.frobenius_sq() / (n_c * dim) as f64;

    if !opts.include_cross || c_count < 2 {
        return Ok(intra);
    }
    let mut resid = x.sub(&decoded)?;
    let s = resid.std_all();
    for v in resid.data_mut() {
        *v += opts.alpha * s * rng.normal();
    }
    let sub_c = rng.sample_indices(n_c, n_min);
    let r_sub = resid.select_rows(&sub_c);
    let t = if opts.decode_residual {
        tower.rho.forward(&r_sub)?.0
    } else {
        r_sub
    };
    let mut cross = 0.0;
    for (c2, x2) in class_inputs.iter().enumerate() {
        if c2 == c {
            continue;
        }
        let sub2 = rng.sample_indices(x2.rows(), n_min);
        let d = t.sub(&x2.select_rows(&sub2))?;
        cross += d.frobenius_sq() / (n_min * dim) as f64;
    }
    Ok(intra + cross / (c_count - 1) as f64)
}

/// Precomputes `exp(-scale * L)` for every (modality, class, depth).
pub fn reward_table(
    towers: &[ModalityTower],
    train: &MultimodalDataset,
    depth_cache: &PerDepthTable,
    cfg: &QlearnConfig,
    root_seed: u64,
) -> Result<RewardTable> {
    let groups = train.class_indices();
    let c_count = train.num_classes;
    let depth = towers[0].depth();
    let mut table = Vec::with_capacity(towers.len());
    for (m, tower) in towers.iter().enumerate() {
        let class_inputs: Vec<Mat> = groups
            .iter()
            .map(|g| train.features[m].select_rows(g))
            .collect();
        let mut per_class = vec![vec![0.0; depth]; c_count];
        for c in 0..c_count {
            for d in 1..=depth {
                let key = ((m * c_count + c) * (depth + 1) + d) as u64;
                let mut rng = Rng::substream(root_seed, "qlearn/reward", key);
                let loss = per_class_loss(
                    tower,
                    depth_cache.dist(m, d, c),
                    &class_inputs,
                    c,
                    &cfg.cad,
                    &mut rng,
                )?;
                ensure_finite_loss(loss, "reward loss")?;
                per_class[c][d - 1] = (-cfg.reward_loss_scale * loss).exp();
            }
        }
        table.push(per_class);
    }
    Ok(table)
}

pub struct QlearnOutput {
    /// Learned per-class exit depths, `[modality][class]`, 1-based.
    pub exit_depths: Vec<Vec<usize>>,
    pub rewards: RewardTable,
}

/// Trains the Q heads and derives the per-class exit depths: the first
/// layer where the greedy policy on the class-mean latent exits, or the
/// final layer if none does.
pub fn qlearn_train(
    towers: &mut [ModalityTower],
    policy: &mut ExitPolicy,
    train: &MultimodalDataset,
    depth_cache: &PerDepthTable,
    cfg: &QlearnConfig,
    root_seed: u64,
) -> Result<QlearnOutput> {
    let depth = towers[0].depth();
    if depth != policy.depth {
        return Err(MladError::dim("policy depth must match tower depth"));
    }
    calibrate_decoders(towers, train, cfg, root_seed)?;
    let rewards = reward_table(towers, train, depth_cache, cfg, root_seed)?;
    let n = train.len();

    // per-layer latents of every training sample, per modality
    let mut latents: Vec<Vec<Mat>> = Vec::with_capacity(towers.len());
    for (m, tower) in towers.iter().enumerate() {
        latents.push(tower.forward_full(&train.features[m])?.latents);
    }

    let mut explore_rng = Rng::stream(root_seed, "qlearn/explore");
    for m in 0..towers.len() {
        if depth < 2 {
            continue; // single-layer tower: exit is always forced
        }
        for pass in 0..cfg.passes {
            let frac = if cfg.passes <= 1 { 1.0 } else { pass as f64 / (cfg.passes - 1) as f64 };
            let eps = cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
            // anneal the step size so late single-sample updates stop
            // jittering the small exit/continue margins
            let lr = cfg.lr * (1.0 - 0.9 * frac);
            for i in 0..n {
                let class = train.labels[i];
                // walk shallow -> deep, collecting (layer, action)
                let mut transitions: Vec<(usize, usize)> = Vec::new();
                for d in 1..depth {
                    let state = latents[m][d - 1].row(i);
                    let action = if explore_rng.uniform() < eps {
                        explore_rng.below(2)
                    } else {
                        let q = policy.q_values(m, d, state)?;
                        if q[ACTION_EXIT] > q[ACTION_CONTINUE] {
                            ACTION_EXIT
                        } else {
                            ACTION_CONTINUE
                        }
                    };
                    transitions.push((d, action));
                    if action == ACTION_EXIT {
                        break;
                    }
                }
                // one update from the whole episode
                for &(d, action) in &transitions {
                    let target = if action == ACTION_EXIT {
                        rewards[m][class][d - 1]
                    } else if d + 1 < depth {
                        let next = latents[m][d].row(i);
                        let qn = policy.q_values(m, d + 1, next)?;
                        cfg.gamma * qn[ACTION_EXIT].max(qn[ACTION_CONTINUE])
                    } else {
                        // continuing into the final layer forces an exit
                        cfg.gamma * rewards[m][class][depth - 1]
                    };
                    let state = latents[m][d - 1].row(i);
                    let x = Mat::from_vec(1, state.len(), state.to_vec())?;
                    let head = &mut policy.q_heads[m][d - 1];
                    let q = head.forward(&x)?;
                    let mut dq = Mat::zeros(1, 2);
                    *dq.at_mut(0, action) = 2.0 * (q.at(0, action) - target);
                    head.backward(&x, &dq)?;
                }
                for &(d, _) in &transitions {
                    let head = &mut policy.q_heads[m][d - 1];
                    crate::numerics::adam_step_all(&mut head.params_mut(), lr, 0.0)?;
                }
            }
        }
    }

    // exit depths from the greedy policy on class-mean latents
    let groups = train.class_indices();
    let mut exit_depths = Vec::with_capacity(towers.len());
    for m in 0..towers.len() {
        let mut per_class = Vec::with_capacity(train.num_classes);
        for g in &groups {
            let mut chosen = depth;
            for d in 1..depth {
                let mean = latents[m][d - 1].select_rows(g).col_means();
                if policy.prefers_exit(m, d, &mean)? {
                    chosen = d;
                    break;
                }
            }
            per_class.push(chosen);
        }
        exit_depths.push(per_class);
    }
    Ok(QlearnOutput { exit_depths, rewards })
}

/// Inference-time exit for a single sample of one modality: walk the
/// layers greedily and stop at the first exit preference; the final layer
/// exits unconditionally. Consumes only the blocks up to the exit.
pub fn choose_exit(
    tower: &ModalityTower,
    policy: &ExitPolicy,
    m: usize,
    x: &[f64],
) -> Result<(usize, Vec<f64>)> {
    let mut h = Mat::from_vec(1, x.len(), x.to_vec())?;
    for d in 1..=tower.depth() {
        h = crate::numerics::relu(&tower.blocks[d - 1].forward(&h)?);
        let latent = tower.latent_head.forward(&h)?;
        if d == tower.depth() || policy.prefers_exit(m, d, latent.row(0))? {
            return Ok((d, latent.row(0).to_vec()));
        }
    }
    unreachable!("final layer always exits")
}

/// Batch variant: per-sample exit depths and the latent matrix at the
/// chosen depths.
pub fn choose_exit_batch(
    tower: &ModalityTower,
    policy: Option<&ExitPolicy>,
    m: usize,
    x: &Mat,
) -> Result<(Vec<usize>, Mat)> {
    let fwd = tower.forward_full(x)?;
    let depth = tower.depth();
    let mut depths = vec![depth; x.rows()];
    if let Some(policy) = policy {
        for i in 0..x.rows() {
            for d in 1..depth {
                if policy.prefers_exit(m, d, fwd.latents[d - 1].row(i))? {
                    depths[i] = d;
                    break;
                }
            }
        }
    }
    let mut out = Mat::zeros(x.rows(), tower.cfg.latent_dim);
    for i in 0..x.rows() {
        out.row_mut(i).copy_from_slice(fwd.latents[depths[i] - 1].row(i));
    }
    Ok((depths, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cad::tower::TowerConfig;
    use crate::numerics::mat::tests::random_mat;

    fn tower(rng: &mut Rng) -> ModalityTower {
        ModalityTower::new(
            TowerConfig {
                input_dim: 5,
                depth: 3,
                hidden_width: 8,
                latent_dim: 4,
                num_classes: 2,
                psi_hidden: 8,
                rho_hidden: 8,
            },
            rng,
        )
        .unwrap()
    }

    fn forced_policy(exit: bool) -> ExitPolicy {
        let mut p = ExitPolicy::new(1, 3, 4, 7);
        for per_m in &mut p.q_heads {
            for head in per_m {
                head.w.value.fill(0.0);
                *head.b.value.at_mut(0, ACTION_EXIT) = if exit { 1.0 } else { 0.0 };
                *head.b.value.at_mut(0, ACTION_CONTINUE) = if exit { 0.0 } else { 1.0 };
            }
        }
        p
    }

    #[test]
    fn always_exit_policy_stops_at_depth_one() {
        let mut rng = Rng::seed_from(1);
        let t = tower(&mut rng);
        let x = random_mat(&mut rng, 1, 5);
        let (d, _) = choose_exit(&t, &forced_policy(true), 0, x.row(0)).unwrap();
        assert_eq!(d, 1);
    }

    #[test]
    fn always_continue_policy_falls_through_to_final() {
        let mut rng = Rng::seed_from(2);
        let t = tower(&mut rng);
        let x = random_mat(&mut rng, 1, 5);
        let (d, _) = choose_exit(&t, &forced_policy(false), 0, x.row(0)).unwrap();
        assert_eq!(d, 3);
    }

    #[test]
    fn returned_latent_matches_forward_to_depth() {
        let mut rng = Rng::seed_from(3);
        let t = tower(&mut rng);
        let x = random_mat(&mut rng, 4, 5);
        for policy in [forced_policy(true), forced_policy(false)] {
            for i in 0..4 {
                let (d, lat) = choose_exit(&t, &policy, 0, x.row(i)).unwrap();
                let expect = t.forward_to_depth(&x, d).unwrap();
                for (a, b) in lat.iter().zip(expect.row(i)) {
                    assert_eq!(a, b);
                }
            }
            let (depths, lats) = choose_exit_batch(&t, Some(&policy), 0, &x).unwrap();
            for i in 0..4 {
                let (d, lat) = choose_exit(&t, &policy, 0, x.row(i)).unwrap();
                assert_eq!(depths[i], d);
                assert_eq!(lats.row(i), lat.as_slice());
            }
        }
    }

    #[test]
    fn forced_final_when_no_policy() {
        let mut rng = Rng::seed_from(4);
        let t = tower(&mut rng);
        let x = random_mat(&mut rng, 3, 5);
        let (depths, lats) = choose_exit_batch(&t, None, 0, &x).unwrap();
        assert_eq!(depths, vec![3, 3, 3]);
        assert_eq!(lats, t.forward_to_depth(&x, 3).unwrap());
    }

    #[test]
    fn perfect_reconstruction_reward_is_one() {
        let mut rng = Rng::seed_from(5);
        let mut t = tower(&mut rng);
        // psi decodes everything to the constant row x0; single class
        let x0 = vec![0.5, -1.0, 2.0, 0.0, 1.0];
        t.psi.l1.w.value.fill(0.0);
        t.psi.l1.b.value.fill(0.0);
        t.psi.l2.w.value.fill(0.0);
        for (j, v) in x0.iter().enumerate() {
            *t.psi.l2.b.value.at_mut(0, j) = *v;
        }
        let class_inputs = vec![Mat::from_rows(&[x0.clone(), x0.clone()]).unwrap()];
        let dist = GaussianDiag::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
        let opts = CadOptions { alpha: 0.0, include_cross: true, decode_residual: true };
        let loss =
            per_class_loss(&t, &dist, &class_inputs, 0, &opts, &mut Rng::seed_from(1)).unwrap();
        assert!(loss.abs() < 1e-20);
        assert_eq!((-loss).exp(), 1.0); // terminal Bellman target
    }
}
