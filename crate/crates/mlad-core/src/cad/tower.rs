//! Stacked dynamic-exit modality encoder: linear+ReLU blocks, one
//! latent head and one auxiliary classifier applied at every depth, a
//! shared residual decoder, and a residual-transform decoder.
//!
//! The latent head is shared across depths. Together with the single
//! decoder `psi` this pins one common latent space per modality, which
//! the per-depth exit rewards and the downstream rectification rely on.

use crate::error::{MladError, Result};
use crate::numerics::{relu, relu_backward, Linear, Mat, Mlp2, Param, Rng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TowerConfig {
    pub input_dim: usize,
    /// Number of stacked encoder blocks (exits).
    pub depth: usize,
    pub hidden_width: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    /// Residual decoder hidden width.
    pub psi_hidden: usize,
    /// Residual-transform decoder hidden width.
    pub rho_hidden: usize,
}

/// One modality's encoder stack. The latent heads of every depth map
/// into one common latent space, which the single shared decoder `psi`
/// decodes back to the input space; `rho` maps residuals to the input
/// space for cross-class reconstruction.
#[derive(Debug, Clone)]
pub struct ModalityTower {
    pub cfg: TowerConfig,
    pub blocks: Vec<Linear>,
    pub latent_head: Linear,
    pub aux_head: Linear,
    pub psi: Mlp2,
    pub rho: Mlp2,
}

/// Forward activations kept for the backward pass.
pub struct TowerForward {
    pub x: Mat,
    pre: Vec<Mat>,
    act: Vec<Mat>,
    /// Latent output at each depth (index d = depth d+1).
    pub latents: Vec<Mat>,
}

impl ModalityTower {
    pub fn new(cfg: TowerConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.depth == 0 {
            return Err(MladError::validation("tower depth must be >= 1"));
        }
        let mut blocks = Vec::with_capacity(cfg.depth);
        for d in 0..cfg.depth {
            let in_dim = if d == 0 { cfg.input_dim } else { cfg.hidden_width };
            blocks.push(Linear::new(in_dim, cfg.hidden_width, rng));
        }
        let latent_head = Linear::new(cfg.hidden_width, cfg.latent_dim, rng);
        let aux_head = Linear::new(cfg.latent_dim, cfg.num_classes, rng);
        let psi = Mlp2::new(cfg.latent_dim, cfg.psi_hidden, cfg.input_dim, rng);
        let rho = Mlp2::new(cfg.input_dim, cfg.rho_hidden, cfg.input_dim, rng);
        Ok(ModalityTower { cfg, blocks, latent_head, aux_head, psi, rho })
    }

    pub fn depth(&self) -> usize {
        self.cfg.depth
    }

    /// Forward through every block, producing the latent at every depth.
    pub fn forward_full(&self, x: &Mat) -> Result<TowerForward> {
        let mut pre = Vec::with_capacity(self.cfg.depth);
        let mut act = Vec::with_capacity(self.cfg.depth);
        let mut latents = Vec::with_capacity(self.cfg.depth);
        let mut h = x.clone();
        for d in 0..self.cfg.depth {
            let p = self.blocks[d].forward(&h)?;
            let a = relu(&p);
            latents.push(self.latent_head.forward(&a)?);
            pre.push(p);
            h = a.clone();
            act.push(a);
        }
        Ok(TowerForward { x: x.clone(), pre, act, latents })
    }

    /// Latent at depth `d` (1-based), consuming only blocks 1..d.
    pub fn forward_to_depth(&self, x: &Mat, d: usize) -> Result<Mat> {
        if d == 0 || d > self.cfg.depth {
            return Err(MladError::validation(format!(
                "depth {d} out of range 1..={}",
                self.cfg.depth
            )));
        }
        let mut h = x.clone();
        for block in &self.blocks[..d] {
            h = relu(&block.forward(&h)?);
        }
        self.latent_head.forward(&h)
    }

    /// Backpropagates per-depth latent gradients through heads and blocks,
    /// accumulating parameter gradients. Returns `dL/dx`.
    pub fn backward(&mut self, fwd: &TowerForward, dlatents: &[Option<Mat>]) -> Result<Mat> {
        if dlatents.len() != self.cfg.depth {
            return Err(MladError::dim("dlatents length must equal tower depth"));
        }
        let mut dact: Option<Mat> = None;
        for d in (0..self.cfg.depth).rev() {
            if let Some(dl) = &dlatents[d] {
                let dh = self.latent_head.backward(&fwd.act[d], dl)?;
                match &mut dact {
                    Some(a) => a.axpy(1.0, &dh)?,
                    None => dact = Some(dh),
                }
            }
            let da = match dact.take() {
                Some(a) => a,
                None => continue,
            };
            let dpre = relu_backward(&fwd.pre[d], &da)?;
            let input = if d == 0 { &fwd.x } else { &fwd.act[d - 1] };
            let dinput = self.blocks[d].backward(input, &dpre)?;
            if d == 0 {
                return Ok(dinput);
            }
            dact = Some(dinput);
        }
        Ok(Mat::zeros(fwd.x.rows(), fwd.x.cols()))
    }

    /// Every trainable parameter, in a stable order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = Vec::new();
        for b in &mut self.blocks {
            ps.extend(b.params_mut());
        }
        ps.extend(self.latent_head.params_mut());
        ps.extend(self.aux_head.params_mut());
        ps.extend(self.psi.params_mut());
        ps.extend(self.rho.params_mut());
        ps
    }
}
