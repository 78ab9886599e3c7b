//! Entropy-gated cross-modality rectification.
//!
//! For target modality m with latent z^m and source latents z^{m'}:
//! attention maps `A = softmax_rows((W_Q z^m)(W_K z^{m'})^T / sqrt(d))`,
//! compensatory feature `z~ = sum_{m' != m} gate(m<-m') * A (W_V z^{m'})`,
//! eigen-projection `dp = U^T (z~ - z)`, reweighting `dr = w .* dp` with
//! `w = softmax(-lambda)`, and the rectified latent `z^ = z + U dr`.
//!
//! The scalar gate enters multiplicatively outside the softmax; the
//! additive-bias variant (a softmax no-op under the map reading) and the
//! no-back-rotation variant of the final update stay available behind
//! flags for comparison.

use crate::error::{MladError, Result};
use crate::numerics::{Mat, Param, Rng};
use serde::{Deserialize, Serialize};

use super::prior::{eigval_softmax, ModalityPrior};

pub const DEFAULT_GATE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightMode {
    /// `w = softmax(-lambda)`: compensate confused (low-variance) axes.
    Normal,
    /// Add the raw compensatory feature (also the CFMP-off ablation).
    None,
    /// `w = softmax(+lambda)`: the adversarial direction.
    Negative,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RectifyFlags {
    pub gate_eps: f64,
    /// Add the gate inside the softmax instead of scaling outside it.
    pub additive_gate: bool,
    /// Skip the back-rotation in the final update.
    pub literal_frame: bool,
    pub reweight: ReweightMode,
}

impl Default for RectifyFlags {
    fn default() -> Self {
        RectifyFlags {
            gate_eps: DEFAULT_GATE_EPS,
            additive_gate: false,
            literal_frame: false,
            reweight: ReweightMode::Normal,
        }
    }
}

/// Learnable rectification maps, one Q/K/V triple per target modality,
/// shared across that target's sources.
#[derive(Debug, Clone)]
pub struct Rectifier {
    pub wq: Vec<Param>,
    pub wk: Vec<Param>,
    pub wv: Vec<Param>,
    pub flags: RectifyFlags,
}

impl Rectifier {
    pub fn new(num_modalities: usize, latent_dim: usize, flags: RectifyFlags, root_seed: u64) -> Self {
        let mut wq = Vec::new();
        let mut wk = Vec::new();
        let mut wv = Vec::new();
        for m in 0..num_modalities {
            let mut rng = Rng::substream(root_seed, "init/rectifier", m as u64);
            wq.push(Param::kaiming_uniform(latent_dim, latent_dim, latent_dim, &mut rng));
            wk.push(Param::kaiming_uniform(latent_dim, latent_dim, latent_dim, &mut rng));
            wv.push(Param::kaiming_uniform(latent_dim, latent_dim, latent_dim, &mut rng));
        }
        Rectifier { wq, wk, wv, flags }
    }

    pub fn latent_dim(&self) -> usize {
        self.wq[0].value.rows()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = Vec::new();
        for p in self.wq.iter_mut().chain(self.wk.iter_mut()).chain(self.wv.iter_mut()) {
            ps.push(p);
        }
        ps
    }
}

/// Eq-13 gate: `softmax_n( H_m / (H_n + eps) )` over all sources n
/// (including n = m). Computed max-shifted; the ratios explode as a
/// source entropy approaches zero.
pub fn entropy_gate(entropies: &[f64], target: usize, eps: f64) -> Result<Vec<f64>> {
    if entropies.len() < 2 {
        return Err(MladError::validation("entropy gate needs at least 2 modalities"));
    }
    if target >= entropies.len() {
        return Err(MladError::validation("gate target out of range"));
    }
    if entropies.iter().any(|&h| h < 0.0 || !h.is_finite()) {
        return Err(MladError::validation("entropies must be finite and non-negative"));
    }
    let hm = entropies[target];
    let ratios: Vec<f64> = entropies.iter().map(|&hn| hm / (hn + eps)).collect();
    let mx = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = ratios.iter().map(|r| (r - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

pub struct RectifyOutput {
    /// Rectified latent per modality.
    pub rectified: Vec<Vec<f64>>,
    /// `gates[target][source]`, rows summing to 1.
    pub gates: Vec<Vec<f64>>,
    /// `attention[target][source]`; `None` on the diagonal.
    pub attention: Vec<Vec<Option<Mat>>>,
}

/// Forward caches for one sample, consumed by the backward pass.
pub struct RectifyCache {
    z: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<Option<Vec<f64>>>>,
    v: Vec<Vec<Option<Vec<f64>>>>,
    attn: Vec<Vec<Option<Mat>>>,
    weights: Vec<Option<Vec<f64>>>,
}

fn reweight_vector(prior: &ModalityPrior, mode: ReweightMode) -> Option<Vec<f64>> {
    match mode {
        ReweightMode::Normal => Some(prior.reweight.clone()),
        ReweightMode::Negative => Some(eigval_softmax(&prior.eig.eigvals, false)),
        ReweightMode::None => None,
    }
}

/// The reweighted update of one target: `z + U (w .* U^T (z~ - z))`,
/// its literal-frame variant, or `z + z~` when reweighting is off.
pub fn apply_reweight(
    z: &[f64],
    z_tilde: &[f64],
    prior: &ModalityPrior,
    flags: &RectifyFlags,
) -> Result<Vec<f64>> {
    let weights = reweight_vector(prior, flags.reweight);
    match weights {
        None => Ok(z.iter().zip(z_tilde).map(|(a, b)| a + b).collect()),
        Some(w) => {
            let diff: Vec<f64> = z_tilde.iter().zip(z).map(|(a, b)| a - b).collect();
            let mut proj = prior.eig.project(&diff)?;
            for (p, wi) in proj.iter_mut().zip(&w) {
                *p *= wi;
            }
            let delta = if flags.literal_frame { proj } else { prior.eig.unproject(&proj)? };
            Ok(z.iter().zip(&delta).map(|(a, b)| a + b).collect())
        }
    }
}

/// Rectifies all modality latents of one sample. Deterministic; returns
/// the attention maps and gates for inspection.
pub fn rectify(
    z: &[Vec<f64>],
    entropies: &[f64],
    priors: &[ModalityPrior],
    rect: &Rectifier,
) -> Result<(RectifyOutput, RectifyCache)> {
    let m_count = z.len();
    if m_count < 2 {
        return Err(MladError::validation("rectification needs at least 2 modalities"));
    }
    if entropies.len() != m_count || priors.len() != m_count {
        return Err(MladError::dim("modality count mismatch in rectify"));
    }
    let d = rect.latent_dim();
    let scale = 1.0 / (d as f64).sqrt();

    let mut rectified = Vec::with_capacity(m_count);
    let mut gates = Vec::with_capacity(m_count);
    let mut qs = Vec::with_capacity(m_count);
    let mut ks: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(m_count);
    let mut vs: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(m_count);
    let mut attns: Vec<Vec<Option<Mat>>> = Vec::with_capacity(m_count);
    let mut weights = Vec::with_capacity(m_count);

    for m in 0..m_count {
        let gate = entropy_gate(entropies, m, rect.flags.gate_eps)?;
        let q = rect.wq[m].value.matvec(&z[m])?;
        let mut k_row: Vec<Option<Vec<f64>>> = vec![None; m_count];
        let mut v_row: Vec<Option<Vec<f64>>> = vec![None; m_count];
        let mut a_row: Vec<Option<Mat>> = vec![None; m_count];
        let mut z_tilde = vec![0.0; d];
        for src in 0..m_count {
            if src == m {
                continue;
            }
            let k = rect.wk[m].value.matvec(&z[src])?;
            let v = rect.wv[m].value.matvec(&z[src])?;
            let mut s = Mat::zeros(d, d);
            for a in 0..d {
                for b in 0..d {
                    *s.at_mut(a, b) = q[a] * k[b] * scale;
                }
            }
            if rect.flags.additive_gate {
                // the literal reading: a per-pair scalar added before the
                // softmax (a row-softmax no-op, kept for comparison)
                let bias = gate[src];
                for vv in s.data_mut() {
                    *vv += bias;
                }
            }
            let attn = s.softmax_rows();
            let av = attn.matvec(&v)?;
            let factor = if rect.flags.additive_gate { 1.0 } else { gate[src] };
            for (acc, x) in z_tilde.iter_mut().zip(&av) {
                *acc += factor * x;
            }
            k_row[src] = Some(k);
            v_row[src] = Some(v);
            a_row[src] = Some(attn);
        }
        rectified.push(apply_reweight(&z[m], &z_tilde, &priors[m], &rect.flags)?);
        gates.push(gate);
        qs.push(q);
        ks.push(k_row);
        vs.push(v_row);
        attns.push(a_row);
        weights.push(reweight_vector(&priors[m], rect.flags.reweight));
    }

    let out = RectifyOutput {
        rectified,
        gates: gates.clone(),
        attention: attns
            .iter()
            .map(|row| row.iter().map(|a| a.clone()).collect())
            .collect(),
    };
    let cache = RectifyCache {
        z: z.to_vec(),
        gates,
        q: qs,
        k: ks,
        v: vs,
        attn: attns,
        weights,
    };
    Ok((out, cache))
}

/// Backpropagates per-target gradients of the rectified latents into the
/// Q/K/V parameters (accumulating) and, when requested, into the input
/// latents. Gates and priors are constants here.
pub fn rectify_backward(
    rect: &mut Rectifier,
    priors: &[ModalityPrior],
    cache: &RectifyCache,
    d_rectified: &[Vec<f64>],
    want_dz: bool,
) -> Result<Option<Vec<Vec<f64>>>> {
    let m_count = cache.z.len();
    let d = rect.latent_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut dz: Vec<Vec<f64>> = vec![vec![0.0; d]; m_count];

    for m in 0..m_count {
        let dzhat = &d_rectified[m];
        // through the reweighted update to the compensatory feature
        let (d_ztilde, dz_self): (Vec<f64>, Vec<f64>) = match &cache.weights[m] {
            None => (dzhat.clone(), dzhat.clone()),
            Some(w) => {
                let dt = if rect.flags.literal_frame {
                    // z^ = z + diag(w) U^T (z~ - z)
                    let wdz: Vec<f64> = dzhat.iter().zip(w).map(|(g, wi)| g * wi).collect();
                    priors[m].eig.unproject(&wdz)?
                } else {
                    // z^ = z + U diag(w) U^T (z~ - z), symmetric map
                    let proj = priors[m].eig.project(dzhat)?;
                    let wproj: Vec<f64> = proj.iter().zip(w).map(|(p, wi)| p * wi).collect();
                    priors[m].eig.unproject(&wproj)?
                };
                let dself: Vec<f64> = dzhat.iter().zip(&dt).map(|(g, t)| g - t).collect();
                (dt, dself)
            }
        };
        if want_dz {
            for (acc, v) in dz[m].iter_mut().zip(&dz_self) {
                *acc += v;
            }
        }

        let mut dq = vec![0.0; d];
        for src in 0..m_count {
            if src == m {
                continue;
            }
            let attn = cache.attn[m][src].as_ref().expect("cached attention");
            let k = cache.k[m][src].as_ref().expect("cached key");
            let v = cache.v[m][src].as_ref().expect("cached value");
            let factor = if rect.flags.additive_gate { 1.0 } else { cache.gates[m][src] };
            let dav: Vec<f64> = d_ztilde.iter().map(|g| g * factor).collect();

            // through `attn * v`
            let dv = attn.matvec_t(&dav)?;
            // dA[a][b] = dav[a] * v[b]; then row-softmax backward
            let mut ds = Mat::zeros(d, d);
            for a in 0..d {
                let arow = attn.row(a);
                let da_row: Vec<f64> = v.iter().map(|&vb| dav[a] * vb).collect();
                let inner: f64 = da_row.iter().zip(arow).map(|(x, y)| x * y).sum();
                for b in 0..d {
                    *ds.at_mut(a, b) = arow[b] * (da_row[b] - inner);
                }
            }
            // S[a][b] = q[a] k[b] / sqrt(d)
            let mut dk = vec![0.0; d];
            for a in 0..d {
                let dsrow = ds.row(a);
                let mut acc = 0.0;
                for b in 0..d {
                    acc += dsrow[b] * k[b];
                    dk[b] += dsrow[b] * cache.q[m][a];
                }
                dq[a] += acc * scale;
            }
            for x in dk.iter_mut() {
                *x *= scale;
            }

            // parameter gradients: outer products with the inputs
            for (a, &dka) in dk.iter().enumerate() {
                let grow = rect.wk[m].grad.row_mut(a);
                for (b, &zb) in cache.z[src].iter().enumerate() {
                    grow[b] += dka * zb;
                }
            }
            for (a, &dva) in dv.iter().enumerate() {
                let grow = rect.wv[m].grad.row_mut(a);
                for (b, &zb) in cache.z[src].iter().enumerate() {
                    grow[b] += dva * zb;
                }
            }
            if want_dz {
                let dzk = rect.wk[m].value.matvec_t(&dk)?;
                let dzv = rect.wv[m].value.matvec_t(&dv)?;
                for ((acc, a), b) in dz[src].iter_mut().zip(&dzk).zip(&dzv) {
                    *acc += a + b;
                }
            }
        }
        for (a, &dqa) in dq.iter().enumerate() {
            let grow = rect.wq[m].grad.row_mut(a);
            for (b, &zb) in cache.z[m].iter().enumerate() {
                grow[b] += dqa * zb;
            }
        }
        if want_dz {
            let dzq = rect.wq[m].value.matvec_t(&dq)?;
            for (acc, v) in dz[m].iter_mut().zip(&dzq) {
                *acc += v;
            }
        }
    }
    Ok(want_dz.then_some(dz))
}
