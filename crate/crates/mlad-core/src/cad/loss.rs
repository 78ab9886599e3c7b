//! Residual cross-class reconstruction loss.
//!
//! intra = (1/MC) sum_m sum_c ||psi(z_c) - X_c||_F^2
//! cross = (1/(MC(C-1))) sum_m sum_c sum_{c' != c} ||rho(R_c) - X_{c'}||_F^2
//!
//! with `R_c = X_c - psi(z_c) + eps`, `eps ~ N(0, sigma^2 I)`,
//! `sigma = alpha * std(X_c - psi(z_c))` (scalar std over all entries),
//! and `z_c` redrawn from the class distribution by reparameterization so
//! the distribution parameters receive gradients. For the cross term,
//! class row counts are equalized by seeded subsampling to the smallest
//! class. A flag restores the literal variant that compares `R_c` to
//! `X_{c'}` without decoding through `rho`.

use crate::error::{MladError, Result};
use crate::numerics::{Mat, Rng, VAR_FLOOR};
use serde::{Deserialize, Serialize};

use super::tower::ModalityTower;

/// Guard below which the noise-scale gradient path is dropped (the std
/// derivative is singular at zero residual).
const STD_GRAD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CadLossParts {
    pub intra: f64,
    pub cross: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CadOptions {
    /// Residual noise scale alpha.
    pub alpha: f64,
    /// Include the cross-class term (off = RCCR ablation).
    pub include_cross: bool,
    /// Pass residuals through the transform decoder `rho` before the
    /// cross-class comparison (default); off restores the literal form.
    pub decode_residual: bool,
}

impl Default for CadOptions {
    fn default() -> Self {
        CadOptions { alpha: 0.1, include_cross: true, decode_residual: true }
    }
}

/// Per-class inputs and final-depth latents for one loss evaluation,
/// indexed `[modality][class]`.
pub struct CadBatch {
    pub inputs: Vec<Vec<Mat>>,
    pub latents: Vec<Vec<Mat>>,
}

impl CadBatch {
    pub fn num_modalities(&self) -> usize {
        self.inputs.len()
    }
    pub fn num_classes(&self) -> usize {
        self.inputs.first().map(|v| v.len()).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() || self.inputs.len() != self.latents.len() {
            return Err(MladError::dim("CadBatch modality mismatch"));
        }
        let c = self.num_classes();
        for (ins, lats) in self.inputs.iter().zip(&self.latents) {
            if ins.len() != c || lats.len() != c {
                return Err(MladError::dim("CadBatch class count mismatch"));
            }
            for (cls, (x, z)) in ins.iter().zip(lats).enumerate() {
                if x.rows() == 0 {
                    return Err(MladError::validation(format!("class {cls} missing from batch")));
                }
                if x.rows() != z.rows() {
                    return Err(MladError::dim("input/latent row mismatch"));
                }
                if x.rows() < 2 {
                    return Err(MladError::validation(format!(
                        "class {cls} needs at least 2 rows to fit its distribution"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn min_class_size(&self) -> usize {
        self.inputs[0].iter().map(|x| x.rows()).min().unwrap_or(0)
    }
}

/// Frozen randomness for one loss evaluation: reparameterization draws,
/// residual noise draws, and the per-class row subsample for the cross
/// term (shared across modalities so rows stay paired).
pub struct CadDraws {
    /// `[modality][class]`: n_c x latent_dim standard normals.
    pub z_eps: Vec<Vec<Mat>>,
    /// `[modality][class]`: n_c x d_m standard normals.
    pub resid_eps: Vec<Vec<Mat>>,
    /// `[class]`: n_min row indices into the class block.
    pub subsample: Vec<Vec<usize>>,
}

impl CadDraws {
    pub fn generate(
        rng: &mut Rng,
        class_sizes: &[usize],
        dims: &[usize],
        latent_dim: usize,
    ) -> CadDraws {
        let n_min = class_sizes.iter().copied().min().unwrap_or(0);
        let mut z_eps = Vec::with_capacity(dims.len());
        for _ in dims {
            let mut per_class = Vec::with_capacity(class_sizes.len());
            for &n in class_sizes {
                let data = rng.normal_vec(n * latent_dim);
                per_class.push(Mat::from_vec(n, latent_dim, data).unwrap());
            }
            z_eps.push(per_class);
        }
        let mut resid_eps = Vec::with_capacity(dims.len());
        for &d in dims {
            let mut per_class = Vec::with_capacity(class_sizes.len());
            for &n in class_sizes {
                let data = rng.normal_vec(n * d);
                per_class.push(Mat::from_vec(n, d, data).unwrap());
            }
            resid_eps.push(per_class);
        }
        let subsample = class_sizes.iter().map(|&n| rng.sample_indices(n, n_min)).collect();
        CadDraws { z_eps, resid_eps, subsample }
    }

    pub fn for_batch(rng: &mut Rng, batch: &CadBatch, latent_dim: usize) -> CadDraws {
        let sizes: Vec<usize> = batch.inputs[0].iter().map(|x| x.rows()).collect();
        let dims: Vec<usize> = batch.inputs.iter().map(|per| per[0].cols()).collect();
        CadDraws::generate(rng, &sizes, &dims, latent_dim)
    }
}

/// Gradients of the loss with respect to the per-class latents,
/// `[modality][class]`, same shapes as `CadBatch::latents`.
pub struct CadGrads {
    pub dlatents: Vec<Vec<Mat>>,
}

/// `R_c = X_c - psi(z_c) + eps` with `sigma = alpha * std(X_c - psi(z_c))`.
/// Standalone operation; draws come from the provided stream.
pub fn compute_residual(
    x_c: &Mat,
    z_c: &Mat,
    tower: &ModalityTower,
    alpha: f64,
    rng: &mut Rng,
) -> Result<Mat> {
    let (decoded, _) = tower.psi.forward(z_c)?;
    let resid = x_c.sub(&decoded)?;
    let sigma = alpha * resid.std_all();
    let mut out = resid;
    if sigma != 0.0 {
        for v in out.data_mut() {
            *v += sigma * rng.normal();
        }
    }
    Ok(out)
}

/// Loss, and optionally gradients: parameter gradients accumulate into
/// the towers' `psi`/`rho`, latent gradients are returned. Deterministic
/// given the frozen draws.
pub fn loss_cad(
    towers: &mut [ModalityTower],
    batch: &CadBatch,
    opts: &CadOptions,
    draws: &CadDraws,
    want_grads: bool,
) -> Result<(CadLossParts, Option<CadGrads>)> {
    batch.validate()?;
    let m_count = batch.num_modalities();
    let c_count = batch.num_classes();
    if towers.len() != m_count {
        return Err(MladError::dim("tower count must match batch modalities"));
    }
    let intra_norm = 1.0 / (m_count * c_count) as f64;
    let cross_norm = if c_count > 1 {
        1.0 / (m_count * c_count * (c_count - 1)) as f64
    } else {
        0.0
    };

    let mut intra = 0.0;
    let mut cross = 0.0;
    let mut dlatents: Vec<Vec<Mat>> = Vec::with_capacity(m_count);

    for m in 0..m_count {
        let mut dl_per_class = Vec::with_capacity(c_count);
        for c in 0..c_count {
            let x = &batch.inputs[m][c];
            let z_lat = &batch.latents[m][c];
            let n_c = x.rows();
            let latent_dim = z_lat.cols();

            // fit the class distribution and redraw by reparameterization
            let mu = z_lat.col_means();
            let var_raw = z_lat.col_vars(&mu);
            let var: Vec<f64> = var_raw.iter().map(|v| v.max(VAR_FLOOR)).collect();
            let sigma_z: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            let eps_z = &draws.z_eps[m][c];
            let mut z = Mat::zeros(n_c, latent_dim);
            for r in 0..n_c {
                for j in 0..latent_dim {
                    *z.at_mut(r, j) = mu[j] + sigma_z[j] * eps_z.at(r, j);
                }
            }

            let (decoded, psi_cache) = towers[m].psi.forward(&z)?;
            let diff = decoded.sub(x)?;
            intra += intra_norm * diff.frobenius_sq();

            // residual with scaled noise
            let resid = x.sub(&decoded)?;
            let n_entries = (resid.rows() * resid.cols()) as f64;
            let r_mean = resid.mean_all();
            let s = resid.std_all();
            let eps_r = &draws.resid_eps[m][c];
            let mut r_noised = resid.clone();
            for (v, e) in r_noised.data_mut().iter_mut().zip(eps_r.data()) {
                *v += opts.alpha * s * e;
            }

            let do_cross = opts.include_cross && c_count > 1;
            let sub_c = &draws.subsample[c];
            let r_sub = r_noised.select_rows(sub_c);
            let (t, rho_cache) = if do_cross && opts.decode_residual {
                let (t, cache) = towers[m].rho.forward(&r_sub)?;
                (t, Some(cache))
            } else {
                (r_sub.clone(), None)
            };
            let mut d_t = Mat::zeros(t.rows(), t.cols());
            if do_cross {
                for c_other in 0..c_count {
                    if c_other == c {
                        continue;
                    }
                    let x_other = batch.inputs[m][c_other].select_rows(&draws.subsample[c_other]);
                    let d = t.sub(&x_other)?;
                    cross += cross_norm * d.frobenius_sq();
                    if want_grads {
                        d_t.axpy(2.0 * cross_norm, &d)?;
                    }
                }
            }

            if !want_grads {
                dl_per_class.push(Mat::zeros(n_c, latent_dim));
                continue;
            }

            // ---- backward ----
            let mut d_resid = Mat::zeros(n_c, x.cols());
            if do_cross {
                let d_rsub = match rho_cache {
                    Some(cache) => towers[m].rho.backward(&cache, &d_t)?,
                    None => d_t,
                };
                // scatter subsampled rows back, accumulating duplicates
                let mut d_rfull = Mat::zeros(n_c, x.cols());
                for (k, &row) in sub_c.iter().enumerate() {
                    for (dst, src) in d_rfull.row_mut(row).iter_mut().zip(d_rsub.row(k)) {
                        *dst += src;
                    }
                }
                // noise-scale path: sigma = alpha * std(resid) depends on
                // every residual entry
                let mut dl_ds = 0.0;
                for (dr, e) in d_rfull.data().iter().zip(eps_r.data()) {
                    dl_ds += dr * e;
                }
                dl_ds *= opts.alpha;
                d_resid.axpy(1.0, &d_rfull)?;
                if s > STD_GRAD_FLOOR {
                    let scale = dl_ds / (n_entries * s);
                    for (dst, r) in d_resid.data_mut().iter_mut().zip(resid.data()) {
                        *dst += scale * (r - r_mean);
                    }
                }
            }

            // d(decoded): intra term 2(decoded - x)*norm, minus residual path
            let mut d_decoded = diff.scale(2.0 * intra_norm);
            d_decoded.axpy(-1.0, &d_resid)?;
            let dz = towers[m].psi.backward(&psi_cache, &d_decoded)?;

            // reparameterization backward into the per-sample latents
            let d_mu = dz.col_sums();
            let mut d_sigma = vec![0.0; latent_dim];
            for r in 0..n_c {
                for j in 0..latent_dim {
                    d_sigma[j] += dz.at(r, j) * eps_z.at(r, j);
                }
            }
            let mut dlat = Mat::zeros(n_c, latent_dim);
            let n_f = n_c as f64;
            for j in 0..latent_dim {
                let d_var = if var_raw[j] > VAR_FLOOR {
                    d_sigma[j] / (2.0 * sigma_z[j])
                } else {
                    0.0 // floored variance: constant w.r.t. the latents
                };
                for r in 0..n_c {
                    *dlat.at_mut(r, j) =
                        d_mu[j] / n_f + d_var * 2.0 * (z_lat.at(r, j) - mu[j]) / n_f;
                }
            }
            dl_per_class.push(dlat);
        }
        dlatents.push(dl_per_class);
    }

    let parts = CadLossParts { intra, cross, total: intra + cross };
    if !parts.total.is_finite() {
        return Err(MladError::numerical(format!("CAD loss is not finite: {parts:?}")));
    }
    let grads = want_grads.then_some(CadGrads { dlatents });
    Ok((parts, grads))
}

/// Convenience wrapper drawing fresh randomness from `rng`.
pub fn loss_cad_sampled(
    towers: &mut [ModalityTower],
    batch: &CadBatch,
    opts: &CadOptions,
    rng: &mut Rng,
    want_grads: bool,
) -> Result<(CadLossParts, Option<CadGrads>)> {
    let latent_dim = towers[0].cfg.latent_dim;
    let draws = CadDraws::for_batch(rng, batch, latent_dim);
    loss_cad(towers, batch, opts, &draws, want_grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cad::tower::TowerConfig;
    use crate::numerics::mat::tests::random_mat;

    fn tiny_tower(input_dim: usize, latent_dim: usize, rng: &mut Rng) -> ModalityTower {
        ModalityTower::new(
            TowerConfig {
                input_dim,
                depth: 2,
                hidden_width: 4,
                latent_dim,
                num_classes: 2,
                psi_hidden: 5,
                rho_hidden: 5,
            },
            rng,
        )
        .unwrap()
    }

    fn tiny_batch(rng: &mut Rng, m: usize, c: usize, n: usize, d: usize, lat: usize) -> CadBatch {
        let inputs = (0..m)
            .map(|_| (0..c).map(|_| random_mat(rng, n, d)).collect())
            .collect();
        let latents = (0..m)
            .map(|_| (0..c).map(|_| random_mat(rng, n, lat)).collect())
            .collect();
        CadBatch { inputs, latents }
    }

    /// Naive loop reimplementation consuming the same frozen draws.
    fn oracle_loss(
        towers: &[ModalityTower],
        batch: &CadBatch,
        opts: &CadOptions,
        draws: &CadDraws,
    ) -> CadLossParts {
        let m_count = batch.num_modalities();
        let c_count = batch.num_classes();
        let n_min = batch.min_class_size();
        let mlp = |l1: &crate::numerics::Linear, l2: &crate::numerics::Linear, v: &[f64]| {
            let mut h = vec![0.0; l1.out_dim()];
            for (o, hv) in h.iter_mut().enumerate() {
                let mut s = l1.b.value.at(0, o);
                for (i, &x) in v.iter().enumerate() {
                    s += l1.w.value.at(o, i) * x;
                }
                *hv = s.max(0.0);
            }
            let mut out = vec![0.0; l2.out_dim()];
            for (o, ov) in out.iter_mut().enumerate() {
                let mut s = l2.b.value.at(0, o);
                for (i, &x) in h.iter().enumerate() {
                    s += l2.w.value.at(o, i) * x;
                }
                *ov = s;
            }
            out
        };
        let mut intra = 0.0;
        let mut cross = 0.0;
        for m in 0..m_count {
            for c in 0..c_count {
                let x = &batch.inputs[m][c];
                let zl = &batch.latents[m][c];
                let (n, lat) = (zl.rows(), zl.cols());
                // fit
                let mut mu = vec![0.0; lat];
                for r in 0..n {
                    for j in 0..lat {
                        mu[j] += zl.at(r, j) / n as f64;
                    }
                }
                let mut var = vec![0.0; lat];
                for r in 0..n {
                    for j in 0..lat {
                        var[j] += (zl.at(r, j) - mu[j]).powi(2) / n as f64;
                    }
                }
                // decode draws, accumulate intra and residual
                let mut resid = vec![vec![0.0; x.cols()]; n];
                for r in 0..n {
                    let z: Vec<f64> = (0..lat)
                        .map(|j| mu[j] + var[j].max(VAR_FLOOR).sqrt() * draws.z_eps[m][c].at(r, j))
                        .collect();
                    let dec = mlp(&towers[m].psi.l1, &towers[m].psi.l2, &z);
                    for j in 0..x.cols() {
                        intra += (dec[j] - x.at(r, j)).powi(2) / (m_count * c_count) as f64;
                        resid[r][j] = x.at(r, j) - dec[j];
                    }
                }
                if !opts.include_cross || c_count < 2 {
                    continue;
                }
                // scalar std over all residual entries
                let flat: Vec<f64> = resid.iter().flatten().copied().collect();
                let mean = flat.iter().sum::<f64>() / flat.len() as f64;
                let s = (flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / flat.len() as f64)
                    .sqrt();
                for (r, row) in resid.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += opts.alpha * s * draws.resid_eps[m][c].at(r, j);
                    }
                }
                for k in 0..n_min {
                    let rrow = &resid[draws.subsample[c][k]];
                    let t = if opts.decode_residual {
                        mlp(&towers[m].rho.l1, &towers[m].rho.l2, rrow)
                    } else {
                        rrow.clone()
                    };
                    for c2 in 0..c_count {
                        if c2 == c {
                            continue;
                        }
                        let xrow = batch.inputs[m][c2].row(draws.subsample[c2][k]);
                        for j in 0..x.cols() {
                            cross += (t[j] - xrow[j]).powi(2)
                                / (m_count * c_count * (c_count - 1)) as f64;
                        }
                    }
                }
            }
        }
        CadLossParts { intra, cross, total: intra + cross }
    }

    #[test]
    fn matches_direct_summation_oracle() {
        let mut rng = Rng::seed_from(42);
        for case in 0..10 {
            let mut towers =
                vec![tiny_tower(3, 2, &mut rng), tiny_tower(4, 2, &mut rng)];
            let mut batch = tiny_batch(&mut rng, 2, 2, 4, 3, 2);
            batch.inputs[1] = vec![random_mat(&mut rng, 4, 4), random_mat(&mut rng, 4, 4)];
            let opts = CadOptions {
                alpha: 0.3,
                include_cross: true,
                decode_residual: case % 2 == 0,
            };
            let mut draw_rng = Rng::seed_from(100 + case);
            let draws = CadDraws::for_batch(&mut draw_rng, &batch, 2);
            let (parts, _) = loss_cad(&mut towers, &batch, &opts, &draws, false).unwrap();
            let expect = oracle_loss(&towers, &batch, &opts, &draws);
            assert!((parts.intra - expect.intra).abs() < 1e-10, "case {case}");
            assert!((parts.cross - expect.cross).abs() < 1e-10, "case {case}");
            assert!((parts.total - (parts.intra + parts.cross)).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_constant_autoencoder_reaches_zero() {
        let mut rng = Rng::seed_from(7);
        let mut tower = tiny_tower(3, 2, &mut rng);
        // psi and rho output the constant row x0; all inputs equal x0
        let x0 = [1.5, -0.5, 2.0];
        tower.psi.l1.w.value.fill(0.0);
        tower.psi.l1.b.value.fill(0.0);
        tower.psi.l2.w.value.fill(0.0);
        for (j, v) in x0.iter().enumerate() {
            *tower.psi.l2.b.value.at_mut(0, j) = *v;
        }
        tower.rho.l1.w.value.fill(0.0);
        tower.rho.l1.b.value.fill(0.0);
        tower.rho.l2.w.value.fill(0.0);
        for (j, v) in x0.iter().enumerate() {
            *tower.rho.l2.b.value.at_mut(0, j) = *v;
        }
        let rows = Mat::from_rows(&[x0.to_vec(), x0.to_vec()]).unwrap();
        let batch = CadBatch {
            inputs: vec![vec![rows.clone(), rows.clone()]],
            latents: vec![vec![random_mat(&mut rng, 2, 2), random_mat(&mut rng, 2, 2)]],
        };
        let opts = CadOptions { alpha: 0.0, include_cross: true, decode_residual: true };
        let (parts, _) =
            loss_cad_sampled(&mut [tower], &batch, &opts, &mut Rng::seed_from(1), false).unwrap();
        assert!(parts.total < 1e-20, "total {}", parts.total);
    }

    #[test]
    fn single_class_cross_is_zero() {
        let mut rng = Rng::seed_from(8);
        let mut towers = vec![tiny_tower(3, 2, &mut rng)];
        let batch = tiny_batch(&mut rng, 1, 1, 4, 3, 2);
        let opts = CadOptions::default();
        let (parts, _) =
            loss_cad_sampled(&mut towers, &batch, &opts, &mut Rng::seed_from(1), false).unwrap();
        assert_eq!(parts.cross, 0.0);
        assert!(parts.intra > 0.0);
    }

    #[test]
    fn class_permutation_invariance() {
        let mut rng = Rng::seed_from(9);
        let mut towers = vec![tiny_tower(3, 2, &mut rng)];
        let batch = tiny_batch(&mut rng, 1, 3, 4, 3, 2);
        let mut draw_rng = Rng::seed_from(5);
        let draws = CadDraws::for_batch(&mut draw_rng, &batch, 2);
        let opts = CadOptions { alpha: 0.0, include_cross: true, decode_residual: true };
        let (parts, _) = loss_cad(&mut towers, &batch, &opts, &draws, false).unwrap();

        // permute class order along with the class-indexed draws
        let perm = [2usize, 0, 1];
        let batch2 = CadBatch {
            inputs: vec![perm.iter().map(|&c| batch.inputs[0][c].clone()).collect()],
            latents: vec![perm.iter().map(|&c| batch.latents[0][c].clone()).collect()],
        };
        let draws2 = CadDraws {
            z_eps: vec![perm.iter().map(|&c| draws.z_eps[0][c].clone()).collect()],
            resid_eps: vec![perm.iter().map(|&c| draws.resid_eps[0][c].clone()).collect()],
            subsample: perm.iter().map(|&c| draws.subsample[c].clone()).collect(),
        };
        let (parts2, _) = loss_cad(&mut towers, &batch2, &opts, &draws2, false).unwrap();
        assert!((parts.total - parts2.total).abs() < 1e-10);
    }

    #[test]
    fn missing_class_is_error() {
        let mut rng = Rng::seed_from(10);
        let mut towers = vec![tiny_tower(3, 2, &mut rng)];
        let mut batch = tiny_batch(&mut rng, 1, 2, 4, 3, 2);
        batch.inputs[0][1] = Mat::zeros(0, 3);
        batch.latents[0][1] = Mat::zeros(0, 2);
        let err =
            loss_cad_sampled(&mut towers, &batch, &CadOptions::default(), &mut rng, false);
        assert!(err.is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::seed_from(11);
        let mut towers = vec![tiny_tower(3, 2, &mut rng)];
        let batch = tiny_batch(&mut rng, 1, 2, 3, 3, 2);
        let opts = CadOptions { alpha: 0.4, include_cross: true, decode_residual: true };
        let mut draw_rng = Rng::seed_from(17);
        let draws = CadDraws::for_batch(&mut draw_rng, &batch, 2);

        for p in towers[0].params_mut() {
            p.zero_grad();
        }
        let (_, grads) = loss_cad(&mut towers, &batch, &opts, &draws, true).unwrap();
        let grads = grads.unwrap();

        let h = 1e-6;
        // psi weight coordinate
        {
            let ana = towers[0].psi.l1.w.grad.at(1, 1);
            let orig = towers[0].psi.l1.w.value.at(1, 1);
            *towers[0].psi.l1.w.value.at_mut(1, 1) = orig + h;
            let (lp, _) = loss_cad(&mut towers, &batch, &opts, &draws, false).unwrap();
            *towers[0].psi.l1.w.value.at_mut(1, 1) = orig - h;
            let (lm, _) = loss_cad(&mut towers, &batch, &opts, &draws, false).unwrap();
            *towers[0].psi.l1.w.value.at_mut(1, 1) = orig;
            let num = (lp.total - lm.total) / (2.0 * h);
            assert!((num - ana).abs() < 1e-4 * num.abs().max(1.0), "psi {num} vs {ana}");
        }
        // rho weight coordinate
        {
            let ana = towers[0].rho.l2.w.grad.at(0, 2);
            let orig = towers[0].rho.l2.w.value.at(0, 2);
            *towers[0].rho.l2.w.value.at_mut(0, 2) = orig + h;
            let (lp, _) = loss_cad(&mut towers, &batch, &opts, &draws, false).unwrap();
            *towers[0].rho.l2.w.value.at_mut(0, 2) = orig - h;
            let (lm, _) = loss_cad(&mut towers, &batch, &opts, &draws, false).unwrap();
            *towers[0].rho.l2.w.value.at_mut(0, 2) = orig;
            let num = (lp.total - lm.total) / (2.0 * h);
            assert!((num - ana).abs() < 1e-4 * num.abs().max(1.0), "rho {num} vs {ana}");
        }
        // latent coordinate (flows through fit + reparameterization + std path)
        {
            let ana = grads.dlatents[0][1].at(2, 0);
            let mut b2 = CadBatch {
                inputs: batch.inputs.clone(),
                latents: batch.latents.clone(),
            };
            *b2.latents[0][1].at_mut(2, 0) += h;
            let (lp, _) = loss_cad(&mut towers, &b2, &opts, &draws, false).unwrap();
            *b2.latents[0][1].at_mut(2, 0) -= 2.0 * h;
            let (lm, _) = loss_cad(&mut towers, &b2, &opts, &draws, false).unwrap();
            let num = (lp.total - lm.total) / (2.0 * h);
            assert!((num - ana).abs() < 1e-4 * num.abs().max(1.0), "latent {num} vs {ana}");
        }
    }

    #[test]
    fn residual_noise_scale_tracks_residual_std() {
        let mut rng = Rng::seed_from(12);
        let tower = tiny_tower(4, 2, &mut rng);
        let x = random_mat(&mut rng, 50, 4).scale(3.0);
        let z = random_mat(&mut rng, 50, 2);
        // alpha = 0: exact residual
        let r0 = compute_residual(&x, &z, &tower, 0.0, &mut Rng::seed_from(1)).unwrap();
        let (dec, _) = tower.psi.forward(&z).unwrap();
        assert_eq!(r0, x.sub(&dec).unwrap());
        // alpha = 1: added noise std matches residual std within 10%
        let base = x.sub(&dec).unwrap();
        let s = base.std_all();
        let big_x = {
            let mut rows = Vec::new();
            for _ in 0..200 {
                for i in 0..50 {
                    rows.push(x.row(i).to_vec());
                }
            }
            Mat::from_rows(&rows).unwrap()
        };
        let big_z = {
            let mut rows = Vec::new();
            for _ in 0..200 {
                for i in 0..50 {
                    rows.push(z.row(i).to_vec());
                }
            }
            Mat::from_rows(&rows).unwrap()
        };
        let r1 = compute_residual(&big_x, &big_z, &tower, 1.0, &mut Rng::seed_from(2)).unwrap();
        let (dec_big, _) = tower.psi.forward(&big_z).unwrap();
        let noise = r1.sub(&big_x.sub(&dec_big).unwrap()).unwrap();
        let noise_std = noise.std_all();
        // the replicated matrix has the same entrywise std as the base
        let s_big = big_x.sub(&dec_big).unwrap().std_all();
        assert!((s_big - s).abs() < 1e-9);
        assert!((noise_std - s).abs() < 0.1 * s, "noise std {noise_std} vs residual std {s}");
    }
}
