//! The full pipeline: staged training (phase 1, Q-learning, priors,
//! phase 2), prediction with diagnostics, and data preparation.

use crate::cad::{
    choose_exit_batch, phase1_train, qlearn_train, ClassLatentTable, ExitPolicy, ModalityTower,
    PerDepthTable, TowerConfig,
};
use crate::config::{DatasetSource, ExperimentConfig, NoiseApply};
use crate::data::{
    inject_noise, load_dataset, stratified_split_indices, synth_generate, FeatureRanges,
    MultimodalDataset, NoiseKind, NoiseSpec, Normalizer,
};
use crate::error::{MladError, Result};
use crate::numerics::{ensure_finite_loss, Mat, Rng};
use crate::sad::{
    fit_entropy_gmm, fit_prior, lowest_entropy_half, phase2_batch, phase2_train,
    posterior_entropy, rectify, select_low_confusion, ClassifierHead, GmmSplit, ModalityPrior,
    Phase2State, Rectifier, RectifyFlags,
};
use serde::{Deserialize, Serialize};

pub use crate::data::stratified_split;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlags {
    pub phase1: bool,
    pub qlearn: bool,
    pub priors: bool,
    pub phase2: bool,
}

impl StageFlags {
    /// Stages must form a prefix chain.
    pub fn validate_chain(&self) -> Result<()> {
        let order = [self.phase1, self.qlearn, self.priors, self.phase2];
        if order.windows(2).any(|w| !w[0] && w[1]) {
            return Err(MladError::StageChain(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Splits with normalization applied, plus what eval-time corruption
/// needs: the raw test split and the raw train feature ranges.
pub struct PreparedData {
    pub train: MultimodalDataset,
    pub val: MultimodalDataset,
    pub test: MultimodalDataset,
    pub raw_test: MultimodalDataset,
    pub ranges: FeatureRanges,
    pub normalizer: Normalizer,
}

/// Loads or generates the dataset, splits it, applies the configured
/// noise in raw feature space, and normalizes with train-split
/// statistics.
pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let raw = match &config.dataset {
        DatasetSource::Manifest(path) => load_dataset(path)?,
        DatasetSource::Synth(spec) => synth_generate(spec)?.0,
    };
    let (tr_idx, va_idx, te_idx) =
        stratified_split_indices(&raw, config.split.train_frac, config.split.val_frac, seed)?;
    let mut raw_train = raw.subset(&tr_idx);
    let raw_val = raw.subset(&va_idx);
    let raw_test = raw.subset(&te_idx);

    let mut test_for_eval = raw_test.clone();
    if let Some(noise) = &config.noise {
        let spec = NoiseSpec {
            kind: noise.kind,
            sigma: noise.sigma,
            fraction: noise.fraction,
            target_modalities: noise.target_modalities.clone(),
            seed,
            seed_stream: "noise".into(),
        };
        // noise is applied in raw space; salt-pepper levels come from the
        // train split the model actually sees
        if noise.apply_to == NoiseApply::TrainAndTest {
            let train_ranges = FeatureRanges::from_dataset(&raw_train);
            raw_train = inject_noise(&raw_train, &spec, &train_ranges)?;
        }
        let ranges = FeatureRanges::from_dataset(&raw_train);
        test_for_eval = inject_noise(&raw_test, &spec, &ranges)?;
    }

    let ranges = FeatureRanges::from_dataset(&raw_train);
    let normalizer = Normalizer::fit(&raw_train);
    Ok(PreparedData {
        train: normalizer.apply(&raw_train)?,
        val: normalizer.apply(&raw_val)?,
        test: normalizer.apply(&test_for_eval)?,
        raw_test,
        ranges,
        normalizer,
    })
}

impl PreparedData {
    /// Fresh corruption of the raw test split at another noise level,
    /// normalized with the stored train statistics. The corrupted sample
    /// set is identical across sigmas and kinds for a fixed seed.
    pub fn corrupted_test(
        &self,
        kind: NoiseKind,
        sigma: f64,
        fraction: f64,
        targets: Option<Vec<usize>>,
        seed: u64,
    ) -> Result<MultimodalDataset> {
        let spec = NoiseSpec {
            kind,
            sigma,
            fraction,
            target_modalities: targets,
            seed,
            seed_stream: "noise".into(),
        };
        let corrupted = inject_noise(&self.raw_test, &spec, &self.ranges)?;
        self.normalizer.apply(&corrupted)
    }
}

/// Per-sample diagnostics of one evaluated batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `[modality][sample]` exit depths (1-based).
    pub exit_depths: Vec<Vec<usize>>,
    /// `[modality][sample]` posterior entropies.
    pub entropies: Vec<Vec<f64>>,
    /// `[sample][target][source]` entropy gates.
    pub gates: Vec<Vec<Vec<f64>>>,
    /// Attention maps of the first few samples:
    /// `[sample][target][source]` -> row-major map.
    pub attention: Vec<Vec<Vec<Option<Vec<Vec<f64>>>>>>,
    /// `[modality][sample]` latent embeddings (for external t-SNE).
    pub latents: Vec<Vec<Vec<f64>>>,
}

pub struct BatchPrediction {
    pub preds: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

/// The staged MLAD model.
pub struct MladModel {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub num_classes: usize,
    pub towers: Vec<ModalityTower>,
    pub stages: StageFlags,
    pub de_enabled: bool,
    pub use_rectification: bool,
    pub depth_cache: Option<PerDepthTable>,
    pub table: Option<ClassLatentTable>,
    pub policy: Option<ExitPolicy>,
    pub gmm_splits: Vec<GmmSplit>,
    pub priors: Vec<ModalityPrior>,
    pub rectifier: Option<Rectifier>,
    pub head: Option<ClassifierHead>,
    pub loss_phase1: Vec<f64>,
    pub loss_phase2: Vec<f64>,
}

impl MladModel {
    pub fn init(config: &ExperimentConfig, dims: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        let towers = dims
            .iter()
            .enumerate()
            .map(|(m, &input_dim)| {
                let mut rng = Rng::substream(seed, "init/tower", m as u64);
                ModalityTower::new(
                    TowerConfig {
                        input_dim,
                        depth: config.model.depth,
                        hidden_width: config.model.hidden_width,
                        latent_dim: config.model.latent_dim,
                        num_classes,
                        psi_hidden: config.model.psi_hidden,
                        rho_hidden: config.model.rho_hidden,
                    },
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MladModel {
            seed,
            dims: dims.to_vec(),
            num_classes,
            towers,
            stages: StageFlags::default(),
            de_enabled: config.ablation.de,
            use_rectification: config.ablation.cmr,
            depth_cache: None,
            table: None,
            policy: None,
            gmm_splits: Vec::new(),
            priors: Vec::new(),
            rectifier: None,
            head: None,
            loss_phase1: Vec::new(),
            loss_phase2: Vec::new(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.towers[0].cfg.latent_dim
    }

    pub fn depth(&self) -> usize {
        self.towers[0].depth()
    }

    pub fn run_phase1(&mut self, train: &MultimodalDataset, config: &ExperimentConfig) -> Result<()> {
        let mut cfg = config.phase1.clone();
        cfg.cad = config.effective_cad_options();
        let out = phase1_train(&mut self.towers, train, &cfg, self.seed)?;
        self.loss_phase1 = out.loss_trajectory;
        self.depth_cache = Some(out.depth_cache);
        self.table = Some(out.final_table);
        self.stages.phase1 = true;
        Ok(())
    }

    pub fn run_qlearn(&mut self, train: &MultimodalDataset, config: &ExperimentConfig) -> Result<()> {
        if !self.stages.phase1 {
            return Err(MladError::StageChain("qlearn requires phase1".into()));
        }
        let cache = self.depth_cache.as_ref().expect("phase1 cache");
        let depth = self.depth();
        let exit_depths = if self.de_enabled {
            let mut policy =
                ExitPolicy::new(self.towers.len(), depth, self.latent_dim(), self.seed);
            let mut cfg = config.qlearn.clone();
            cfg.cad = config.effective_cad_options();
            let out = qlearn_train(&mut self.towers, &mut policy, train, cache, &cfg, self.seed)?;
            self.policy = Some(policy);
            out.exit_depths
        } else {
            // dynamic exits disabled: everything leaves the deepest layer
            vec![vec![depth; self.num_classes]; self.towers.len()]
        };
        self.table = Some(cache.at_depths(&exit_depths, train.class_priors()));
        self.stages.qlearn = true;
        Ok(())
    }

    /// Latents at the chosen exit depths plus posterior entropies for a
    /// dataset, per modality.
    pub fn exit_latents(
        &self,
        ds: &MultimodalDataset,
    ) -> Result<(Vec<Vec<usize>>, Vec<Mat>, Vec<Vec<f64>>)> {
        let table = self
            .table
            .as_ref()
            .ok_or_else(|| MladError::StageChain("class table not fitted".into()))?;
        let mut depths = Vec::with_capacity(self.towers.len());
        let mut latents = Vec::with_capacity(self.towers.len());
        let mut entropies = Vec::with_capacity(self.towers.len());
        for (m, tower) in self.towers.iter().enumerate() {
            let (d, z) = choose_exit_batch(tower, self.policy.as_ref(), m, &ds.features[m])?;
            let h: Vec<f64> = (0..z.rows())
                .map(|i| posterior_entropy(z.row(i), table, m))
                .collect::<Result<_>>()?;
            depths.push(d);
            latents.push(z);
            entropies.push(h);
        }
        Ok((depths, latents, entropies))
    }

    pub fn run_priors(&mut self, train: &MultimodalDataset, config: &ExperimentConfig) -> Result<()> {
        if !self.stages.qlearn {
            return Err(MladError::StageChain("priors require qlearn".into()));
        }
        let (_, latents, entropies) = self.exit_latents(train)?;
        let mut splits = Vec::with_capacity(self.towers.len());
        let mut priors = Vec::with_capacity(self.towers.len());
        for m in 0..self.towers.len() {
            let split = fit_entropy_gmm(&entropies[m])?;
            let low = match select_low_confusion(&entropies[m], &split) {
                Ok((low, _)) => low,
                Err(MladError::EmptyLowConfusionSet) => lowest_entropy_half(&entropies[m]),
                Err(e) => return Err(e),
            };
            let h_low: Vec<f64> = low.iter().map(|&i| entropies[m][i]).collect();
            priors.push(fit_prior(
                &latents[m].select_rows(&low),
                &h_low,
                config.sad.cov_ridge,
            )?);
            splits.push(split);
        }
        self.gmm_splits = splits;
        self.priors = priors;
        self.stages.priors = true;
        Ok(())
    }

    fn rectify_flags(&self, config: &ExperimentConfig) -> RectifyFlags {
        RectifyFlags {
            gate_eps: config.sad.gate_eps,
            additive_gate: config.sad.additive_gate,
            literal_frame: config.sad.literal_frame,
            reweight: config.effective_reweight(),
        }
    }

    pub fn run_phase2(&mut self, train: &MultimodalDataset, config: &ExperimentConfig) -> Result<()> {
        if !self.stages.priors {
            return Err(MladError::StageChain("phase2 requires priors".into()));
        }
        let mut rectifier = Rectifier::new(
            self.towers.len(),
            self.latent_dim(),
            self.rectify_flags(config),
            self.seed,
        );
        let mut head = ClassifierHead::new(
            self.towers.len(),
            self.latent_dim(),
            self.num_classes,
            self.seed,
        );
        let cfg = &config.sad.phase2;
        let mut cfg = cfg.clone();
        cfg.use_rectification = self.use_rectification;
        if cfg.joint_finetune {
            self.loss_phase2 =
                self.phase2_joint(train, config, &mut rectifier, &mut head, &cfg)?;
        } else {
            let (_, latents, entropies) = self.exit_latents(train)?;
            let state = Phase2State {
                latents: &latents,
                entropies: &entropies,
                labels: &train.labels,
            };
            self.loss_phase2 =
                phase2_train(&mut rectifier, &mut head, &self.priors, &state, &cfg, self.seed)?;
        }
        self.rectifier = Some(rectifier);
        self.head = Some(head);
        self.stages.phase2 = true;
        Ok(())
    }

    /// Joint fine-tuning driver: towers keep training under the phase-2
    /// loss; the class table and priors are refreshed every K epochs so
    /// the likelihood anchor does not go stale.
    fn phase2_joint(
        &mut self,
        train: &MultimodalDataset,
        config: &ExperimentConfig,
        rectifier: &mut Rectifier,
        head: &mut ClassifierHead,
        cfg: &crate::sad::Phase2Config,
    ) -> Result<Vec<f64>> {
        let n = train.len();
        let depth = self.depth();
        let latent_dim = self.latent_dim();
        let mut shuffle_rng = Rng::stream(self.seed, "phase2/shuffle");
        let mut lr = cfg.lr;
        let mut trajectory = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            if cfg.lr_decay_milestones.contains(&epoch) {
                lr *= cfg.lr_decay_factor;
            }
            if epoch > 0 && cfg.prior_refresh_every > 0 && epoch % cfg.prior_refresh_every == 0 {
                self.refresh_table_and_priors(train, config)?;
            }
            let order = shuffle_rng.permutation(n);
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                // fresh latents for this batch
                let mut fwds = Vec::with_capacity(self.towers.len());
                let mut latents = Vec::with_capacity(self.towers.len());
                let mut entropies = Vec::with_capacity(self.towers.len());
                let mut depths_per_m = Vec::with_capacity(self.towers.len());
                for (m, tower) in self.towers.iter().enumerate() {
                    let x = train.features[m].select_rows(chunk);
                    let fwd = tower.forward_full(&x)?;
                    let mut depths = vec![depth; chunk.len()];
                    if let Some(policy) = &self.policy {
                        for (bi, d) in depths.iter_mut().enumerate() {
                            for cand in 1..depth {
                                if policy.prefers_exit(m, cand, fwd.latents[cand - 1].row(bi))? {
                                    *d = cand;
                                    break;
                                }
                            }
                        }
                    }
                    let mut z = Mat::zeros(chunk.len(), latent_dim);
                    for (bi, &d) in depths.iter().enumerate() {
                        z.row_mut(bi).copy_from_slice(fwd.latents[d - 1].row(bi));
                    }
                    let table = self.table.as_ref().expect("table");
                    let h: Vec<f64> = (0..z.rows())
                        .map(|i| posterior_entropy(z.row(i), table, m))
                        .collect::<Result<_>>()?;
                    fwds.push(fwd);
                    latents.push(z);
                    entropies.push(h);
                    depths_per_m.push(depths);
                }
                let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
                let state = Phase2State {
                    latents: &latents,
                    entropies: &entropies,
                    labels: &labels,
                };
                let rows: Vec<usize> = (0..chunk.len()).collect();
                let res = phase2_batch(
                    rectifier,
                    head,
                    &self.priors,
                    &state,
                    &rows,
                    cfg.use_rectification,
                    true,
                    true,
                )?;
                epoch_loss += ensure_finite_loss(res.loss, "phase 2 joint")?;
                batches += 1;
                let dlatents = res.dlatents.expect("dz requested");
                for (m, tower) in self.towers.iter_mut().enumerate() {
                    let mut per_depth: Vec<Option<Mat>> = vec![None; depth];
                    for (bi, &d) in depths_per_m[m].iter().enumerate() {
                        let slot = per_depth[d - 1]
                            .get_or_insert_with(|| Mat::zeros(chunk.len(), latent_dim));
                        slot.row_mut(bi).copy_from_slice(dlatents[m].row(bi));
                    }
                    tower.backward(&fwds[m], &per_depth)?;
                    crate::numerics::adam_step_all(
                        &mut tower.params_mut(),
                        lr,
                        cfg.weight_decay,
                    )?;
                }
                crate::numerics::adam_step_all(&mut rectifier.params_mut(), lr, cfg.weight_decay)?;
                crate::numerics::adam_step_all(&mut head.params_mut(), lr, cfg.weight_decay)?;
            }
            trajectory.push(epoch_loss / batches.max(1) as f64);
        }
        Ok(trajectory)
    }

    /// Refits the class table at the stored exit depths and rebuilds the
    /// priors from the current latents.
    fn refresh_table_and_priors(
        &mut self,
        train: &MultimodalDataset,
        config: &ExperimentConfig,
    ) -> Result<()> {
        let exit_depths = self.table.as_ref().expect("table").exit_depths.clone();
        let cache = PerDepthTable::fit(&self.towers, train)?;
        self.table = Some(cache.at_depths(&exit_depths, train.class_priors()));
        self.depth_cache = Some(cache);
        let (_, latents, entropies) = self.exit_latents(train)?;
        for m in 0..self.towers.len() {
            let split = fit_entropy_gmm(&entropies[m])?;
            let low = match select_low_confusion(&entropies[m], &split) {
                Ok((low, _)) => low,
                Err(MladError::EmptyLowConfusionSet) => lowest_entropy_half(&entropies[m]),
                Err(e) => return Err(e),
            };
            let h_low: Vec<f64> = low.iter().map(|&i| entropies[m][i]).collect();
            self.priors[m] =
                fit_prior(&latents[m].select_rows(&low), &h_low, config.sad.cov_ridge)?;
            self.gmm_splits[m] = split;
        }
        Ok(())
    }

    pub fn train_all(&mut self, train: &MultimodalDataset, config: &ExperimentConfig) -> Result<()> {
        self.run_phase1(train, config)?;
        self.run_qlearn(train, config)?;
        self.run_priors(train, config)?;
        self.run_phase2(train, config)
    }

    /// Full-pipeline prediction with diagnostics. `max_attention` bounds
    /// how many samples keep their attention maps.
    pub fn predict_batch(
        &self,
        ds: &MultimodalDataset,
        max_attention: usize,
    ) -> Result<BatchPrediction> {
        if !self.stages.phase2 {
            return Err(MladError::StageChain("predict requires a complete model".into()));
        }
        let head = self.head.as_ref().expect("head");
        let rectifier = self.rectifier.as_ref().expect("rectifier");
        let (depths, latents, entropies) = self.exit_latents(ds)?;
        let m_count = self.towers.len();
        let latent_dim = self.latent_dim();
        let n = ds.len();

        let mut concat = Mat::zeros(n, m_count * latent_dim);
        let mut gates_out = Vec::with_capacity(n);
        let mut attention_out = Vec::new();
        for i in 0..n {
            let z: Vec<Vec<f64>> = (0..m_count).map(|m| latents[m].row(i).to_vec()).collect();
            if self.use_rectification {
                let h: Vec<f64> = (0..m_count).map(|m| entropies[m][i]).collect();
                let (out, _) = rectify(&z, &h, &self.priors, rectifier)?;
                for (m, zm) in out.rectified.iter().enumerate() {
                    concat.row_mut(i)[m * latent_dim..(m + 1) * latent_dim].copy_from_slice(zm);
                }
                gates_out.push(out.gates);
                if i < max_attention {
                    attention_out.push(
                        out.attention
                            .iter()
                            .map(|row| {
                                row.iter()
                                    .map(|a| {
                                        a.as_ref().map(|m| {
                                            (0..m.rows())
                                                .map(|r| m.row(r).to_vec())
                                                .collect::<Vec<_>>()
                                        })
                                    })
                                    .collect()
                            })
                            .collect(),
                    );
                }
            } else {
                for (m, zm) in z.iter().enumerate() {
                    concat.row_mut(i)[m * latent_dim..(m + 1) * latent_dim].copy_from_slice(zm);
                }
                gates_out.push(vec![vec![0.0; m_count]; m_count]);
            }
        }
        let logits_mat = head.linear.forward(&concat)?;
        let probs_mat = logits_mat.softmax_rows();
        let mut preds = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let row = logits_mat.row(i);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            preds.push(pred);
            logits.push(row.to_vec());
            probs.push(probs_mat.row(i).to_vec());
        }
        let diagnostics = Diagnostics {
            exit_depths: depths,
            entropies,
            gates: gates_out,
            attention: attention_out,
            latents: latents
                .iter()
                .map(|z| (0..z.rows()).map(|i| z.row(i).to_vec()).collect())
                .collect(),
        };
        Ok(BatchPrediction { preds, logits, probs, diagnostics })
    }

    /// Single-sample prediction: (class, logits, diagnostics).
    pub fn predict(&self, ds: &MultimodalDataset, index: usize) -> Result<(usize, Vec<f64>, Diagnostics)> {
        let one = ds.subset(&[index]);
        let batch = self.predict_batch(&one, 1)?;
        Ok((batch.preds[0], batch.logits[0].clone(), batch.diagnostics))
    }
}

/// Prepares the data and trains every stage for one seed.
pub fn train_full(config: &ExperimentConfig, seed: u64) -> Result<(MladModel, PreparedData)> {
    let prep = prepare_data(config, seed)?;
    let mut model = MladModel::init(config, &prep.train.dims(), prep.train.num_classes, seed)?;
    model.train_all(&prep.train, config)?;
    Ok((model, prep))
}
