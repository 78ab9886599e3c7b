use mlad_core::cad::*;
use mlad_core::config::*;
use mlad_core::model::*;

fn depth_config(within: f64, scale: f64, sep: f64) -> ExperimentConfig {
    let json = format!(r#"{{
      "dataset": {{"synth": {{
        "num_classes": 3, "num_modalities": 2, "dims": [16, 16],
        "samples_per_class": 60, "depth_profile": [1, 3, 3],
        "class_separation": {sep}, "within_class_std": {within}, "seed": 77}}}},
      "model": {{"depth": 4, "hidden_width": 32, "latent_dim": 16, "psi_hidden": 32, "rho_hidden": 48}},
      "phase1": {{"epochs": 60, "batch_size": 45, "lr": 0.01, "weight_decay": 0.0001,
                 "lr_decay_factor": 0.2, "cad": {{"alpha": 0.1, "include_cross": true, "decode_residual": true}},
                 "cache_refresh_every": 5}},
      "qlearn": {{"passes": 60, "gamma": 0.9, "eps_start": 0.9, "eps_end": 0.1, "lr": 0.01,
                 "calibration_epochs": 30, "calibration_lr": 0.003,
                 "reward_loss_scale": {scale}, "cad": {{"alpha": 0.1, "include_cross": true, "decode_residual": true}}}},
      "sad": {{"phase2": {{"epochs": 40, "batch_size": 48, "lr": 0.003, "weight_decay": 0.0001,
              "lr_decay_factor": 0.2, "use_rectification": true, "joint_finetune": false, "prior_refresh_every": 5}}}},
      "seeds": [1]
    }}"#);
    serde_json::from_str(&json).unwrap()
}

fn main() {
    for (within, scale, sep) in [(1.0, 1.0, 6.0), (1.5, 1.0, 6.0), (2.0, 1.0, 5.0)] {
        println!("== within={within} scale={scale} sep={sep}");
        for seed in [1u64, 2, 3, 4, 5] {
            let config = depth_config(within, scale, sep);
            let prep = prepare_data(&config, seed).unwrap();
            let mut model = MladModel::init(&config, &prep.train.dims(), prep.train.num_classes, seed).unwrap();
            model.run_phase1(&prep.train, &config).unwrap();
            // replicate what run_qlearn does, but print the post-calibration rewards
            let mut qcfg = config.qlearn.clone();
            qcfg.cad = config.effective_cad_options();
            qlearn::calibrate_decoders(&mut model.towers, &prep.train, &qcfg, seed).unwrap();
            let rewards = qlearn::reward_table(
                &model.towers, &prep.train, model.depth_cache.as_ref().unwrap(), &qcfg, seed).unwrap();
            let mut policy = ExitPolicy::new(2, 4, 16, seed);
            let mut qcfg2 = qcfg.clone();
            qcfg2.calibration_epochs = 0; // already calibrated
            let out = qlearn_train(&mut model.towers, &mut policy, &prep.train,
                model.depth_cache.as_ref().unwrap(), &qcfg2, seed).unwrap();
            print!("seed {seed}: depths {:?} | post-cal L: ", out.exit_depths);
            for m in 0..2 {
                for c in 0..3 {
                    let ls: Vec<String> = rewards[m][c].iter().map(|v| format!("{:.2}", -v.ln() / scale)).collect();
                    print!("m{m}c{c}=[{}] ", ls.join(","));
                }
            }
            println!();
        }
    }
}
