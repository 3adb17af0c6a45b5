//! Model training over a prepared dataset: deterministic train/validation
//! split, the optimization loop, and the checkpoint + log + manifest trio.

use crate::config::RunConfig;
use crate::dataset::{load_manifest, load_scenes, split_indices};
use crate::manifest::{write_json_atomic, TrainManifest};
use crate::{CliError, Result, TOOL_VERSION};
use coher_net::{save_checkpoint_file, CheckpointMeta, ModelConfig, PvadModel};
use coher_train::{train as fit, write_log_jsonl, TrainConfig, TrainSample};
use std::path::Path;

pub const CHECKPOINT_FILE: &str = "checkpoint.apvd";
pub const LOG_FILE: &str = "training_log.jsonl";
pub const TRAIN_MANIFEST_FILE: &str = "train.json";

/// Trains on the dataset in `dataset_dir` and writes the checkpoint, the
/// per-epoch log, and the training manifest into `out_dir`.
pub fn run(config: &RunConfig, dataset_dir: &Path, out_dir: &Path) -> Result<TrainManifest> {
    config.validate()?;
    let manifest = load_manifest(dataset_dir)?;
    if manifest.config.bands != config.bands {
        return Err(CliError::BadConfig(format!(
            "dataset was extracted with {} bands but training expects {}",
            manifest.config.bands, config.bands
        )));
    }
    let scenes = load_scenes(dataset_dir, &manifest)?;
    if scenes.len() < 2 {
        return Err(CliError::BadDataset("training needs at least two scenes".into()));
    }

    let (train_idx, val_idx) = split_indices(scenes.len(), config.val_fraction, config.seed);
    let pick = |idx: &[usize]| -> Vec<TrainSample> {
        idx.iter().map(|&i| scenes[i].clone().into_train_sample()).collect()
    };
    let train_set = pick(&train_idx);
    let val_set = pick(&val_idx);

    let model_cfg = ModelConfig {
        bands: config.bands,
        embedding_dim: config.embedding_dim,
        ..ModelConfig::default()
    };
    let model = PvadModel::new_seeded(model_cfg, config.seed)?;
    let param_count = model.count_params();

    let train_cfg = TrainConfig {
        lr0: config.lr,
        clip_norm: config.clip_norm,
        plateau_epochs: config.plateau_epochs,
        lr_factor: config.lr_factor,
        p_enrollless: config.p_enrollless,
        epochs: config.epochs,
        seed: config.seed,
    };
    let outcome = fit(model, &train_set, &val_set, &train_cfg)?;

    std::fs::create_dir_all(out_dir)?;
    let meta = CheckpointMeta {
        epoch: Some(outcome.best_epoch as u64),
        best_val_loss: Some(outcome.best_val_loss),
    };
    save_checkpoint_file(&out_dir.join(CHECKPOINT_FILE), &outcome.model, &meta, &[])?;

    let mut log_bytes = Vec::new();
    write_log_jsonl(&mut log_bytes, &outcome.log)?;
    let log_path = out_dir.join(LOG_FILE);
    let tmp = log_path.with_extension("tmp");
    std::fs::write(&tmp, &log_bytes)?;
    std::fs::rename(&tmp, &log_path)?;

    let train_manifest = TrainManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: config.clone(),
        checkpoint: CHECKPOINT_FILE.to_string(),
        log: LOG_FILE.to_string(),
        param_count,
        train_scenes: train_set.len(),
        val_scenes: val_set.len(),
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
    };
    write_json_atomic(&out_dir.join(TRAIN_MANIFEST_FILE), &train_manifest)?;
    Ok(train_manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commands::{features, simulate};
    use coher_net::load_checkpoint_file;

    #[test]
    fn train_produces_checkpoint_log_and_manifest() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            scenes: 3,
            duration_s: 1.2,
            t60_s: 0.0,
            epochs: 2,
            geometry: "circ_m2a".into(),
            seed: 31,
            ..RunConfig::default()
        };
        simulate::run(&cfg, data.path()).unwrap();
        features::run(data.path()).unwrap();
        let tm = run(&cfg, data.path(), out.path()).unwrap();

        assert_eq!(tm.train_scenes + tm.val_scenes, 3);
        assert!(tm.param_count > 0);
        let ckpt = load_checkpoint_file(&out.path().join(&tm.checkpoint)).unwrap();
        assert_eq!(ckpt.model.count_params(), tm.param_count);
        assert_eq!(ckpt.meta.epoch, Some(tm.best_epoch as u64));

        let log = std::fs::read_to_string(out.path().join(&tm.log)).unwrap();
        assert_eq!(log.lines().count(), 2, "one JSONL record per epoch");
        for line in log.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["epoch", "lr", "train_loss", "val_loss", "enrollless_count"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
        }
    }

    #[test]
    fn train_without_features_names_the_missing_file() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            scenes: 2,
            duration_s: 1.2,
            t60_s: 0.0,
            epochs: 1,
            geometry: "circ_m2a".into(),
            seed: 32,
            ..RunConfig::default()
        };
        simulate::run(&cfg, data.path()).unwrap();
        let err = run(&cfg, data.path(), out.path()).unwrap_err();
        assert!(matches!(err, CliError::MissingInput(_)), "{err}");
        assert!(err.to_string().contains("features"), "{err}");
        assert!(!out.path().join(TRAIN_MANIFEST_FILE).exists());
    }
}
