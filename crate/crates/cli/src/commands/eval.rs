//! Per-condition evaluation: frames are pooled within each SIR level of a
//! dataset (geometry and microphone count are dataset-wide) and scored as
//! one ROC per condition.

use crate::dataset::{load_manifest, load_scenes};
use crate::manifest::write_json_atomic;
use crate::parallel::{run_indexed, thread_budget};
use crate::{CliError, Result, TOOL_VERSION};
use coher_metrics::roc_curve;
use coher_net::load_checkpoint_file;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub sir_db: f64,
    pub geometry: String,
    pub mics: usize,
    pub auc: f64,
    pub eer: f64,
    pub frames: usize,
    pub positives: usize,
}

/// The eval artifact: configuration provenance plus one entry per condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub dataset_seed: u64,
    pub geometry: String,
    pub mics: usize,
    pub conditions: Vec<ConditionReport>,
}

/// Scores `checkpoint` over the dataset in `dir`, optionally writing the
/// report JSON to `out`.
pub fn run(dir: &Path, checkpoint: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let manifest = load_manifest(dir)?;
    let scenes = load_scenes(dir, &manifest)?;
    if scenes.is_empty() {
        return Err(CliError::BadDataset("dataset has no scenes".into()));
    }
    let ckpt = load_checkpoint_file(checkpoint)?;
    let model = &ckpt.model;

    let outputs = run_indexed(scenes.len(), thread_budget(), |i| -> Result<Vec<f64>> {
        let s = &scenes[i];
        Ok(model.predict(&s.feature, &s.embedding)?)
    });

    // Pool frames per SIR level; keys are millidecibels for exact grouping.
    let mut pooled: BTreeMap<i64, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for (s, probs) in scenes.iter().zip(outputs) {
        let probs = probs?;
        let slot = pooled.entry((s.entry.sir_db * 1000.0).round() as i64).or_default();
        slot.0.extend(probs);
        slot.1.extend_from_slice(&s.labels);
    }

    let mut conditions = Vec::with_capacity(pooled.len());
    for (key, (scores, labels)) in pooled {
        let roc = roc_curve(&scores, &labels)?;
        conditions.push(ConditionReport {
            sir_db: key as f64 / 1000.0,
            geometry: manifest.geometry_name.clone(),
            mics: manifest.num_mics,
            auc: roc.auc(),
            eer: roc.eer(),
            frames: labels.len(),
            positives: labels.iter().filter(|&&l| l == 1).count(),
        });
    }

    let report = EvalReport {
        tool_version: TOOL_VERSION.to_string(),
        dataset_seed: manifest.config.seed,
        geometry: manifest.geometry_name.clone(),
        mics: manifest.num_mics,
        conditions,
    };
    if let Some(out) = out {
        write_json_atomic(out, &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commands::{features, simulate, train};
    use crate::config::RunConfig;

    #[test]
    fn eval_reports_one_condition_per_sir_level() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            scenes: 3,
            duration_s: 1.2,
            t60_s: 0.0,
            epochs: 1,
            sir_grid_db: vec![5.0],
            geometry: "circ_m2a".into(),
            seed: 41,
            ..RunConfig::default()
        };
        simulate::run(&cfg, data.path()).unwrap();
        features::run(data.path()).unwrap();
        let tm = train::run(&cfg, data.path(), out.path()).unwrap();

        let report_path = out.path().join("eval.json");
        let report =
            run(data.path(), &out.path().join(&tm.checkpoint), Some(&report_path)).unwrap();
        assert_eq!(report.conditions.len(), 1);
        let c = &report.conditions[0];
        assert_eq!(c.sir_db, 5.0);
        assert_eq!(c.geometry, "circ_m2a");
        assert_eq!(c.mics, 2);
        assert!(c.frames > 0 && c.positives > 0 && c.positives < c.frames);
        assert!((0.0..=1.0).contains(&c.auc) && (0.0..=1.0).contains(&c.eer));

        let back: EvalReport = crate::manifest::read_json(&report_path).unwrap();
        assert_eq!(back, report);
    }
}
