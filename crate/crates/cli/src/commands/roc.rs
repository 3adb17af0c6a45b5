//! ROC export: pools every frame of a dataset under one checkpoint and
//! writes the full threshold sweep as CSV.

use crate::dataset::{load_manifest, load_scenes};
use crate::parallel::{run_indexed, thread_budget};
use crate::{CliError, Result};
use coher_metrics::{roc_curve, RocCurve};
use coher_net::load_checkpoint_file;
use std::io::Write;
use std::path::Path;

/// Scores the whole dataset and writes `threshold,fpr,tpr,fnr` rows.
pub fn run(dir: &Path, checkpoint: &Path, out: &Path) -> Result<RocCurve> {
    let manifest = load_manifest(dir)?;
    let scenes = load_scenes(dir, &manifest)?;
    if scenes.is_empty() {
        return Err(CliError::BadDataset("dataset has no scenes".into()));
    }
    let ckpt = load_checkpoint_file(checkpoint)?;

    let outputs = run_indexed(scenes.len(), thread_budget(), |i| -> Result<Vec<f64>> {
        Ok(ckpt.model.predict(&scenes[i].feature, &scenes[i].embedding)?)
    });
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (s, probs) in scenes.iter().zip(outputs) {
        scores.extend(probs?);
        labels.extend_from_slice(&s.labels);
    }

    let roc = roc_curve(&scores, &labels)?;
    let tmp = out.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        roc.write_csv(&mut f)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, out)?;
    Ok(roc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commands::{features, simulate, train};
    use crate::config::RunConfig;

    #[test]
    fn roc_csv_covers_the_full_sweep() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            scenes: 2,
            duration_s: 1.2,
            t60_s: 0.0,
            epochs: 1,
            geometry: "circ_m2a".into(),
            seed: 61,
            ..RunConfig::default()
        };
        simulate::run(&cfg, data.path()).unwrap();
        features::run(data.path()).unwrap();
        let tm = train::run(&cfg, data.path(), out.path()).unwrap();

        let csv = out.path().join("roc.csv");
        let roc = run(data.path(), &out.path().join(&tm.checkpoint), &csv).unwrap();
        assert!((0.0..=1.0).contains(&roc.auc()));

        let text = std::fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("threshold,fpr,tpr,fnr"));
        let first = lines.next().unwrap();
        assert!(first.starts_with("inf,0,0,1"), "sweep starts above all scores: {first}");
        let last = text.lines().last().unwrap();
        let fields: Vec<&str> = last.split(',').collect();
        assert_eq!(fields[1], "1", "sweep ends accepting everything");
        assert_eq!(fields[2], "1");
    }
}
