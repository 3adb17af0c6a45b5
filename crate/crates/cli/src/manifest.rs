//! On-disk manifests tying a run's artifacts together.
//!
//! Manifests carry only run-relative paths and deterministic values (no
//! timestamps, hostnames, or absolute paths), so repeating a command with
//! the same seed and config produces byte-identical files.

use crate::config::RunConfig;
use crate::{CliError, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::Path;

/// One rendered scene and its artifacts, all relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub index: usize,
    pub wav: String,
    pub labels: String,
    pub sidecar: String,
    pub sir_db: f64,
    pub target_profile: u32,
    pub num_frames: usize,
    pub num_mics: usize,
}

/// One enrolled speaker's material, relative to the dataset root. The
/// embedding path is written by the feature stage next to the wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentEntry {
    pub profile: u32,
    pub wav: String,
    pub embedding: String,
}

/// Index of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub geometry_name: String,
    pub num_mics: usize,
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub scenes: Vec<SceneEntry>,
    pub enrollments: Vec<EnrollmentEntry>,
}

/// Index of the feature artifacts derived from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub tool_version: String,
    pub lambda_global: f64,
    pub lambda_local: f64,
    pub bands: usize,
    pub embedding_dim: usize,
    pub features: Vec<String>,
    pub embeddings: Vec<String>,
}

/// Index of a training run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub checkpoint: String,
    pub log: String,
    pub param_count: usize,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Serializes `value` as pretty JSON and moves it into place atomically,
/// so readers never observe a half-written file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads JSON into `T`, reporting the key path of any mismatch.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::BadConfig(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_manifest() -> DatasetManifest {
        DatasetManifest {
            tool_version: "0.1.0".into(),
            config: RunConfig::default(),
            geometry_name: "linear4_5cm".into(),
            num_mics: 4,
            sample_rate: 16000,
            frame_len: 400,
            hop: 160,
            scenes: vec![SceneEntry {
                index: 0,
                wav: "scenes/scene_00000.wav".into(),
                labels: "scenes/scene_00000.albl".into(),
                sidecar: "scenes/scene_00000.json".into(),
                sir_db: -5.0,
                target_profile: 3,
                num_frames: 298,
                num_mics: 4,
            }],
            enrollments: vec![EnrollmentEntry {
                profile: 3,
                wav: "enroll/speaker_03.wav".into(),
                embedding: "enroll/speaker_03.dvec".into(),
            }],
        }
    }

    #[test]
    fn atomic_json_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = sample_manifest();
        write_json_atomic(&path, &manifest).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back: DatasetManifest = read_json(&path).unwrap();
        assert_eq!(back, manifest);

        write_json_atomic(&path, &back).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second, "re-serialization must be byte-identical");
        assert!(!dir.path().join("manifest.tmp").exists());
    }

    #[test]
    fn read_json_names_the_bad_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, r#"{"tool_version": 7}"#).unwrap();
        let err = read_json::<DatasetManifest>(&path).unwrap_err();
        assert!(err.to_string().contains("tool_version"), "{err}");
    }

    #[test]
    fn missing_file_is_a_missing_input() {
        let err = read_json::<DatasetManifest>(Path::new("/nonexistent/m.json")).unwrap_err();
        assert!(matches!(err, CliError::MissingInput(_)));
    }
}
