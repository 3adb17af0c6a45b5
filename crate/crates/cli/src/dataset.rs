//! Dataset directory layout and artifact loading.
//!
//! A dataset directory looks like:
//!
//! ```text
//! out/
//!   manifest.json
//!   scenes/scene_00000.wav      multichannel mixture
//!   scenes/scene_00000.albl     frame labels
//!   scenes/scene_00000.json     scene sidecar (spec + measured levels)
//!   scenes/scene_00000.afea     network input (written by `features`)
//!   enroll/speaker_03.wav       enrollment audio per target profile
//!   enroll/speaker_03.dvec      speaker embedding (written by `features`)
//! ```
//!
//! Artifact names derive from the scene index and speaker profile alone, so
//! two runs of the same command agree on every path.

use crate::manifest::{read_json, DatasetManifest, SceneEntry};
use crate::{CliError, Result};
use coher_embed::{load_embedding, SpeakerEmbedding};
use coher_features::{load_afea, InputFeature};
use coher_sim::{load_labels_file, SceneSpec};
use coher_train::TrainSample;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Analysis frame length at 16 kHz (25 ms).
pub const FRAME_LEN: usize = 400;
/// Frame hop (10 ms).
pub const HOP: usize = 160;
/// FFT size for the analysis frames.
pub const NFFT: usize = 512;
/// Enrollment clips are this long.
pub const ENROLL_SECONDS: f64 = 5.0;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURE_MANIFEST_FILE: &str = "features.json";
pub const SCENES_DIR: &str = "scenes";
pub const ENROLL_DIR: &str = "enroll";

pub fn scene_stem(index: usize) -> String {
    format!("scene_{index:05}")
}

pub fn enroll_stem(profile: u32) -> String {
    format!("speaker_{profile:02}")
}

/// Per-scene seed for scene `index` of a run. The golden-ratio multiply
/// spreads consecutive indices across the seed space.
pub fn scene_seed(run_seed: u64, index: usize) -> u64 {
    run_seed ^ (index as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15)
}

/// Enrollment seed depends only on the speaker profile, so one speaker
/// enrolls with identical audio in every dataset.
pub fn enroll_seed(profile: u32) -> u64 {
    0xe04011u64 ^ (profile as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15)
}

/// Sidecar stored next to each scene wave: everything needed to re-render
/// the scene bit for bit plus the measured level checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub spec: SceneSpec,
    /// Label file, relative to the dataset root.
    pub labels: String,
    pub threshold_db: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub num_frames: usize,
    pub measured_sir_db: f64,
    pub measured_pair_db: f64,
    pub measured_snr_db: f64,
}

/// Feature file path for a scene entry, relative to the dataset root.
pub fn feature_rel_path(entry: &SceneEntry) -> String {
    entry.wav.replace(".wav", ".afea")
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

/// One scene with everything the classifier stages need.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub entry: SceneEntry,
    pub feature: InputFeature,
    pub embedding: SpeakerEmbedding,
    pub labels: Vec<u8>,
}

impl LoadedScene {
    pub fn into_train_sample(self) -> TrainSample {
        TrainSample { feature: self.feature, embedding: self.embedding, labels: self.labels }
    }
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(format!("{} not found; {hint}", path.display())))
    }
}

/// Loads every enrollment embedding, keyed by speaker profile.
pub fn load_embeddings(dir: &Path, manifest: &DatasetManifest) -> Result<BTreeMap<u32, SpeakerEmbedding>> {
    let mut map = BTreeMap::new();
    for e in &manifest.enrollments {
        let path = require(dir.join(&e.embedding), "run the `features` command first")?;
        map.insert(e.profile, load_embedding(&path)?);
    }
    Ok(map)
}

/// Loads all scenes of a dataset with their features, target embeddings,
/// and labels. Requires the `features` command to have run on `dir`.
pub fn load_scenes(dir: &Path, manifest: &DatasetManifest) -> Result<Vec<LoadedScene>> {
    let embeddings = load_embeddings(dir, manifest)?;
    let mut out = Vec::with_capacity(manifest.scenes.len());
    for entry in &manifest.scenes {
        let afea = require(dir.join(feature_rel_path(entry)), "run the `features` command first")?;
        let feature = load_afea(&afea)?;
        let labels = load_labels_file(&dir.join(&entry.labels))?;
        if labels.len() != feature.num_frames() {
            return Err(CliError::BadDataset(format!(
                "scene {}: {} labels for {} feature frames",
                entry.index,
                labels.len(),
                feature.num_frames()
            )));
        }
        let embedding = embeddings
            .get(&entry.target_profile)
            .ok_or_else(|| {
                CliError::BadDataset(format!(
                    "scene {}: no enrollment for target profile {}",
                    entry.index, entry.target_profile
                ))
            })?
            .clone();
        out.push(LoadedScene { entry: entry.clone(), feature, embedding, labels });
    }
    Ok(out)
}

/// Deterministic train/validation split: indices are shuffled by a seeded
/// Fisher-Yates pass and the tail becomes validation (at least one scene
/// on each side).
pub fn split_indices(count: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(count >= 2, "need at least two scenes to split");
    let mut order: Vec<usize> = (0..count).collect();
    // The tag keeps this stream apart from the trainer's own RNG, which is
    // seeded from the same run seed.
    let mut state = seed ^ 0x73706c6974;
    for i in (1..count).rev() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let j = (state >> 33) as usize % (i + 1);
        order.swap(i, j);
    }
    let val = ((count as f64 * val_fraction).round() as usize).clamp(1, count - 1);
    let split = count - val;
    (order[..split].to_vec(), order[split..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_names_are_stable() {
        assert_eq!(scene_stem(7), "scene_00007");
        assert_eq!(enroll_stem(3), "speaker_03");
        let entry = SceneEntry {
            index: 7,
            wav: "scenes/scene_00007.wav".into(),
            labels: "scenes/scene_00007.albl".into(),
            sidecar: "scenes/scene_00007.json".into(),
            sir_db: 0.0,
            target_profile: 1,
            num_frames: 10,
            num_mics: 4,
        };
        assert_eq!(feature_rel_path(&entry), "scenes/scene_00007.afea");
    }

    #[test]
    fn scene_seeds_are_distinct_and_deterministic() {
        let a: Vec<u64> = (0..100).map(|i| scene_seed(42, i)).collect();
        let b: Vec<u64> = (0..100).map(|i| scene_seed(42, i)).collect();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        assert_ne!(scene_seed(1, 0), scene_seed(2, 0));
        assert_eq!(enroll_seed(3), enroll_seed(3));
        assert_ne!(enroll_seed(3), enroll_seed(4));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let (train, val) = split_indices(10, 0.2, 99);
        let (train2, val2) = split_indices(10, 0.2, 99);
        assert_eq!(train, train2);
        assert_eq!(val, val2);
        assert_eq!(val.len(), 2);
        let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let (other_train, _) = split_indices(10, 0.2, 100);
        assert_ne!(train, other_train, "different seeds should shuffle differently");
    }

    #[test]
    fn split_always_keeps_both_sides_nonempty() {
        for count in [2usize, 3, 5] {
            for frac in [0.0, 0.5, 0.9] {
                let (train, val) = split_indices(count, frac, 7);
                assert!(!train.is_empty() && !val.is_empty(), "count {count} frac {frac}");
            }
        }
    }
}
