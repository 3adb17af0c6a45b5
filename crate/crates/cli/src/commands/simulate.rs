//! Dataset synthesis: renders seeded scenes with labels and sidecars plus
//! one enrollment clip per target speaker, then writes the manifest last
//! so a manifest's presence implies a complete dataset.

use crate::config::RunConfig;
use crate::dataset::{
    enroll_seed, enroll_stem, scene_seed, scene_stem, SceneSidecar, ENROLL_DIR, ENROLL_SECONDS,
    FRAME_LEN, HOP, MANIFEST_FILE, SCENES_DIR,
};
use crate::manifest::{write_json_atomic, DatasetManifest, EnrollmentEntry, SceneEntry};
use crate::parallel::{run_indexed, thread_budget};
use crate::{Result, TOOL_VERSION};
use coher_dsp::wav::write_wav_f32;
use coher_dsp::WaveBuffer;
use coher_sim::{
    label_frames, sample_scene, save_labels_file, simulate_scene, speaker_profile, speech_like,
    SceneConstraints, DATASET_SAMPLE_RATE, NUM_SPEAKER_PROFILES,
};
use std::collections::BTreeSet;
use std::path::Path;

/// WAV writer output is moved into place via a temp file like every other
/// artifact, so readers never see partial waves.
fn write_wav_atomic(path: &Path, wave: &WaveBuffer) -> Result<()> {
    let tmp = path.with_extension("wavtmp");
    write_wav_f32(&tmp, wave)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn render_one(config: &RunConfig, geometry: &coher_sim::ArrayGeometry, out_dir: &Path, index: usize) -> Result<SceneEntry> {
    let constraints = SceneConstraints {
        sir_grid_db: config.sir_grid_db.clone(),
        snr_db: config.snr_db,
        t60_s: config.t60_s,
        duration_s: config.duration_s,
        speaker_pool: NUM_SPEAKER_PROFILES,
    };
    let spec = sample_scene(geometry, scene_seed(config.seed, index), &constraints)?;
    let rendered = simulate_scene(&spec)?;

    let clean = WaveBuffer::mono(rendered.clean_target.clone(), DATASET_SAMPLE_RATE)?;
    let labels = label_frames(&clean, FRAME_LEN, HOP, config.threshold_db)?;

    let stem = scene_stem(index);
    let wav_rel = format!("{SCENES_DIR}/{stem}.wav");
    let labels_rel = format!("{SCENES_DIR}/{stem}.albl");
    let sidecar_rel = format!("{SCENES_DIR}/{stem}.json");

    write_wav_atomic(&out_dir.join(&wav_rel), &rendered.mixture)?;
    save_labels_file(&out_dir.join(&labels_rel), &labels)?;
    let sidecar = SceneSidecar {
        spec: spec.clone(),
        labels: labels_rel.clone(),
        threshold_db: config.threshold_db,
        frame_len: FRAME_LEN,
        hop: HOP,
        num_frames: labels.len(),
        measured_sir_db: rendered.measured_sir_db,
        measured_pair_db: rendered.measured_pair_db,
        measured_snr_db: rendered.measured_snr_db,
    };
    write_json_atomic(&out_dir.join(&sidecar_rel), &sidecar)?;

    Ok(SceneEntry {
        index,
        wav: wav_rel,
        labels: labels_rel,
        sidecar: sidecar_rel,
        sir_db: spec.sir_db,
        target_profile: spec.target_profile,
        num_frames: labels.len(),
        num_mics: geometry.num_mics(),
    })
}

/// Renders `config.scenes` seeded scenes into `out_dir` and returns the
/// manifest, which is also written as the final artifact.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let geometry = config.resolve_geometry()?;
    std::fs::create_dir_all(out_dir.join(SCENES_DIR))?;
    std::fs::create_dir_all(out_dir.join(ENROLL_DIR))?;

    let results = run_indexed(config.scenes, thread_budget(), |i| {
        render_one(config, &geometry, out_dir, i)
    });
    let mut scenes = Vec::with_capacity(results.len());
    for r in results {
        scenes.push(r?);
    }

    // One enrollment clip per distinct target speaker, independent of the
    // scene seeds so the same profile enrolls identically everywhere.
    let profiles: BTreeSet<u32> = scenes.iter().map(|s| s.target_profile).collect();
    let enroll_samples = (ENROLL_SECONDS * DATASET_SAMPLE_RATE as f64).round() as usize;
    let mut enrollments = Vec::with_capacity(profiles.len());
    for profile in profiles {
        let stem = enroll_stem(profile);
        let wav_rel = format!("{ENROLL_DIR}/{stem}.wav");
        let samples = speech_like(
            &speaker_profile(profile),
            enroll_samples,
            DATASET_SAMPLE_RATE,
            enroll_seed(profile),
            true,
        );
        write_wav_atomic(&out_dir.join(&wav_rel), &WaveBuffer::mono(samples, DATASET_SAMPLE_RATE)?)?;
        enrollments.push(EnrollmentEntry {
            profile,
            wav: wav_rel,
            embedding: format!("{ENROLL_DIR}/{stem}.dvec"),
        });
    }

    let manifest = DatasetManifest {
        tool_version: TOOL_VERSION.to_string(),
        config: config.clone(),
        geometry_name: geometry.name.clone(),
        num_mics: geometry.num_mics(),
        sample_rate: DATASET_SAMPLE_RATE,
        frame_len: FRAME_LEN,
        hop: HOP,
        scenes,
        enrollments,
    };
    write_json_atomic(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_manifest;
    use crate::CliError;

    fn tiny_config() -> RunConfig {
        RunConfig {
            scenes: 2,
            duration_s: 1.2,
            t60_s: 0.0,
            geometry: "circ_m2a".into(),
            seed: 11,
            ..RunConfig::default()
        }
    }

    #[test]
    fn simulate_writes_complete_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = run(&tiny_config(), dir.path()).unwrap();
        assert_eq!(manifest.scenes.len(), 2);
        assert_eq!(manifest.num_mics, 2);
        for entry in &manifest.scenes {
            assert!(dir.path().join(&entry.wav).is_file());
            assert!(dir.path().join(&entry.labels).is_file());
            assert!(dir.path().join(&entry.sidecar).is_file());
            assert!(entry.num_frames > 0);
        }
        for e in &manifest.enrollments {
            assert!(dir.path().join(&e.wav).is_file());
            // Embeddings appear only after the features stage.
            assert!(!dir.path().join(&e.embedding).exists());
        }
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded, manifest);
        // No stray temp files.
        for f in std::fs::read_dir(dir.path().join(SCENES_DIR)).unwrap() {
            let name = f.unwrap().file_name().into_string().unwrap();
            assert!(!name.contains("tmp"), "leftover temp file {name}");
        }
    }

    #[test]
    fn simulate_is_bitwise_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        run(&cfg, a.path()).unwrap();
        run(&cfg, b.path()).unwrap();
        for rel in ["manifest.json", "scenes/scene_00000.wav", "scenes/scene_00000.albl", "scenes/scene_00000.json"] {
            let x = std::fs::read(a.path().join(rel)).unwrap();
            let y = std::fs::read(b.path().join(rel)).unwrap();
            assert_eq!(x, y, "{rel} differs between identical runs");
        }
    }

    #[test]
    fn failures_leave_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { geometry: "not_a_preset".into(), ..tiny_config() };
        assert!(matches!(run(&cfg, dir.path()), Err(CliError::BadConfig(_))));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }
}
