//! Feature extraction over a simulated dataset: one AFEA tensor per scene
//! and one DVEC embedding per enrolled speaker, using the coherence and
//! band settings recorded in the dataset's own manifest.

use crate::dataset::{feature_rel_path, load_manifest, FEATURE_MANIFEST_FILE};
use crate::manifest::{write_json_atomic, FeatureManifest};
use crate::parallel::{run_indexed, thread_budget};
use crate::{commands::wave_feature, Result, TOOL_VERSION};
use coher_dsp::wav::read_wav;
use coher_embed::{save_embedding, stub_embedding};
use coher_features::save_afea;
use std::path::Path;

/// Computes features and embeddings for the dataset in `dir`.
pub fn run(dir: &Path) -> Result<FeatureManifest> {
    let manifest = load_manifest(dir)?;
    let cfg = &manifest.config;

    let results = run_indexed(manifest.scenes.len(), thread_budget(), |i| -> Result<String> {
        let entry = &manifest.scenes[i];
        let wave = read_wav(&dir.join(&entry.wav))?;
        let feat = wave_feature(&wave, cfg.lambda_global, cfg.lambda_local, cfg.bands)?;
        let rel = feature_rel_path(entry);
        let path = dir.join(&rel);
        let tmp = path.with_extension("afeatmp");
        save_afea(&tmp, &feat)?;
        std::fs::rename(&tmp, &path)?;
        Ok(rel)
    });
    let mut features = Vec::with_capacity(results.len());
    for r in results {
        features.push(r?);
    }

    let mut embeddings = Vec::with_capacity(manifest.enrollments.len());
    for e in &manifest.enrollments {
        let wave = read_wav(&dir.join(&e.wav))?;
        let emb = stub_embedding(&wave, cfg.embedding_dim)?
            .with_speaker_id(format!("profile_{:02}", e.profile));
        let path = dir.join(&e.embedding);
        let tmp = path.with_extension("dvectmp");
        save_embedding(&tmp, &emb)?;
        std::fs::rename(&tmp, &path)?;
        embeddings.push(e.embedding.clone());
    }

    let feature_manifest = FeatureManifest {
        tool_version: TOOL_VERSION.to_string(),
        lambda_global: cfg.lambda_global,
        lambda_local: cfg.lambda_local,
        bands: cfg.bands,
        embedding_dim: cfg.embedding_dim,
        features,
        embeddings,
    };
    write_json_atomic(&dir.join(FEATURE_MANIFEST_FILE), &feature_manifest)?;
    Ok(feature_manifest)
}
