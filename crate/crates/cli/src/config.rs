//! Run configuration: documented defaults, overlaid by an optional JSON
//! config file, overlaid by command-line flags (ascending precedence).

use crate::{CliError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// All tunable settings of the pipeline. Serialized into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Slow coherence forgetting factor.
    pub lambda_global: f64,
    /// Fast coherence forgetting factor.
    pub lambda_local: f64,
    /// Auditory band count shared by features and the network input.
    pub bands: usize,
    /// Speaker embedding dimension.
    pub embedding_dim: usize,

    pub lr: f64,
    pub clip_norm: f64,
    pub p_enrollless: f64,
    pub epochs: usize,
    pub plateau_epochs: usize,
    pub lr_factor: f64,
    /// Fraction of scenes held out for validation during training.
    pub val_fraction: f64,

    /// Geometry preset name, or a path to a geometry JSON file.
    pub geometry: String,
    /// Keep only the first N microphones of the geometry (0 = all).
    pub mics: usize,
    pub scenes: usize,
    pub duration_s: f64,
    pub t60_s: f64,
    pub snr_db: f64,
    pub sir_grid_db: Vec<f64>,
    /// Label threshold below the peak frame energy, in dB.
    pub threshold_db: f64,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambda_global: 0.99,
            lambda_local: 0.01,
            bands: 32,
            embedding_dim: 128,
            lr: 0.001,
            clip_norm: 3.0,
            p_enrollless: 0.1,
            epochs: 15,
            plateau_epochs: 3,
            lr_factor: 0.5,
            val_fraction: 0.2,
            geometry: "linear4_5cm".to_string(),
            mics: 0,
            scenes: 32,
            duration_s: 3.0,
            t60_s: 0.16,
            snr_db: 30.0,
            sir_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0],
            threshold_db: 40.0,
            seed: 0,
        }
    }
}

/// Flag-level overrides; `None` leaves the file/default value in place.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub geometry: Option<String>,
    pub mics: Option<usize>,
    pub sir: Option<f64>,
    pub scenes: Option<usize>,
    pub epochs: Option<usize>,
    pub threshold_db: Option<f64>,
    pub p_enrollless: Option<f64>,
    pub t60: Option<f64>,
    pub duration: Option<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v, lo, hi) in [
            ("lambda_global", self.lambda_global, 0.0, 1.0),
            ("lambda_local", self.lambda_local, 0.0, 1.0),
            ("p_enrollless", self.p_enrollless, 0.0, 1.0),
            ("val_fraction", self.val_fraction, 0.0, 0.9),
        ] {
            if !(v >= lo && v <= hi) {
                return Err(CliError::BadConfig(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) || !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(CliError::BadConfig("lr, clip_norm must be positive and lr_factor in (0,1)".into()));
        }
        if self.bands < 2 || self.embedding_dim == 0 || self.epochs == 0 || self.plateau_epochs == 0 {
            return Err(CliError::BadConfig("bands, embedding_dim, epochs, plateau_epochs must be positive".into()));
        }
        if self.scenes == 0 || !(self.duration_s >= 1.0) || !(self.t60_s >= 0.0) {
            return Err(CliError::BadConfig("need scenes >= 1, duration_s >= 1, t60_s >= 0".into()));
        }
        if self.sir_grid_db.is_empty() || !(self.threshold_db > 0.0) {
            return Err(CliError::BadConfig("need a non-empty SIR grid and a positive threshold".into()));
        }
        Ok(())
    }

    fn apply(&mut self, o: &ConfigOverrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.geometry {
            self.geometry = v.clone();
        }
        if let Some(v) = o.mics {
            self.mics = v;
        }
        if let Some(v) = o.sir {
            self.sir_grid_db = vec![v];
        }
        if let Some(v) = o.scenes {
            self.scenes = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.threshold_db {
            self.threshold_db = v;
        }
        if let Some(v) = o.p_enrollless {
            self.p_enrollless = v;
        }
        if let Some(v) = o.t60 {
            self.t60_s = v;
        }
        if let Some(v) = o.duration {
            self.duration_s = v;
        }
    }

    /// Resolves the configured geometry: a preset name or a JSON file path,
    /// optionally truncated to the first `mics` microphones.
    pub fn resolve_geometry(&self) -> Result<coher_sim::ArrayGeometry> {
        let geom = match coher_sim::preset(&self.geometry) {
            Ok(g) => g,
            Err(_) if Path::new(&self.geometry).is_file() => {
                let text = std::fs::read_to_string(&self.geometry)?;
                let mut de = serde_json::Deserializer::from_str(&text);
                let geom: coher_sim::ArrayGeometry = serde_path_to_error::deserialize(&mut de)
                    .map_err(|e| CliError::BadConfig(format!("{}: {e}", self.geometry)))?;
                geom.validate().map_err(CliError::Sim)?;
                geom
            }
            Err(_) => {
                return Err(CliError::BadConfig(format!(
                    "geometry '{}' is neither a preset ({}) nor a readable JSON file",
                    self.geometry,
                    coher_sim::preset_names().join(", ")
                )))
            }
        };
        if self.mics == 0 || self.mics == geom.num_mics() {
            return Ok(geom);
        }
        if self.mics > geom.num_mics() {
            return Err(CliError::BadConfig(format!(
                "--mics {} exceeds the {} microphones of '{}'",
                self.mics,
                geom.num_mics(),
                geom.name
            )));
        }
        let indices: Vec<usize> = (0..self.mics).collect();
        let name = format!("{}_m{}", geom.name, self.mics);
        geom.subset(name, &indices).map_err(CliError::Sim)
    }
}

/// Loads the effective configuration: defaults, then the optional JSON
/// file, then flag overrides. Unknown keys and type mismatches are
/// rejected with the offending key path.
pub fn parse_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<RunConfig> {
    let mut cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::BadConfig(format!("{}: {e}", p.display())))?;
            let mut de = serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(&mut de)
                .map_err(|e| CliError::BadConfig(format!("{}: {e}", p.display())))?
        }
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}
