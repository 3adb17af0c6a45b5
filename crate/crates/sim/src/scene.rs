//! Scene specification and randomized placement.
//!
//! A scene holds one enrolled target speaker, one competing speaker, and
//! one continuous interferer, all in the frontal half-plane of the array.
//! The two speakers talk in disjoint time spans; the interferer plays
//! through the whole clip, giving the slow coherence tracker a stationary
//! direction to settle on.

use crate::geometry::ArrayGeometry;
use crate::source::NUM_SPEAKER_PROFILES;
use crate::{Result, SimError};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Placement sampling gives up after this many rejected attempts.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Minimum angular separation between any two sources.
pub const MIN_ANGLE_GAP_DEG: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceRole {
    Target,
    NonTarget,
    Interferer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePlacement {
    pub role: SourceRole,
    pub azimuth_deg: f64,
    pub distance_m: f64,
}

/// Half-open time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start_s: f64,
    pub end_s: f64,
}

impl Span {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Sample index range `[start, end)` on the given rate.
    pub fn sample_range(&self, sample_rate: u32) -> (usize, usize) {
        let fs = sample_rate as f64;
        ((self.start_s * fs).round() as usize, (self.end_s * fs).round() as usize)
    }

    fn disjoint(&self, other: &Span) -> bool {
        self.end_s <= other.start_s || other.end_s <= self.start_s
    }
}

/// Complete description of one renderable scene. Together with the seed it
/// determines every sample of the output bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub geometry: ArrayGeometry,
    pub sources: Vec<SourcePlacement>,
    pub sir_db: f64,
    pub snr_db: f64,
    pub t60_s: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub target_span: Span,
    pub non_target_span: Span,
    pub target_profile: u32,
    pub non_target_profile: u32,
    pub interferer_profile: u32,
}

impl SceneSpec {
    pub fn source(&self, role: SourceRole) -> Result<&SourcePlacement> {
        self.sources
            .iter()
            .find(|s| s.role == role)
            .ok_or_else(|| SimError::BadSpec(format!("no source with role {role:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        for role in [SourceRole::Target, SourceRole::NonTarget, SourceRole::Interferer] {
            if self.sources.iter().filter(|s| s.role == role).count() != 1 {
                return Err(SimError::BadSpec(format!("need exactly one {role:?} source")));
            }
        }
        for s in &self.sources {
            if !(-90.0..=90.0).contains(&s.azimuth_deg) {
                return Err(SimError::BadSpec(format!("azimuth {} outside the frontal plane", s.azimuth_deg)));
            }
            if !(s.distance_m > 0.05) {
                return Err(SimError::BadSpec(format!("distance {} too small", s.distance_m)));
            }
        }
        for i in 0..self.sources.len() {
            for j in i + 1..self.sources.len() {
                let gap = (self.sources[i].azimuth_deg - self.sources[j].azimuth_deg).abs();
                if gap < MIN_ANGLE_GAP_DEG {
                    return Err(SimError::BadSpec(format!("sources {i} and {j} only {gap:.1} degrees apart")));
                }
            }
        }
        let interferer_d = self.source(SourceRole::Interferer)?.distance_m;
        for role in [SourceRole::Target, SourceRole::NonTarget] {
            if self.source(role)?.distance_m >= interferer_d {
                return Err(SimError::BadSpec("speakers must be closer than the interferer".into()));
            }
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(SimError::BadSpec(format!("bad duration {}", self.duration_s)));
        }
        if !self.sir_db.is_finite() || !self.snr_db.is_finite() {
            return Err(SimError::BadSpec("SIR and SNR must be finite".into()));
        }
        if !(self.t60_s >= 0.0) {
            return Err(SimError::BadSpec(format!("bad t60 {}", self.t60_s)));
        }
        for (name, span) in [("target", self.target_span), ("non-target", self.non_target_span)] {
            if !(span.start_s >= 0.0 && span.start_s < span.end_s && span.end_s <= self.duration_s) {
                return Err(SimError::BadSpec(format!("{name} span outside the clip")));
            }
        }
        if !self.target_span.disjoint(&self.non_target_span) {
            return Err(SimError::BadSpec("speaker spans overlap".into()));
        }
        Ok(())
    }
}

/// Knobs for randomized scene sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConstraints {
    /// Interferer level grid; one entry is drawn per scene.
    pub sir_grid_db: Vec<f64>,
    pub snr_db: f64,
    pub t60_s: f64,
    pub duration_s: f64,
    /// Speaker profiles are drawn from `0..speaker_pool`.
    pub speaker_pool: u32,
}

impl Default for SceneConstraints {
    fn default() -> Self {
        SceneConstraints {
            sir_grid_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0],
            snr_db: 30.0,
            t60_s: 0.16,
            duration_s: 3.0,
            speaker_pool: NUM_SPEAKER_PROFILES,
        }
    }
}

impl SceneConstraints {
    fn validate(&self) -> Result<()> {
        if self.sir_grid_db.is_empty() || self.sir_grid_db.iter().any(|v| !v.is_finite()) {
            return Err(SimError::BadConstraints("SIR grid must be non-empty and finite".into()));
        }
        if !(self.duration_s >= 1.0) {
            return Err(SimError::BadConstraints(format!(
                "duration {} too short for two disjoint utterances",
                self.duration_s
            )));
        }
        if !(self.t60_s >= 0.0) {
            return Err(SimError::BadConstraints(format!("bad t60 {}", self.t60_s)));
        }
        if !self.snr_db.is_finite() {
            return Err(SimError::BadConstraints("SNR must be finite".into()));
        }
        if self.speaker_pool < 2 {
            return Err(SimError::BadConstraints("need at least two speaker profiles".into()));
        }
        Ok(())
    }
}

/// Draws a scene around `geometry` honoring every [`SceneSpec`] invariant.
///
/// Angles are rejection-sampled in [-90, 90] degrees until all pairs are at
/// least 15 degrees apart; speakers sit on the 1 m or 2 m ring while the
/// interferer lands strictly farther out. The two utterance spans split the
/// clip at a random boundary with a small silent gap between them and short
/// margins at the edges.
pub fn sample_scene(geometry: &ArrayGeometry, seed: u64, constraints: &SceneConstraints) -> Result<SceneSpec> {
    geometry.validate()?;
    constraints.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut angles = None;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let cand: Vec<f64> = (0..3).map(|_| rng.random_range(-90.0..90.0)).collect();
        let ok = (0..3).all(|i| (i + 1..3).all(|j| (cand[i] - cand[j]).abs() >= MIN_ANGLE_GAP_DEG));
        if ok {
            angles = Some(cand);
            break;
        }
    }
    let angles = angles.ok_or(SimError::Unsatisfiable(MAX_PLACEMENT_ATTEMPTS))?;

    let speaker_rings = [1.0, 2.0];
    let target_d = *speaker_rings.choose(&mut rng).expect("non-empty");
    let non_target_d = *speaker_rings.choose(&mut rng).expect("non-empty");
    let interferer_d = rng.random_range(2.5..3.5);
    let sir_db = *constraints.sir_grid_db.choose(&mut rng).expect("validated non-empty");

    let d = constraints.duration_s;
    let boundary = d * rng.random_range(0.35..0.65);
    let margin = 0.04 * d;
    let half_gap = 0.03 * d;
    let first = Span { start_s: margin, end_s: boundary - half_gap };
    let second = Span { start_s: boundary + half_gap, end_s: d - margin };
    let target_first = rng.random_bool(0.5);
    let (target_span, non_target_span) = if target_first { (first, second) } else { (second, first) };

    let pool = constraints.speaker_pool;
    let target_profile = rng.random_range(0..pool);
    let mut non_target_profile = rng.random_range(0..pool);
    while non_target_profile == target_profile {
        non_target_profile = rng.random_range(0..pool);
    }
    let mut interferer_profile = rng.random_range(0..pool);
    while interferer_profile == target_profile || interferer_profile == non_target_profile {
        interferer_profile = rng.random_range(0..pool);
    }

    let spec = SceneSpec {
        geometry: geometry.clone(),
        sources: vec![
            SourcePlacement { role: SourceRole::Target, azimuth_deg: angles[0], distance_m: target_d },
            SourcePlacement { role: SourceRole::NonTarget, azimuth_deg: angles[1], distance_m: non_target_d },
            SourcePlacement { role: SourceRole::Interferer, azimuth_deg: angles[2], distance_m: interferer_d },
        ],
        sir_db,
        snr_db: constraints.snr_db,
        t60_s: constraints.t60_s,
        seed,
        duration_s: d,
        target_span,
        non_target_span,
        target_profile,
        non_target_profile,
        interferer_profile,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::preset;

    #[test]
    fn span_arithmetic() {
        let s = Span { start_s: 0.5, end_s: 1.25 };
        assert!((s.duration_s() - 0.75).abs() < 1e-12);
        assert_eq!(s.sample_range(16000), (8000, 20000));
        assert!(s.disjoint(&Span { start_s: 1.25, end_s: 2.0 }));
        assert!(!s.disjoint(&Span { start_s: 1.0, end_s: 2.0 }));
    }

    #[test]
    fn sampled_scene_is_deterministic() {
        let g = preset("linear4_5cm").unwrap();
        let c = SceneConstraints::default();
        let a = sample_scene(&g, 123, &c).unwrap();
        let b = sample_scene(&g, 123, &c).unwrap();
        assert_eq!(a, b);
        let other = sample_scene(&g, 124, &c).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn constraints_are_checked() {
        let g = preset("linear4_5cm").unwrap();
        let mut c = SceneConstraints::default();
        c.sir_grid_db.clear();
        assert!(sample_scene(&g, 1, &c).is_err());
        let c = SceneConstraints { duration_s: 0.5, ..SceneConstraints::default() };
        assert!(sample_scene(&g, 1, &c).is_err());
        let c = SceneConstraints { speaker_pool: 1, ..SceneConstraints::default() };
        assert!(sample_scene(&g, 1, &c).is_err());
    }

    #[test]
    fn spec_validation_rejects_broken_scenes() {
        let g = preset("linear4_5cm").unwrap();
        let good = sample_scene(&g, 9, &SceneConstraints::default()).unwrap();

        let mut s = good.clone();
        s.sources[0].azimuth_deg = 120.0;
        assert!(s.validate().is_err());

        let mut s = good.clone();
        s.sources[1].azimuth_deg = s.sources[0].azimuth_deg + 5.0;
        assert!(s.validate().is_err());

        let mut s = good.clone();
        s.sources[2].distance_m = 0.5;
        assert!(s.validate().is_err());

        let mut s = good.clone();
        s.non_target_span = s.target_span;
        assert!(s.validate().is_err());

        let mut s = good.clone();
        s.sources.remove(2);
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let g = preset("circ_m7").unwrap();
        let spec = sample_scene(&g, 55, &SceneConstraints::default()).unwrap();
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
