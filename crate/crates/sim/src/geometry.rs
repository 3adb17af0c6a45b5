//! Microphone array geometries.
//!
//! All presets are centered on the origin and lie in the z = 0 plane, with
//! sources placed in the same plane (frontal half-plane). The microphone at
//! index 0 is always the phase reference for downstream features, so preset
//! builders put the most central element first.

use crate::{Result, SimError};
use serde::{Deserialize, Serialize};

/// Positions of one microphone array, in meters. Index 0 is the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub name: String,
    pub positions: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    pub fn new(name: impl Into<String>, positions: Vec<[f64; 3]>) -> Result<Self> {
        let geom = ArrayGeometry { name: name.into(), positions };
        geom.validate()?;
        Ok(geom)
    }

    pub fn num_mics(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(SimError::BadGeometry("array needs at least one microphone".into()));
        }
        for p in &self.positions {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(SimError::BadGeometry("non-finite microphone position".into()));
            }
        }
        for i in 0..self.positions.len() {
            for j in i + 1..self.positions.len() {
                if distance(self.positions[i], self.positions[j]) < 1e-6 {
                    return Err(SimError::BadGeometry(format!("microphones {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Largest microphone distance from the origin; sources must sit
    /// strictly outside this radius.
    pub fn hull_radius(&self) -> f64 {
        self.positions
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Sub-array with the microphones at `indices`, in that order. The first
    /// listed index becomes the new reference.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<ArrayGeometry> {
        let mut positions = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self
                .positions
                .get(i)
                .ok_or_else(|| SimError::BadGeometry(format!("subset index {i} out of range")))?;
            positions.push(*p);
        }
        ArrayGeometry::new(name, positions)
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Parametric array families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryKind {
    /// `count` elements on the x-axis, centered at the origin.
    Linear { count: usize, spacing_m: f64 },
    /// One element at the origin plus `count - 1` evenly spaced on a ring.
    Circular { count: usize, radius_m: f64 },
}

pub fn make_geometry(kind: GeometryKind) -> Result<ArrayGeometry> {
    match kind {
        GeometryKind::Linear { count, spacing_m } => {
            if count < 1 {
                return Err(SimError::BadGeometry("linear array needs at least one element".into()));
            }
            if count > 1 && !(spacing_m > 0.0) {
                return Err(SimError::BadGeometry(format!("nonpositive spacing {spacing_m}")));
            }
            let mid = (count as f64 - 1.0) / 2.0;
            let positions = (0..count).map(|i| [(i as f64 - mid) * spacing_m, 0.0, 0.0]).collect();
            ArrayGeometry::new(format!("linear{count}_{}mm", (spacing_m * 1000.0).round() as i64), positions)
        }
        GeometryKind::Circular { count, radius_m } => {
            if count < 1 {
                return Err(SimError::BadGeometry("circular array needs at least one element".into()));
            }
            if count > 1 && !(radius_m > 0.0) {
                return Err(SimError::BadGeometry(format!("nonpositive radius {radius_m}")));
            }
            let mut positions = vec![[0.0, 0.0, 0.0]];
            let ring = count - 1;
            for k in 0..ring {
                let th = 2.0 * std::f64::consts::PI * k as f64 / ring as f64;
                positions.push([radius_m * th.cos(), radius_m * th.sin(), 0.0]);
            }
            ArrayGeometry::new(format!("circular{count}_r{}mm", (radius_m * 1000.0).round() as i64), positions)
        }
    }
}

/// The three 4-element linear arrays used for training data.
pub fn training_geometries() -> Vec<ArrayGeometry> {
    ["linear4_3cm", "linear4_5cm", "linear4_8cm"].iter().map(|n| preset(n).expect("builtin")).collect()
}

/// The eight circular sub-array configurations used for held-out testing,
/// all drawn from one 7-element array (center mic + 6 on a 4 cm ring).
pub fn test_geometries() -> Vec<ArrayGeometry> {
    ["circ_m2a", "circ_m2b", "circ_m3a", "circ_m3b", "circ_m4a", "circ_m4b", "circ_m5", "circ_m7"]
        .iter()
        .map(|n| preset(n).expect("builtin"))
        .collect()
}

pub fn preset_names() -> Vec<&'static str> {
    vec![
        "linear4_3cm",
        "linear4_5cm",
        "linear4_8cm",
        "mono",
        "circ_m2a",
        "circ_m2b",
        "circ_m3a",
        "circ_m3b",
        "circ_m4a",
        "circ_m4b",
        "circ_m5",
        "circ_m7",
    ]
}

/// Named preset geometries.
///
/// The circular subsets pick from the full 7-element array, indexed
/// 0 = center, then 1..=6 counterclockwise on the ring starting on the
/// +x axis at 60 degree steps. Subsets that keep the center mic keep it
/// as the reference; ring-only subsets use the ring mic at 0 degrees.
pub fn preset(name: &str) -> Result<ArrayGeometry> {
    let full = make_geometry(GeometryKind::Circular { count: 7, radius_m: 0.04 })?;
    let named = |indices: &[usize]| full.subset(name, indices);
    match name {
        "linear4_3cm" => rename(make_geometry(GeometryKind::Linear { count: 4, spacing_m: 0.03 })?, name),
        "linear4_5cm" => rename(make_geometry(GeometryKind::Linear { count: 4, spacing_m: 0.05 })?, name),
        "linear4_8cm" => rename(make_geometry(GeometryKind::Linear { count: 4, spacing_m: 0.08 })?, name),
        "mono" => ArrayGeometry::new("mono", vec![[0.0, 0.0, 0.0]]),
        // Pairs: center + ring mic, and a diametral ring pair.
        "circ_m2a" => named(&[0, 1]),
        "circ_m2b" => named(&[1, 4]),
        // Triples: center + diameter, and an equilateral triangle.
        "circ_m3a" => named(&[0, 1, 4]),
        "circ_m3b" => named(&[1, 3, 5]),
        // Quads: center + triangle, and a rectangle on the ring.
        "circ_m4a" => named(&[0, 1, 3, 5]),
        "circ_m4b" => named(&[1, 2, 4, 5]),
        "circ_m5" => named(&[0, 1, 2, 4, 5]),
        "circ_m7" => named(&[0, 1, 2, 3, 4, 5, 6]),
        other => Err(SimError::BadGeometry(format!("unknown preset '{other}'"))),
    }
}

fn rename(mut geom: ArrayGeometry, name: &str) -> Result<ArrayGeometry> {
    geom.name = name.to_string();
    Ok(geom)
}
