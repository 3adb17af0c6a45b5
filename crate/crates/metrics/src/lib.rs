//! Frame-level detection metrics: ROC curves, area under the curve, and
//! equal error rate.
//!
//! Scores are real-valued detector outputs (higher means more positive);
//! labels are 0/1. Ties are handled by grouping: the ROC has one operating
//! point per distinct score, so tied scores move the operating point
//! diagonally and the trapezoidal area equals the tie-corrected rank
//! statistic `P(s+ > s-) + 0.5 * P(s+ = s-)`.

use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scores and labels must have equal nonzero length (got {scores} and {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("ROC requires at least one positive and one negative label")]
    SingleClass,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// One ROC operating point: classify positive when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub fnr: f64,
}

/// ROC curve with one point per distinct score, thresholds descending.
///
/// The first point is `(threshold = +inf, fpr = 0, tpr = 0)` and the last
/// is at the minimum score with `fpr = 1, tpr = 1`. Both rates are
/// nondecreasing along the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    /// Trapezoidal area under the (fpr, tpr) curve.
    pub fn auc(&self) -> f64 {
        let mut area = 0.0;
        for pair in self.points.windows(2) {
            area += (pair[1].fpr - pair[0].fpr) * (pair[1].tpr + pair[0].tpr) * 0.5;
        }
        area
    }

    /// Equal error rate: the value where `fpr == fnr`, linearly
    /// interpolating between the two operating points that bracket the
    /// sign change of `fpr - fnr`.
    pub fn eer(&self) -> f64 {
        // fpr - fnr runs from -1 at +inf to +1 at the minimum threshold.
        let mut prev = self.points[0];
        for &p in &self.points[1..] {
            let d = p.fpr - p.fnr;
            if d >= 0.0 {
                if d == 0.0 {
                    return p.fpr;
                }
                let d0 = prev.fpr - prev.fnr;
                // d0 < 0 <= d, so the denominator is strictly positive.
                let t = -d0 / (d - d0);
                return prev.fpr + t * (p.fpr - prev.fpr);
            }
            prev = p;
        }
        // Unreachable for a valid curve: the final point has fpr=1, fnr=0.
        prev.fpr
    }

    /// Writes the curve as CSV with header `threshold,fpr,tpr,fnr`.
    /// The leading point's threshold is serialized as `inf`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "threshold,fpr,tpr,fnr")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{}", p.threshold, p.fpr, p.tpr, p.fnr)?;
        }
        Ok(())
    }
}

/// Builds the tie-grouped ROC curve for `scores` against 0/1 `labels`.
///
/// Requires equal nonzero lengths, finite scores, and both classes present.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricsError::BadLabel(bad));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let num_pos = labels.iter().filter(|&&l| l == 1).count();
    let num_neg = labels.len() - num_pos;
    if num_pos == 0 || num_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0, fnr: 1.0 });

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        // Consume the whole tie group before emitting a point.
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / num_pos as f64;
        let fpr = fp as f64 / num_neg as f64;
        points.push(RocPoint { threshold: score, fpr, tpr, fnr: 1.0 - tpr });
    }

    Ok(RocCurve { points })
}

/// Area under the ROC curve for `scores` against `labels`.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.auc())
}

/// Equal error rate for `scores` against `labels`.
pub fn eer(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.eer())
}
