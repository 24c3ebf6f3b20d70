//! Scoring of reconstructions against a planted ground truth.
//!
//! Distances are Chebyshev (`max(|Δrow|, |Δcol|)`) throughout. Matching is
//! greedy by ascending distance, not an optimal assignment.

use crate::error::{CgscError, Result};
use crate::types::{FeatureStack, Image};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub row: usize,
    pub col: usize,
    pub amplitude: f64,
}

impl Source {
    pub fn distance(&self, other: &Source) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean Chebyshev distance over matched pairs; 0 without matches.
    pub mean_match_distance: f64,
}

/// Local maxima of `y_hat` strictly above `threshold`, thinned greedily.
///
/// A pixel is a local maximum when no 8-neighbour exceeds it. Candidates are
/// visited by descending value (ties by row, then column) and kept when no
/// already-kept detection lies within Chebyshev distance `min_separation`.
pub fn detect_sources(y_hat: &Image, threshold: f64, min_separation: usize) -> Vec<Source> {
    let (m, n) = y_hat.dim();
    let mut candidates = Vec::new();
    for ((r, c), &v) in y_hat.indexed_iter() {
        if !(v > threshold) {
            continue;
        }
        let mut is_max = true;
        'nbhd: for rr in r.saturating_sub(1)..=(r + 1).min(m - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(n - 1) {
                if y_hat[[rr, cc]] > v {
                    is_max = false;
                    break 'nbhd;
                }
            }
        }
        if is_max {
            candidates.push(Source {
                row: r,
                col: c,
                amplitude: v,
            });
        }
    }
    candidates.sort_by(|a, b| {
        b.amplitude
            .total_cmp(&a.amplitude)
            .then((a.row, a.col).cmp(&(b.row, b.col)))
    });
    let mut kept: Vec<Source> = Vec::new();
    for cand in candidates {
        if kept.iter().all(|k| k.distance(&cand) > min_separation) {
            kept.push(cand);
        }
    }
    kept
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Greedy one-to-one matching of detections to truth within `radius`.
pub fn match_and_score(detected: &[Source], truth: &[Source], radius: usize) -> LocalizationReport {
    let mut pairs: Vec<(usize, (usize, usize), (usize, usize), usize, usize)> = Vec::new();
    for (di, d) in detected.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            let dist = d.distance(t);
            if dist <= radius {
                pairs.push((dist, (d.row, d.col), (t.row, t.col), di, ti));
            }
        }
    }
    pairs.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));

    let mut det_used = vec![false; detected.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut tp = 0;
    let mut dist_sum = 0usize;
    for (dist, _, _, di, ti) in pairs {
        if det_used[di] || truth_used[ti] {
            continue;
        }
        det_used[di] = true;
        truth_used[ti] = true;
        tp += 1;
        dist_sum += dist;
    }
    let fp = detected.len() - tp;
    let fn_ = truth.len() - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    LocalizationReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision,
        recall,
        f1,
        mean_match_distance: if tp == 0 { 0.0 } else { dist_sum as f64 / tp as f64 },
    }
}

/// Relative ℓ₂ error and support intersection-over-union.
///
/// The support of each stack is the set of entries above `1e-6` times its
/// own largest entry.
pub fn recon_error(x_hat: &FeatureStack, x_true: &FeatureStack) -> Result<(f64, f64)> {
    if x_hat.shape() != x_true.shape() {
        return Err(CgscError::ShapeMismatch(x_hat.shape().to_vec(), x_true.shape().to_vec()));
    }
    let diff: f64 = x_hat
        .iter()
        .zip(x_true.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let true_norm = x_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel_l2 = diff / true_norm.max(f64::MIN_POSITIVE);

    let cutoff = |x: &FeatureStack| 1e-6 * x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let (ch, ct) = (cutoff(x_hat), cutoff(x_true));
    let mut inter = 0usize;
    let mut union = 0usize;
    for (a, b) in x_hat.iter().zip(x_true.iter()) {
        let in_hat = a.abs() > ch;
        let in_true = b.abs() > ct;
        inter += usize::from(in_hat && in_true);
        union += usize::from(in_hat || in_true);
    }
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    Ok((rel_l2, iou))
}
