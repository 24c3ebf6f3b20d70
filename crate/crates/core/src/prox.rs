//! Non-negative group-sparsity regularizer and its proximal map.

use ndarray::Zip;

use crate::error::{CgscError, Result};
use crate::types::{FeatureStack, GroupPartition};

/// Threshold applied against each group norm.
///
/// For a gradient step of size `τ` on a problem with penalty weight `λ`
/// the solver uses `theta = τ·λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxScaling {
    theta: f64,
}

impl ProxScaling {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(CgscError::InvalidParameter {
                name: "theta",
                reason: format!("must be finite and non-negative, got {theta}"),
            });
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Sum of squares of `x` over each group; index 0 collects ungrouped triples.
fn group_sq_sums<F: Fn(f64) -> f64>(groups: &GroupPartition, x: &FeatureStack, f: F) -> Vec<f64> {
    let mut sums = vec![0.0; groups.group_count() + 1];
    let labels = groups.labels();
    for ((k, i, j), &v) in x.indexed_iter() {
        let g = labels[[i, j, k]] as usize;
        let t = f(v);
        sums[g] += t * t;
    }
    sums
}

/// `λ · Σ_g ‖x|_{G_g}‖₂`. Ungrouped triples contribute nothing.
pub fn regularizer_value(groups: &GroupPartition, x: &FeatureStack, lambda: f64) -> Result<f64> {
    groups.check_stack(x)?;
    let sums = group_sq_sums(groups, x, |v| v);
    Ok(lambda * sums[1..].iter().map(|s| s.sqrt()).sum::<f64>())
}

/// Proximal map of `θ Σ_g ‖z_g‖₂` restricted to `z ≥ 0`.
///
/// Negative entries are zeroed first; each group of the projected values is
/// then scaled by `(1 − θ/n_g)₊` where `n_g` is its 2-norm (groups with
/// `n_g ≤ θ` vanish). Ungrouped entries keep their projected value.
pub fn prox_nonneg_group(
    groups: &GroupPartition,
    x: &FeatureStack,
    scaling: ProxScaling,
) -> Result<FeatureStack> {
    groups.check_stack(x)?;
    let theta = scaling.theta();
    let sums = group_sq_sums(groups, x, |v| v.max(0.0));
    let factors: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(g, &sq)| {
            if g == 0 {
                return 1.0;
            }
            let norm = sq.sqrt();
            if norm <= theta || norm == 0.0 {
                0.0
            } else {
                1.0 - theta / norm
            }
        })
        .collect();
    let labels = groups.labels();
    let mut z = FeatureStack::zeros(x.dim());
    Zip::indexed(&mut z).and(x).for_each(|(k, i, j), z, &v| {
        *z = factors[labels[[i, j, k]] as usize] * v.max(0.0);
    });
    Ok(z)
}
