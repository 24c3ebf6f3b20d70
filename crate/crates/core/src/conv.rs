//! The synthesis operator `A: {x_k} ↦ Σ_k h_k ⊛ x_k`, its weighted adjoint
//! and the kernel normalization that bounds its norm.
//!
//! Convolutions are zero-padded and same-size:
//!
//! ```text
//! o[r, c] = Σ_{i,j} x[i, j] · h[r − i + a₁, c − j + a₂]
//! ```
//!
//! where `(a₁, a₂)` is the kernel anchor. They are evaluated by direct
//! summation, tap by tap, in a fixed order so results are bit-reproducible
//! regardless of thread count.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{CgscError, Result};
use crate::types::{max_abs, FeatureStack, Image, Kernel, KernelDictionary, Problem};

/// Below this many multiply-adds per map the per-kernel work stays on the
/// calling thread.
const PAR_WORK_THRESHOLD: usize = 1 << 16;

/// Result of [`power_iteration`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorNormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub tolerance: f64,
}

/// Zero-padded same-size convolution of `x` with `h` about its anchor.
pub fn conv_same(h: &Kernel, x: ArrayView2<f64>) -> Image {
    let mut out = Image::zeros(x.dim());
    conv_accumulate(h, x, &mut out);
    out
}

fn conv_accumulate(h: &Kernel, x: ArrayView2<f64>, out: &mut Image) {
    let (m, n) = x.dim();
    let (a1, a2) = h.anchor();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("owned image is contiguous");
    for ((p, q), &hv) in h.data().indexed_iter() {
        if hv == 0.0 {
            continue;
        }
        // o[r, c] += hv * x[r + di, c + dj]
        let di = a1 as isize - p as isize;
        let dj = a2 as isize - q as isize;
        let r_lo = (-di).max(0) as usize;
        let r_hi = (m as isize - di).min(m as isize).max(0) as usize;
        let c_lo = (-dj).max(0) as usize;
        let c_hi = (n as isize - dj).min(n as isize).max(0) as usize;
        if r_lo >= r_hi || c_lo >= c_hi {
            continue;
        }
        for r in r_lo..r_hi {
            let src_row = (r as isize + di) as usize * n;
            let src = &xs[(src_row as isize + c_lo as isize + dj) as usize..];
            let dst = &mut os[r * n + c_lo..r * n + c_hi];
            for (o, &xv) in dst.iter_mut().zip(src) {
                *o += hv * xv;
            }
        }
    }
}

fn use_parallel(dict: &KernelDictionary, m: usize, n: usize) -> bool {
    let taps: usize = dict.kernels().iter().map(|h| h.dim().0 * h.dim().1).sum();
    dict.len() > 1 && taps * m * n >= PAR_WORK_THRESHOLD
}

/// `Σ_k h_k ⊛ x_k`, accumulated in ascending `k`.
pub fn forward(dict: &KernelDictionary, x: &FeatureStack) -> Result<Image> {
    let (k, m, n) = x.dim();
    if k != dict.len() {
        return Err(CgscError::DimensionMismatch(format!(
            "feature stack has {k} maps but dictionary has {} kernels",
            dict.len()
        )));
    }
    let mut out = Image::zeros((m, n));
    if use_parallel(dict, m, n) {
        let terms: Vec<Image> = dict
            .kernels()
            .par_iter()
            .enumerate()
            .map(|(k, h)| conv_same(h, x.index_axis(Axis(0), k)))
            .collect();
        for t in &terms {
            out += t;
        }
    } else {
        for (k, h) in dict.kernels().iter().enumerate() {
            out += &conv_same(h, x.index_axis(Axis(0), k));
        }
    }
    Ok(out)
}

/// Kernel with its elements reversed along both axes; the anchor follows.
pub fn matched_filter(h: &Kernel) -> Kernel {
    let (p1, p2) = h.dim();
    let (a1, a2) = h.anchor();
    let flipped = Array2::from_shape_fn((p1, p2), |(i, j)| h.data()[[p1 - 1 - i, p2 - 1 - j]]);
    Kernel::from_parts_unchecked(flipped, (p1 - 1 - a1, p2 - 1 - a2))
}

/// Adjoint of `v ↦ w ⊙ forward(dict, v)`: `u ↦ {h_k^m ⊛ (w ⊙ u)}`.
pub fn adjoint(dict: &KernelDictionary, w: &Image, u: &Image) -> Result<FeatureStack> {
    if w.dim() != u.dim() {
        return Err(CgscError::DimensionMismatch(format!(
            "weights {:?} vs image {:?}",
            w.shape(),
            u.shape()
        )));
    }
    let (m, n) = u.dim();
    let wu = w * u;
    let flipped: Vec<Kernel> = dict.kernels().iter().map(matched_filter).collect();
    let maps: Vec<Image> = if use_parallel(dict, m, n) {
        flipped.par_iter().map(|hm| conv_same(hm, wu.view())).collect()
    } else {
        flipped.iter().map(|hm| conv_same(hm, wu.view())).collect()
    };
    let mut out = FeatureStack::zeros((dict.len(), m, n));
    for (mut slot, map) in out.outer_iter_mut().zip(maps) {
        slot.assign(&map);
    }
    Ok(out)
}

/// Rescales every kernel to the common 1-norm `1 / (K ‖w‖_∞²)`.
///
/// With this scaling `‖w ⊙ A‖ ≤ 1 / (√K ‖w‖_∞)`, which is at most one
/// whenever `‖w‖_∞ ≥ 1/√K`.
pub fn normalize_kernels(dict: &KernelDictionary, w: &Image) -> Result<KernelDictionary> {
    let w_inf = max_abs(w);
    if !(w_inf > 0.0) || !w_inf.is_finite() {
        return Err(CgscError::ZeroWeights);
    }
    let target = 1.0 / (dict.len() as f64 * w_inf * w_inf);
    let kernels = dict
        .kernels()
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let norm = h.l1_norm();
            if !(norm > 0.0) {
                return Err(CgscError::ZeroKernel(k));
            }
            Ok(h.scaled(target / norm))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelDictionary::with_norm_target(kernels, target))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Estimates `‖v ↦ w ⊙ forward(dict, v)‖` by power iteration on `B*B`.
///
/// The start vector is standard normal from a ChaCha8 stream seeded with
/// `seed`. Iteration stops after `iters` rounds or once the estimate changes
/// by at most `tol` relative to itself.
pub fn power_iteration(
    dict: &KernelDictionary,
    w: &Image,
    iters: usize,
    tol: f64,
    seed: u64,
) -> OperatorNormEstimate {
    let (m, n) = w.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = FeatureStack::from_shape_simple_fn((dict.len(), m, n), || {
        StandardNormal.sample(&mut rng)
    });
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v /= norm;

    let mut estimate = 0.0;
    let mut done = 0;
    for it in 1..=iters.max(1) {
        done = it;
        let bv = w * &forward(dict, &v).expect("shapes built locally");
        let sigma = bv.iter().map(|a| a * a).sum::<f64>().sqrt();
        let prev = estimate;
        estimate = sigma;
        if sigma == 0.0 {
            break;
        }
        let mut next = adjoint(dict, w, &bv).expect("shapes built locally");
        let nn = dot(next.as_slice().unwrap(), next.as_slice().unwrap()).sqrt();
        if nn == 0.0 {
            break;
        }
        next /= nn;
        v = next;
        if it > 1 && (estimate - prev).abs() <= tol * estimate {
            break;
        }
    }
    OperatorNormEstimate {
        value: estimate,
        iterations: done,
        tolerance: tol,
    }
}

/// `‖w ⊙ (forward(dict, x) − s)‖₂²`.
pub fn weighted_residual_sq(p: &Problem, x: &FeatureStack) -> Result<f64> {
    let ax = forward(&p.dict, x)?;
    if ax.dim() != p.s.dim() {
        return Err(CgscError::DimensionMismatch(format!(
            "feature maps {:?} vs observation {:?}",
            ax.shape(),
            p.s.shape()
        )));
    }
    let mut acc = 0.0;
    Zip::from(&ax).and(&p.s).and(&p.w).for_each(|&a, &s, &w| {
        let r = w * (a - s);
        acc += r * r;
    });
    Ok(acc)
}
