//! Independent reference computations used by the integration and
//! acceptance tests. Nothing here calls the convolution kernels of the
//! library except the ISTA oracle, which deliberately reuses the operator
//! and prox but not the accelerated loop.

#![allow(dead_code)]

use cgsc_core::{
    adjoint, forward, normalize_kernels, prox_nonneg_group, FeatureStack, GroupPartition, Image,
    Kernel, KernelDictionary, Problem, ProxScaling,
};
use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `o[r,c] = Σ_{i,j} x[i,j] · h[r − i + a₁, c − j + a₂]`, summed literally.
pub fn naive_conv(h: &Kernel, x: &Image) -> Image {
    let (m, n) = x.dim();
    let (p1, p2) = h.dim();
    let (a1, a2) = h.anchor();
    let mut out = Image::zeros((m, n));
    for r in 0..m {
        for c in 0..n {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..n {
                    let p = r as isize - i as isize + a1 as isize;
                    let q = c as isize - j as isize + a2 as isize;
                    if p >= 0 && q >= 0 && (p as usize) < p1 && (q as usize) < p2 {
                        acc += x[[i, j]] * h.data()[[p as usize, q as usize]];
                    }
                }
            }
            out[[r, c]] = acc;
        }
    }
    out
}

pub fn naive_forward(dict: &KernelDictionary, x: &FeatureStack) -> Image {
    let (_, m, n) = x.dim();
    let mut out = Image::zeros((m, n));
    for (k, h) in dict.kernels().iter().enumerate() {
        out += &naive_conv(h, &x.index_axis(Axis(0), k).to_owned());
    }
    out
}

/// Spatially variant blur of `y` with per-pixel PSF `Σ_k α_k[i,j] h_k`.
pub fn mixture_oracle(dict: &KernelDictionary, y: &Image, alphas: &FeatureStack) -> Image {
    let (m, n) = y.dim();
    Image::from_shape_fn((m, n), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..n {
                let mut psf = 0.0;
                for (k, h) in dict.kernels().iter().enumerate() {
                    let (a1, a2) = h.anchor();
                    let (p1, p2) = h.dim();
                    let p = r as isize - i as isize + a1 as isize;
                    let q = c as isize - j as isize + a2 as isize;
                    if p >= 0 && q >= 0 && (p as usize) < p1 && (q as usize) < p2 {
                        psf += alphas[[k, i, j]] * h.data()[[p as usize, q as usize]];
                    }
                }
                acc += y[[i, j]] * psf;
            }
        }
        acc
    })
}

/// `(1/2)‖z − x‖² + θ‖z‖₂` for one block.
pub fn block_objective(z: &[f64], x: &[f64], theta: f64) -> f64 {
    let fit: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = z.iter().map(|a| a * a).sum::<f64>().sqrt();
    0.5 * fit + theta * norm
}

/// Minimum of [`block_objective`] over `z ≥ 0` by grid refinement: a
/// 7-point-per-axis grid around the incumbent, halved each round.
pub fn grid_block_min(x: &[f64], theta: f64) -> f64 {
    const PTS: usize = 7;
    const ROUNDS: usize = 45;
    let d = x.len();
    let mut centre: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let mut radius = x.iter().fold(1.0_f64, |m, v| m.max(v.abs())) + 1.0;
    let mut best = block_objective(&centre, x, theta);
    let mut z = vec![0.0; d];
    for _ in 0..ROUNDS {
        let mut best_z = centre.clone();
        let total = PTS.pow(d as u32);
        for mut code in 0..total {
            for (a, zc) in z.iter_mut().enumerate() {
                let t = code % PTS;
                code /= PTS;
                let off = radius * (t as f64 - (PTS / 2) as f64) / (PTS / 2) as f64;
                *zc = (centre[a] + off).max(0.0);
            }
            let f = block_objective(&z, x, theta);
            if f < best {
                best = f;
                best_z.copy_from_slice(&z);
            }
        }
        centre = best_z;
        radius *= 0.5;
    }
    best
}

/// Full prox objective `(1/2)‖z − x‖² + θ Σ_g ‖z_g‖₂`.
pub fn prox_objective(groups: &GroupPartition, z: &FeatureStack, x: &FeatureStack, theta: f64) -> f64 {
    let g = groups.group_count();
    let mut sq = vec![0.0; g + 1];
    let mut fit = 0.0;
    for ((k, i, j), &zv) in z.indexed_iter() {
        let l = groups.labels()[[i, j, k]] as usize;
        sq[l] += zv * zv;
        fit += (zv - x[[k, i, j]]).powi(2);
    }
    0.5 * fit + theta * sq[1..].iter().map(|v| v.sqrt()).sum::<f64>()
}

/// Brute-force optimum of the prox objective, block by block.
pub fn prox_oracle_value(groups: &GroupPartition, x: &FeatureStack, theta: f64) -> f64 {
    let g = groups.group_count();
    let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); g + 1];
    for ((k, i, j), &v) in x.indexed_iter() {
        blocks[groups.labels()[[i, j, k]] as usize].push(v);
    }
    let ungrouped: f64 = blocks[0].iter().map(|&v| grid_block_min(&[v], 0.0)).sum();
    ungrouped + blocks[1..].iter().map(|b| grid_block_min(b, theta)).sum::<f64>()
}

/// Random partition of an `M × N × K` volume into blocks of size 1..=4,
/// roughly a fifth of them left ungrouped.
pub fn random_small_partition(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize) -> GroupPartition {
    let mut triples: Vec<(usize, usize, usize)> = (0..m)
        .flat_map(|i| (0..n).flat_map(move |j| (0..k).map(move |kk| (i, j, kk))))
        .collect();
    triples.shuffle(rng);
    let mut labels = Array3::<u32>::zeros((m, n, k));
    let mut next = 1;
    let mut rest = &triples[..];
    while !rest.is_empty() {
        let size = rng.random_range(1..=4).min(rest.len());
        let (chunk, tail) = rest.split_at(size);
        let label = if rng.random_bool(0.2) { 0 } else { next };
        if label != 0 {
            next += 1;
        }
        for &t in chunk {
            labels[[t.0, t.1, t.2]] = label;
        }
        rest = tail;
    }
    GroupPartition::from_dense_labels(labels).unwrap()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, max: usize, nonneg: bool) -> Kernel {
    let p1 = rng.random_range(1..=max);
    let p2 = rng.random_range(1..=max);
    let lo = if nonneg { 0.0 } else { -1.0 };
    let data = Array2::from_shape_simple_fn((p1, p2), || rng.random_range(lo..1.0));
    let anchor = (rng.random_range(0..p1), rng.random_range(0..p2));
    Kernel::with_anchor(data, anchor).unwrap()
}

/// The fixed 8×8, K = 2 singleton-group instance used by the convergence
/// checks: two non-negative 3×3 kernels, unit weights and a noisy sparse
/// scene.
pub fn small_lasso_problem(lambda: f64) -> Problem {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(20240521);
    let kernels = vec![
        Kernel::new(Array2::from_shape_simple_fn((3, 3), || rng.random_range(0.1..1.0))).unwrap(),
        Kernel::new(Array2::from_shape_simple_fn((3, 3), || rng.random_range(0.1..1.0))).unwrap(),
    ];
    let w = Image::ones((8, 8));
    let dict = normalize_kernels(&KernelDictionary::new(kernels).unwrap(), &w).unwrap();
    let mut x = FeatureStack::zeros((2, 8, 8));
    for _ in 0..6 {
        let k = rng.random_range(0..2);
        let (i, j) = (rng.random_range(0..8), rng.random_range(0..8));
        x[[k, i, j]] = rng.random_range(1.0..3.0);
    }
    let mut s = forward(&dict, &x).unwrap();
    s.mapv_inplace(|v| v + rng.random_range(-0.02..0.02));
    Problem {
        s,
        w,
        dict,
        groups: cgsc_core::singleton_groups(8, 8, 2),
        lambda,
    }
}

/// Plain proximal gradient (no momentum) at step 1/2.
pub fn ista(p: &Problem, iters: usize) -> FeatureStack {
    let step = 0.5;
    let scaling = ProxScaling::new(step * p.lambda).unwrap();
    let mut x = p.zero_stack();
    for _ in 0..iters {
        let r = (&forward(&p.dict, &x).unwrap() - &p.s) * &p.w;
        let g = adjoint(&p.dict, &p.w, &r).unwrap();
        let u = &x - &(g * (2.0 * step));
        x = prox_nonneg_group(&p.groups, &u, scaling).unwrap();
    }
    x
}

/// Objective evaluated from scratch with the naive convolution.
pub fn naive_objective(p: &Problem, x: &FeatureStack) -> f64 {
    let r = (&naive_forward(&p.dict, x) - &p.s) * &p.w;
    let fid: f64 = r.iter().map(|v| v * v).sum();
    let g = p.groups.group_count();
    let mut sq = vec![0.0; g + 1];
    for ((k, i, j), &v) in x.indexed_iter() {
        sq[p.groups.labels()[[i, j, k]] as usize] += v * v;
    }
    fid + p.lambda * sq[1..].iter().map(|v| v.sqrt()).sum::<f64>()
}

/// Worst KKT violation of the non-negative lasso at `x`:
/// `|2g + λ|` on the support and `max(0, −(2g + λ))` off it, where
/// `g = A*(w ⊙ w ⊙ (A x − s))` is evaluated with the naive convolution.
pub fn lasso_kkt_violation(p: &Problem, x: &FeatureStack) -> f64 {
    let r = (&naive_forward(&p.dict, x) - &p.s) * &p.w * &p.w;
    let mut worst = 0.0_f64;
    for (k, h) in p.dict.kernels().iter().enumerate() {
        let (m, n) = r.dim();
        let (a1, a2) = h.anchor();
        let (p1, p2) = h.dim();
        for i in 0..m {
            for j in 0..n {
                // [A* r]_{k,i,j} = Σ_{r,c} r[r,c] h[r − i + a₁, c − j + a₂]
                let mut g = 0.0;
                for rr in 0..m {
                    for cc in 0..n {
                        let pp = rr as isize - i as isize + a1 as isize;
                        let qq = cc as isize - j as isize + a2 as isize;
                        if pp >= 0 && qq >= 0 && (pp as usize) < p1 && (qq as usize) < p2 {
                            g += r[[rr, cc]] * h.data()[[pp as usize, qq as usize]];
                        }
                    }
                }
                let t = 2.0 * g + p.lambda;
                let v = if x[[k, i, j]] > 0.0 { t.abs() } else { (-t).max(0.0) };
                worst = worst.max(v);
            }
        }
    }
    worst
}
