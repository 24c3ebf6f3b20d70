//! Synthetic source-localization scenes.
//!
//! A scene is a sparse non-negative image `y` whose every active pixel is
//! blurred by its own PSF, a convex combination `Σ_k α_k[i,j] h_k` of the
//! dictionary kernels. Writing `x_k = α_k ⊙ y` turns this spatially variant
//! blur into the ordinary synthesis model `s = Σ_k h_k ⊛ x_k + n`.
//!
//! All randomness comes from a single `ChaCha8Rng` seeded with
//! `SeedableRng::seed_from_u64(spec.seed)` and is consumed in a fixed order:
//! source positions, amplitudes, mixing weights, then noise in row-major
//! pixel order.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};

use crate::conv::forward;
use crate::error::{CgscError, Result};
use crate::metrics::Source;
use crate::types::{FeatureStack, Image, Kernel, KernelDictionary};

/// Placement attempts allowed per requested source.
const PLACEMENT_RETRIES: usize = 1000;

/// How the per-source mixing weights `α_k` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    /// One kernel, chosen uniformly, per source.
    SingleKernel,
    /// Uniform over the probability simplex (flat Dirichlet).
    RandomConvex,
    /// `K` broad Gaussian bumps with random centres, normalized per pixel.
    SmoothField,
}

impl std::str::FromStr for AlphaMode {
    type Err = CgscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_kernel" => Ok(Self::SingleKernel),
            "random_convex" => Ok(Self::RandomConvex),
            "smooth_field" => Ok(Self::SmoothField),
            other => Err(CgscError::InvalidParameter {
                name: "alpha_mode",
                reason: format!("unknown mode {other:?}"),
            }),
        }
    }
}

impl std::fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SingleKernel => "single_kernel",
            Self::RandomConvex => "random_convex",
            Self::SmoothField => "smooth_field",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub n_sources: usize,
    /// Minimum Chebyshev distance between two sources.
    pub min_separation: usize,
    /// Inclusive range of source amplitudes `y[i,j]`.
    pub amplitude_range: (f64, f64),
    pub alpha_mode: AlphaMode,
    /// Standard deviation of the i.i.d. Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            n_sources: 5,
            min_separation: 4,
            amplitude_range: (1.0, 2.0),
            alpha_mode: AlphaMode::RandomConvex,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(CgscError::InvalidParameter {
                name: "scene size",
                reason: format!("{}x{} is empty", self.rows, self.cols),
            });
        }
        let (lo, hi) = self.amplitude_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(CgscError::InvalidParameter {
                name: "amplitude_range",
                reason: format!("need 0 < min <= max, got [{lo}, {hi}]"),
            });
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(CgscError::InvalidParameter {
                name: "noise_sigma",
                reason: format!("must be non-negative, got {}", self.noise_sigma),
            });
        }
        Ok(())
    }
}

/// The observation produced by [`generate`]; groups and `λ` are chosen by
/// the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub s: Image,
    pub w: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub y: Image,
    pub alphas: FeatureStack,
    pub x_true: FeatureStack,
    pub sources: Vec<Source>,
}

/// Normalized-area Gaussian kernel of odd or even size, anchored at the
/// floor centre.
pub fn gaussian_kernel(rows: usize, cols: usize, sigma_row: f64, sigma_col: f64) -> Result<Kernel> {
    let (cr, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let mut data = Array2::from_shape_fn((rows, cols), |(i, j)| {
        let dr = (i as f64 - cr) / sigma_row;
        let dc = (j as f64 - cc) / sigma_col;
        (-0.5 * (dr * dr + dc * dc)).exp()
    });
    let total = data.sum();
    if total > 0.0 {
        data /= total;
    }
    Kernel::new(data)
}

fn place_sources(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let sep = spec.min_separation.max(1);
    let mut placed: Vec<(usize, usize)> = Vec::with_capacity(spec.n_sources);
    let budget = PLACEMENT_RETRIES * spec.n_sources;
    let mut attempts = 0;
    while placed.len() < spec.n_sources {
        if attempts == budget {
            return Err(CgscError::PlacementFailed {
                requested: spec.n_sources,
                placed: placed.len(),
                min_separation: spec.min_separation,
            });
        }
        attempts += 1;
        let cand = (rng.random_range(0..spec.rows), rng.random_range(0..spec.cols));
        let clear = placed
            .iter()
            .all(|&(r, c)| r.abs_diff(cand.0).max(c.abs_diff(cand.1)) >= sep);
        if clear {
            placed.push(cand);
        }
    }
    Ok(placed)
}

fn mixing_weights(
    spec: &SceneSpec,
    k: usize,
    positions: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    match spec.alpha_mode {
        AlphaMode::SingleKernel => positions
            .iter()
            .map(|_| {
                let pick = rng.random_range(0..k);
                (0..k).map(|kk| if kk == pick { 1.0 } else { 0.0 }).collect()
            })
            .collect(),
        AlphaMode::RandomConvex => positions
            .iter()
            .map(|_| {
                let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = e.iter().sum();
                e.into_iter().map(|v| v / total).collect()
            })
            .collect(),
        AlphaMode::SmoothField => {
            let width = spec.rows.max(spec.cols) as f64 / 2.0;
            let centres: Vec<(f64, f64)> = (0..k)
                .map(|_| {
                    (
                        rng.random_range(0.0..spec.rows as f64),
                        rng.random_range(0.0..spec.cols as f64),
                    )
                })
                .collect();
            positions
                .iter()
                .map(|&(r, c)| {
                    let f: Vec<f64> = centres
                        .iter()
                        .map(|&(cr, cc)| {
                            let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                            (-d2 / (2.0 * width * width)).exp()
                        })
                        .collect();
                    let total: f64 = f.iter().sum();
                    f.into_iter().map(|v| v / total).collect()
                })
                .collect()
        }
    }
}

/// Draws a scene and renders its observation through `dict`.
pub fn generate(spec: &SceneSpec, dict: &KernelDictionary) -> Result<(Observation, GroundTruth)> {
    spec.validate()?;
    if dict.norm_target().is_none() {
        return Err(CgscError::NotNormalized);
    }
    let k = dict.len();
    let (m, n) = (spec.rows, spec.cols);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let positions = place_sources(spec, &mut rng)?;
    let (lo, hi) = spec.amplitude_range;
    let amplitudes: Vec<f64> = positions
        .iter()
        .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect();
    let weights = mixing_weights(spec, k, &positions, &mut rng);

    let mut y = Image::zeros((m, n));
    let mut alphas = FeatureStack::zeros((k, m, n));
    let mut x_true = FeatureStack::zeros((k, m, n));
    let mut sources = Vec::with_capacity(positions.len());
    for ((&(r, c), &amp), alpha) in positions.iter().zip(&amplitudes).zip(&weights) {
        y[[r, c]] = amp;
        for (kk, &a) in alpha.iter().enumerate() {
            alphas[[kk, r, c]] = a;
            x_true[[kk, r, c]] = a * amp;
        }
        sources.push(Source {
            row: r,
            col: c,
            amplitude: amp,
        });
    }

    let mut s = forward(dict, &x_true)?;
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        s.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok((
        Observation {
            s,
            w: Image::ones((m, n)),
        },
        GroundTruth {
            y,
            alphas,
            x_true,
            sources,
        },
    ))
}

/// Splits feature maps into the total intensity `y = Σ_k x_k` and the
/// mixing weights `α_k = x_k / y` (zero wherever `y ≤ eps`).
pub fn reconstruct_y_alpha(x: &FeatureStack, eps: f64) -> (Image, FeatureStack) {
    let y = x.sum_axis(Axis(0));
    let mut alphas = FeatureStack::zeros(x.dim());
    for (mut a_k, x_k) in alphas.outer_iter_mut().zip(x.outer_iter()) {
        ndarray::Zip::from(&mut a_k)
            .and(&x_k)
            .and(&y)
            .for_each(|a, &xv, &yv| {
                if yv > eps {
                    *a = xv / yv;
                }
            });
    }
    (y, alphas)
}
