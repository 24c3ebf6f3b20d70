//! The `synth`, `solve`, `eval` and `norm-check` commands.
//!
//! Each command reads everything it needs from a [`Config`] and writes its
//! products into the directory named by the `out` key.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use cgsc_core::synth::gaussian_kernel;
use cgsc_core::{
    across_k_groups, apg_solve, detect_sources, generate, groups_from_labels, match_and_score,
    normalize_kernels, power_iteration, recon_error, reconstruct_y_alpha, singleton_groups, tile_groups,
    AlphaMode, FeatureStack, GroupPartition, Image, Kernel, KernelDictionary, Problem, SceneSpec,
    SolveTrace, SolverConfig, Source,
};
use ndarray::{Array3, Axis, Ix2, Ix3};

use crate::config::Config;
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const S_FILE: &str = "s.tensor";
pub const W_FILE: &str = "w.tensor";
pub const KERNELS_FILE: &str = "kernels.tensor";
pub const X_TRUE_FILE: &str = "x_true.tensor";
pub const Y_FILE: &str = "y.tensor";
pub const ALPHAS_FILE: &str = "alphas.tensor";
pub const SOURCES_FILE: &str = "sources.csv";
pub const X_HAT_FILE: &str = "x_hat.tensor";
pub const Y_HAT_FILE: &str = "y_hat.tensor";
pub const ALPHA_HAT_FILE: &str = "alpha_hat.tensor";
pub const TRACE_FILE: &str = "trace.csv";
pub const EVAL_FILE: &str = "eval.csv";

const DEFAULT_OUT: &str = "out";
const POWER_ITERS: usize = 100;
const POWER_TOL: f64 = 1e-8;

fn out_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = cfg.path("out").unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn load_image(path: &Path) -> Result<Image> {
    match read_tensor(path)? {
        Tensor::Real(a) => a
            .into_dimensionality::<Ix2>()
            .map_err(|_| anyhow!("{}: expected a 2-D tensor", path.display())),
        Tensor::Labels(_) => bail!("{}: expected real values, found labels", path.display()),
    }
}

fn load_stack(path: &Path) -> Result<FeatureStack> {
    match read_tensor(path)? {
        Tensor::Real(a) => a
            .into_dimensionality::<Ix3>()
            .map_err(|_| anyhow!("{}: expected a 3-D tensor", path.display())),
        Tensor::Labels(_) => bail!("{}: expected real values, found labels", path.display()),
    }
}

fn save_image(dir: &Path, name: &str, a: &Image) -> Result<()> {
    Ok(write_tensor(dir.join(name), &Tensor::Real(a.clone().into_dyn()))?)
}

fn save_stack(dir: &Path, name: &str, a: &FeatureStack) -> Result<()> {
    Ok(write_tensor(dir.join(name), &Tensor::Real(a.clone().into_dyn()))?)
}

/// Kernels from the comma-separated `kernels` paths: either one `K × P1 × P2`
/// tensor or several 2-D tensors. Anchors are the floor centres.
pub fn load_kernels(cfg: &Config) -> Result<Option<KernelDictionary>> {
    let Some(paths) = cfg.list::<String>("kernels")? else {
        return Ok(None);
    };
    let mut kernels = Vec::new();
    for p in &paths {
        match read_tensor(p)? {
            Tensor::Real(a) if a.ndim() == 3 => {
                let a = a.into_dimensionality::<Ix3>().unwrap();
                for h in a.outer_iter() {
                    kernels.push(Kernel::new(h.to_owned())?);
                }
            }
            Tensor::Real(a) => kernels.push(Kernel::new(a.into_dimensionality::<Ix2>().unwrap())?),
            Tensor::Labels(_) => bail!("{p}: expected kernel values, found labels"),
        }
    }
    Ok(Some(KernelDictionary::new(kernels)?))
}

fn save_kernels(dir: &Path, dict: &KernelDictionary) -> Result<()> {
    let (p1, p2) = dict.kernels()[0].dim();
    if dict.kernels().iter().all(|h| h.dim() == (p1, p2)) {
        let mut all = Array3::zeros((dict.len(), p1, p2));
        for (mut slot, h) in all.outer_iter_mut().zip(dict.kernels()) {
            slot.assign(&h.data());
        }
        write_tensor(dir.join(KERNELS_FILE), &Tensor::Real(all.into_dyn()))?;
    } else {
        for (k, h) in dict.kernels().iter().enumerate() {
            let name = format!("kernel_{}.tensor", k + 1);
            write_tensor(dir.join(name), &Tensor::Real(h.data().to_owned().into_dyn()))?;
        }
    }
    Ok(())
}

/// Gaussian kernels from `kernel_size` and `kernel_sigmas`; each sigma entry
/// is either `s` (isotropic) or `s_row:s_col`.
fn builtin_kernels(cfg: &Config) -> Result<KernelDictionary> {
    let size: usize = cfg.get_or("kernel_size", 7)?;
    ensure!(size > 0, "kernel_size must be positive");
    let spec = cfg.raw("kernel_sigmas").unwrap_or("1.0,1.6,1.0:2.2");
    let mut kernels = Vec::new();
    for entry in spec.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (sr, sc) = match entry.split_once(':') {
            Some((a, b)) => (a.trim().parse::<f64>()?, b.trim().parse::<f64>()?),
            None => {
                let s = entry.parse::<f64>()?;
                (s, s)
            }
        };
        ensure!(sr > 0.0 && sc > 0.0, "kernel sigma {entry:?} must be positive");
        kernels.push(gaussian_kernel(size, size, sr, sc)?);
    }
    Ok(KernelDictionary::new(kernels)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub seed: u64,
    pub n_sources: usize,
    pub out: PathBuf,
}

pub fn cmd_synth(cfg: &Config) -> Result<SynthSummary> {
    let spec = SceneSpec {
        rows: cfg.get_or("rows", 32)?,
        cols: cfg.get_or("cols", 32)?,
        n_sources: cfg.get_or("n_sources", 5)?,
        min_separation: cfg.get_or("min_separation", 4)?,
        amplitude_range: (cfg.get_or("amplitude_min", 1.0)?, cfg.get_or("amplitude_max", 2.0)?),
        alpha_mode: cfg.get_or("alpha_mode", AlphaMode::RandomConvex)?,
        noise_sigma: cfg.get_or("noise_sigma", 0.0)?,
        seed: cfg.get_or("seed", 0)?,
    };
    let raw = match load_kernels(cfg)? {
        Some(d) => d,
        None => builtin_kernels(cfg)?,
    };
    let w = Image::ones((spec.rows, spec.cols));
    let dict = normalize_kernels(&raw, &w)?;
    let (obs, truth) = generate(&spec, &dict)?;

    let dir = out_dir(cfg)?;
    save_image(&dir, S_FILE, &obs.s)?;
    save_image(&dir, W_FILE, &obs.w)?;
    save_stack(&dir, X_TRUE_FILE, &truth.x_true)?;
    save_image(&dir, Y_FILE, &truth.y)?;
    save_stack(&dir, ALPHAS_FILE, &truth.alphas)?;
    save_kernels(&dir, &dict)?;
    write_sources(&dir.join(SOURCES_FILE), &truth.sources)?;
    Ok(SynthSummary {
        seed: spec.seed,
        n_sources: truth.sources.len(),
        out: dir,
    })
}

pub fn write_sources(path: &Path, sources: &[Source]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    wtr.write_record(["i", "j", "amplitude"])?;
    for s in sources {
        wtr.write_record([s.row.to_string(), s.col.to_string(), s.amplitude.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_sources(path: &Path) -> Result<Vec<Source>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        ensure!(rec.len() == 3, "{}: expected 3 columns i,j,amplitude", path.display());
        out.push(Source {
            row: rec[0].trim().parse()?,
            col: rec[1].trim().parse()?,
            amplitude: rec[2].trim().parse()?,
        });
    }
    Ok(out)
}

/// Parses a `groups` value: `singleton`, `across-k`, `tiles:H,W` or
/// `file:PATH`. Tile groups use the `tile_subsets` key (`1,2;3` style, all
/// kernels in one subset by default).
pub fn build_groups(cfg: &Config, m: usize, n: usize, k: usize) -> Result<GroupPartition> {
    let spec = cfg.raw("groups").unwrap_or("singleton");
    if spec == "singleton" {
        return Ok(singleton_groups(m, n, k));
    }
    if spec == "across-k" || spec == "across_k" {
        return Ok(across_k_groups(m, n, k));
    }
    if let Some(dims) = spec.strip_prefix("tiles:") {
        let (h, w) = dims
            .split_once(',')
            .ok_or_else(|| anyhow!("groups: expected tiles:H,W, got {spec:?}"))?;
        let subsets: Vec<Vec<usize>> = match cfg.raw("tile_subsets") {
            None => vec![(1..=k).collect()],
            Some(s) => s
                .split(';')
                .map(|part| {
                    part.split(',')
                        .map(|v| v.trim().parse::<usize>().map_err(|e| anyhow!("tile_subsets: {e}")))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?,
        };
        return Ok(tile_groups(m, n, k, h.trim().parse()?, w.trim().parse()?, &subsets)?);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let labels = match read_tensor(path)? {
            Tensor::Labels(a) => a
                .into_dimensionality::<Ix3>()
                .map_err(|_| anyhow!("{path}: expected a 3-D label tensor"))?,
            Tensor::Real(_) => bail!("{path}: expected a label tensor"),
        };
        ensure!(
            labels.dim() == (m, n, k),
            "{path}: labels are {:?}, problem needs {m}x{n}x{k}",
            labels.shape()
        );
        ensure!(labels.iter().all(|&l| l >= 0), "{path}: labels must be non-negative");
        return Ok(groups_from_labels(&labels.mapv(|l| l as u32)));
    }
    bail!("groups: unknown specification {spec:?}")
}

pub fn solver_config(cfg: &Config) -> Result<SolverConfig> {
    let d = SolverConfig::default();
    Ok(SolverConfig {
        max_iters: cfg.get_or("max_iters", d.max_iters)?,
        rel_tol: cfg.get_or("rel_tol", d.rel_tol)?,
        step: cfg.get_or("step", d.step)?,
        enforce_norm_bound: cfg.get_or("enforce_norm_bound", d.enforce_norm_bound)?,
        trace_every: cfg.get_or("trace_every", d.trace_every)?,
        project_before_prox: cfg.get_or("project_before_prox", d.project_before_prox)?,
    })
}

fn observation_and_weights(cfg: &Config) -> Result<(Image, Image)> {
    let s_path = cfg.path("s").ok_or_else(|| anyhow!("missing required config key s"))?;
    let s = load_image(&s_path)?;
    let w = match cfg.path("w") {
        Some(p) => load_image(&p)?,
        None => Image::ones(s.dim()),
    };
    Ok((s, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub out: PathBuf,
}

pub fn cmd_solve(cfg: &Config) -> Result<SolveSummary> {
    let (s, w) = observation_and_weights(cfg)?;
    let raw = load_kernels(cfg)?.ok_or_else(|| anyhow!("missing required config key kernels"))?;
    let dict = normalize_kernels(&raw, &w)?;
    let (m, n) = s.dim();
    let groups = build_groups(cfg, m, n, dict.len())?;
    let problem = Problem {
        s,
        w,
        dict,
        groups,
        lambda: cfg.get_or("lambda", 0.01)?,
    };
    let solver = solver_config(cfg)?;
    let (x, trace) = apg_solve(&problem, &solver, None)?;
    let (y, alphas) = reconstruct_y_alpha(&x, cfg.get_or("alpha_eps", 1e-12)?);

    let dir = out_dir(cfg)?;
    save_stack(&dir, X_HAT_FILE, &x)?;
    save_image(&dir, Y_HAT_FILE, &y)?;
    save_stack(&dir, ALPHA_HAT_FILE, &alphas)?;
    write_trace(&dir.join(TRACE_FILE), &trace)?;
    Ok(SolveSummary {
        iterations: trace.iterations,
        converged: trace.converged,
        objective: trace.records.last().map_or(f64::NAN, |r| r.objective),
        out: dir,
    })
}

pub fn write_trace(path: &Path, trace: &SolveTrace) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    wtr.write_record(["iter", "objective", "fidelity", "regularizer", "iterate_change"])?;
    for r in &trace.records {
        wtr.write_record([
            r.iter.to_string(),
            r.objective.to_string(),
            r.fidelity.to_string(),
            r.regularizer.to_string(),
            r.iterate_change.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub rel_l2: f64,
    pub support_iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_match_distance: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub detect_threshold: f64,
    pub detect_separation: usize,
    pub match_radius: usize,
}

pub const EVAL_HEADER: [&str; 12] = [
    "rel_l2",
    "support_iou",
    "precision",
    "recall",
    "f1",
    "mean_match_distance",
    "true_positives",
    "false_positives",
    "false_negatives",
    "detect_threshold",
    "detect_separation",
    "match_radius",
];

/// Scores `x_hat` against `x_true`.
///
/// Truth sources come from the `sources` CSV when given, otherwise from the
/// non-zero pixels of `Σ_k x_true`. Detection runs on `Σ_k x_hat` with the
/// absolute `detect_threshold`, or `detect_rel_threshold` (default 0.1)
/// times its maximum.
pub fn cmd_eval(cfg: &Config) -> Result<EvalRow> {
    let x_hat = load_stack(&cfg.path("x_hat").ok_or_else(|| anyhow!("missing required config key x_hat"))?)?;
    let x_true = load_stack(&cfg.path("x_true").ok_or_else(|| anyhow!("missing required config key x_true"))?)?;
    let (rel_l2, support_iou) = recon_error(&x_hat, &x_true)?;

    let truth = match cfg.path("sources") {
        Some(p) => read_sources(&p)?,
        None => x_true
            .sum_axis(Axis(0))
            .indexed_iter()
            .filter(|(_, &v)| v > 0.0)
            .map(|((row, col), &amplitude)| Source { row, col, amplitude })
            .collect(),
    };
    let y_hat = x_hat.sum_axis(Axis(0));
    let detect_threshold = match cfg.get::<f64>("detect_threshold")? {
        Some(t) => t,
        None => {
            let rel: f64 = cfg.get_or("detect_rel_threshold", 0.1)?;
            rel * y_hat.iter().fold(0.0_f64, |m, &v| m.max(v))
        }
    };
    let detect_separation = cfg.get_or("detect_separation", 2)?;
    let match_radius = cfg.get_or("match_radius", 1)?;
    let detected = detect_sources(&y_hat, detect_threshold, detect_separation);
    let report = match_and_score(&detected, &truth, match_radius);
    let row = EvalRow {
        rel_l2,
        support_iou,
        precision: report.precision,
        recall: report.recall,
        f1: report.f1,
        mean_match_distance: report.mean_match_distance,
        true_positives: report.true_positives,
        false_positives: report.false_positives,
        false_negatives: report.false_negatives,
        detect_threshold,
        detect_separation,
        match_radius,
    };
    let dir = out_dir(cfg)?;
    write_eval(&dir.join(EVAL_FILE), &row)?;
    Ok(row)
}

pub fn write_eval(path: &Path, row: &EvalRow) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    wtr.write_record(EVAL_HEADER)?;
    wtr.write_record([
        row.rel_l2.to_string(),
        row.support_iou.to_string(),
        row.precision.to_string(),
        row.recall.to_string(),
        row.f1.to_string(),
        row.mean_match_distance.to_string(),
        row.true_positives.to_string(),
        row.false_positives.to_string(),
        row.false_negatives.to_string(),
        row.detect_threshold.to_string(),
        row.detect_separation.to_string(),
        row.match_radius.to_string(),
    ])?;
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormCheck {
    pub raw_estimate: f64,
    pub normalized_estimate: f64,
    pub norm_target: f64,
    pub iterations: usize,
}

/// Operator norm of `x ↦ w ⊙ Σ_k h_k ⊛ x_k` before and after normalization.
///
/// The image size comes from `w`, then `s`, then the `rows`/`cols` keys.
pub fn cmd_norm_check(cfg: &Config) -> Result<NormCheck> {
    let raw = load_kernels(cfg)?.ok_or_else(|| anyhow!("missing required config key kernels"))?;
    let w = match (cfg.path("w"), cfg.path("s")) {
        (Some(p), _) => load_image(&p)?,
        (None, Some(p)) => Image::ones(load_image(&p)?.dim()),
        (None, None) => Image::ones((cfg.get_or("rows", 32)?, cfg.get_or("cols", 32)?)),
    };
    let seed = cfg.get_or("seed", 0)?;
    let iters = cfg.get_or("power_iters", POWER_ITERS)?;
    let before = power_iteration(&raw, &w, iters, POWER_TOL, seed);
    let dict = normalize_kernels(&raw, &w)?;
    let after = power_iteration(&dict, &w, iters, POWER_TOL, seed);
    Ok(NormCheck {
        raw_estimate: before.value,
        normalized_estimate: after.value,
        norm_target: dict.norm_target().expect("just normalized"),
        iterations: after.iterations,
    })
}
