//! Accelerated proximal gradient (FISTA) solver for
//!
//! ```text
//! min_{x ≥ 0}  ‖w ⊙ (Σ_k h_k ⊛ x_k − s)‖₂² + λ Σ_g ‖x|_{G_g}‖₂
//! ```
//!
//! Each iteration extrapolates with the momentum sequence
//! `t_{n+1} = (1 + √(1 + 4 t_n²)) / 2`, takes a gradient step of size `τ` on
//! the fidelity and applies [`prox_nonneg_group`] with threshold `τ·λ`.

use crate::conv::{adjoint, forward, power_iteration, weighted_residual_sq};
use crate::error::{CgscError, Result};
use crate::prox::{prox_nonneg_group, regularizer_value, ProxScaling};
use crate::types::{validate_problem, FeatureStack, Problem};

/// Largest accepted operator norm estimate when the bound is enforced.
pub const NORM_BOUND: f64 = 1.0 + 1e-6;

const NORM_CHECK_ITERS: usize = 100;
const NORM_CHECK_TOL: f64 = 1e-8;
const NORM_CHECK_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once `‖x_{n+1} − x_n‖ / max(1, ‖x_n‖)` falls to this value.
    pub rel_tol: f64,
    /// Gradient step `τ`. `1/2` is the reciprocal Lipschitz constant of the
    /// fidelity gradient when the operator norm is at most one.
    pub step: f64,
    /// Estimate the weighted operator norm before solving and refuse to run
    /// if it exceeds [`NORM_BOUND`].
    pub enforce_norm_bound: bool,
    /// Record every n-th iteration in the trace (the last one is always
    /// recorded). `0` records only the last.
    pub trace_every: usize,
    /// Project the gradient step onto `x ≥ 0` before the prox. The prox
    /// projects anyway, so this does not change the iterates.
    pub project_before_prox: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            rel_tol: 1e-8,
            step: 0.5,
            enforce_norm_bound: true,
            trace_every: 1,
            project_before_prox: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(CgscError::InvalidParameter {
                name: "max_iters",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(CgscError::InvalidParameter {
                name: "step",
                reason: format!("must be positive, got {}", self.step),
            });
        }
        if !(self.rel_tol >= 0.0) {
            return Err(CgscError::InvalidParameter {
                name: "rel_tol",
                reason: format!("must be non-negative, got {}", self.rel_tol),
            });
        }
        Ok(())
    }
}

/// Objective value split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub fidelity: f64,
    pub regularizer: f64,
}

pub fn objective(p: &Problem, x: &FeatureStack) -> Result<Objective> {
    let fidelity = weighted_residual_sq(p, x)?;
    let regularizer = regularizer_value(&p.groups, x, p.lambda)?;
    Ok(Objective {
        total: fidelity + regularizer,
        fidelity,
        regularizer,
    })
}

/// Gradient of the fidelity term, `2 A*(w ⊙ w ⊙ (A x − s))`.
pub fn fidelity_gradient(p: &Problem, x: &FeatureStack) -> Result<FeatureStack> {
    let mut r = forward(&p.dict, x)?;
    if r.dim() != p.s.dim() {
        return Err(CgscError::DimensionMismatch(format!(
            "feature maps {:?} vs observation {:?}",
            r.shape(),
            p.s.shape()
        )));
    }
    r -= &p.s;
    r *= &p.w;
    let mut g = adjoint(&p.dict, &p.w, &r)?;
    g *= 2.0;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub fidelity: f64,
    pub regularizer: f64,
    pub iterate_change: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveTrace {
    /// Smallest objective seen up to and including each record.
    pub fn running_min(&self) -> Vec<f64> {
        self.records
            .iter()
            .scan(f64::INFINITY, |best, r| {
                *best = best.min(r.objective);
                Some(*best)
            })
            .collect()
    }
}

/// Iterates of one solve: `x_prev`, `x_curr` and the momentum scalar.
#[derive(Debug, Clone)]
pub struct SolverState {
    x_prev: FeatureStack,
    x_curr: FeatureStack,
    momentum_t: f64,
    iter: usize,
}

fn l2_norm(x: &FeatureStack) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl SolverState {
    pub fn new(x0: FeatureStack) -> Self {
        Self {
            x_prev: x0.clone(),
            x_curr: x0,
            momentum_t: 1.0,
            iter: 0,
        }
    }

    pub fn current(&self) -> &FeatureStack {
        &self.x_curr
    }

    pub fn into_current(self) -> FeatureStack {
        self.x_curr
    }

    pub fn momentum(&self) -> f64 {
        self.momentum_t
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    /// Performs one iteration and returns the relative iterate change.
    pub fn step(&mut self, p: &Problem, cfg: &SolverConfig) -> Result<f64> {
        let t = self.momentum_t;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;

        let mut v = &self.x_curr - &self.x_prev;
        v *= beta;
        v += &self.x_curr;

        let grad = fidelity_gradient(p, &v)?;
        v.scaled_add(-cfg.step, &grad);
        if cfg.project_before_prox {
            v.mapv_inplace(|a| a.max(0.0));
        }
        let x_next = prox_nonneg_group(&p.groups, &v, ProxScaling::new(cfg.step * p.lambda)?)?;

        let change = l2_norm(&(&x_next - &self.x_curr)) / l2_norm(&self.x_curr).max(1.0);
        self.x_prev = std::mem::replace(&mut self.x_curr, x_next);
        self.momentum_t = t_next;
        self.iter += 1;
        Ok(change)
    }
}

/// Solves the problem from `x0` (zeros when `None`).
///
/// The dictionary must have been through [`crate::normalize_kernels`].
pub fn apg_solve(
    p: &Problem,
    cfg: &SolverConfig,
    x0: Option<&FeatureStack>,
) -> Result<(FeatureStack, SolveTrace)> {
    validate_problem(p)?;
    cfg.validate()?;
    if p.dict.norm_target().is_none() {
        return Err(CgscError::NotNormalized);
    }
    if cfg.enforce_norm_bound {
        let est = power_iteration(&p.dict, &p.w, NORM_CHECK_ITERS, NORM_CHECK_TOL, NORM_CHECK_SEED);
        if est.value > NORM_BOUND {
            return Err(CgscError::NormBoundViolated {
                estimate: est.value,
                bound: NORM_BOUND,
            });
        }
    }
    let x0 = match x0 {
        Some(x) => {
            if x.dim() != p.stack_dim() {
                return Err(CgscError::DimensionMismatch(format!(
                    "initial iterate {:?} vs problem {:?}",
                    x.shape(),
                    p.stack_dim()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(CgscError::NonFiniteEntry("initial iterate"));
            }
            x.clone()
        }
        None => p.zero_stack(),
    };

    let mut state = SolverState::new(x0);
    let mut trace = SolveTrace::default();
    for n in 1..=cfg.max_iters {
        let change = state.step(p, cfg)?;
        let converged = change <= cfg.rel_tol;
        let last = converged || n == cfg.max_iters;
        if last || (cfg.trace_every > 0 && n % cfg.trace_every == 0) {
            let obj = objective(p, state.current())?;
            trace.records.push(TraceRecord {
                iter: n,
                objective: obj.total,
                fidelity: obj.fidelity,
                regularizer: obj.regularizer,
                iterate_change: change,
            });
        }
        if last {
            trace.iterations = n;
            trace.converged = converged;
            break;
        }
    }
    Ok((state.into_current(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::normalize_kernels;
    use crate::groups::{across_k_groups, singleton_groups};
    use crate::types::{Image, Kernel, KernelDictionary};
    use ndarray::{Array2, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, m: usize, n: usize, k: usize, lambda: f64) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = (0..k)
            .map(|_| Kernel::new(Array2::from_shape_simple_fn((3, 3), || rng.random_range(0.0..1.0))).unwrap())
            .collect();
        let w = Image::ones((m, n));
        let dict = normalize_kernels(&KernelDictionary::new(kernels).unwrap(), &w).unwrap();
        Problem {
            s: Image::from_shape_simple_fn((m, n), || rng.random_range(0.0..1.0)),
            w,
            dict,
            groups: singleton_groups(m, n, k),
            lambda,
        }
    }

    #[test]
    fn objective_cases() {
        let mut p = random_problem(1, 5, 5, 2, 0.3);
        let zero = p.zero_stack();
        let o = objective(&p, &zero).unwrap();
        let ws: f64 = (&p.w * &p.s).iter().map(|v| v * v).sum();
        assert!((o.total - ws).abs() <= 1e-14);
        assert_eq!(o.regularizer, 0.0);

        let x = FeatureStack::from_elem(p.stack_dim(), 0.2);
        p.lambda = 0.0;
        let o = objective(&p, &x).unwrap();
        assert_eq!(o.total, o.fidelity);

        p.s.fill(0.0);
        assert_eq!(objective(&p, &zero).unwrap().total, 0.0);
    }

    #[test]
    fn zero_data_is_fixed_point() {
        let mut p = random_problem(2, 6, 6, 2, 0.5);
        p.s.fill(0.0);
        let (x, trace) = apg_solve(&p, &SolverConfig::default(), None).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        assert_eq!(trace.iterations, 1);
        assert!(trace.converged);
    }

    #[test]
    fn unnormalized_dictionary_rejected() {
        let mut p = random_problem(3, 4, 4, 1, 0.1);
        p.dict = KernelDictionary::new(p.dict.kernels().to_vec()).unwrap();
        assert_eq!(
            apg_solve(&p, &SolverConfig::default(), None).unwrap_err(),
            CgscError::NotNormalized
        );
    }

    #[test]
    fn norm_bound_violation_detected() {
        // ‖w‖_∞ = 0.5 < 1: the normalized delta acts as 2·I.
        let w = Image::from_elem((5, 5), 0.5);
        let dict = normalize_kernels(&KernelDictionary::new(vec![Kernel::delta(3, 3).unwrap()]).unwrap(), &w)
            .unwrap();
        let p = Problem {
            s: Image::ones((5, 5)),
            w,
            dict,
            groups: singleton_groups(5, 5, 1),
            lambda: 0.1,
        };
        let err = apg_solve(&p, &SolverConfig::default(), None).unwrap_err();
        assert!(matches!(err, CgscError::NormBoundViolated { estimate, .. } if (estimate - 2.0).abs() < 1e-9));
    }

    #[test]
    fn delta_kernel_least_squares_recovers_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Image::ones((6, 7));
        let dict = normalize_kernels(&KernelDictionary::new(vec![Kernel::delta(3, 3).unwrap()]).unwrap(), &w)
            .unwrap();
        let s = Image::from_shape_simple_fn((6, 7), || rng.random_range(0.0..2.0));
        let p = Problem {
            s: s.clone(),
            w,
            dict,
            groups: singleton_groups(6, 7, 1),
            lambda: 0.0,
        };
        let cfg = SolverConfig {
            rel_tol: 1e-14,
            ..SolverConfig::default()
        };
        let (x, _) = apg_solve(&p, &cfg, None).unwrap();
        let fit = forward(&p.dict, &x).unwrap();
        assert!((&fit - &s).iter().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn trace_objective_is_sum_of_terms() {
        let p = random_problem(5, 6, 6, 2, 0.2);
        let (_, trace) = apg_solve(&p, &SolverConfig::default(), None).unwrap();
        assert!(!trace.records.is_empty());
        for r in &trace.records {
            assert!((r.objective - (r.fidelity + r.regularizer)).abs() <= 1e-12 * r.objective.abs().max(1.0));
        }
        let mins = trace.running_min();
        assert!(mins.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn trace_every_thins_records() {
        let p = random_problem(6, 5, 5, 2, 0.2);
        let cfg = SolverConfig {
            max_iters: 25,
            rel_tol: 0.0,
            trace_every: 10,
            ..SolverConfig::default()
        };
        let (_, trace) = apg_solve(&p, &cfg, None).unwrap();
        let iters: Vec<_> = trace.records.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![10, 20, 25]);
        assert!(!trace.converged);
    }

    #[test]
    fn momentum_increases_and_iterates_stay_non_negative() {
        let p = random_problem(7, 6, 5, 3, 0.05);
        let cfg = SolverConfig::default();
        let mut state = SolverState::new(p.zero_stack());
        let mut prev_t = state.momentum();
        for _ in 0..30 {
            state.step(&p, &cfg).unwrap();
            assert!(state.momentum() > prev_t);
            prev_t = state.momentum();
            assert!(state.current().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn projection_before_prox_changes_nothing() {
        let mut p = random_problem(8, 6, 6, 2, 0.1);
        p.groups = across_k_groups(6, 6, 2);
        let base = SolverConfig {
            max_iters: 60,
            rel_tol: 0.0,
            ..SolverConfig::default()
        };
        let projected = SolverConfig {
            project_before_prox: true,
            ..base.clone()
        };
        let a = apg_solve(&p, &base, None).unwrap();
        let b = apg_solve(&p, &projected, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let p = random_problem(9, 7, 7, 3, 0.1);
        let a = apg_solve(&p, &SolverConfig::default(), None).unwrap();
        let b = apg_solve(&p, &SolverConfig::default(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut p = random_problem(10, 6, 6, 2, 0.0);
        p.w = Image::from_shape_simple_fn((6, 6), || rng.random_range(0.2..1.5));
        let x = FeatureStack::from_shape_simple_fn(p.stack_dim(), || rng.random_range(0.0..1.0));
        let g = fidelity_gradient(&p, &x).unwrap();
        let h = 1e-5;
        for idx in [(0, 0, 0), (1, 3, 2), (0, 5, 5), (1, 2, 4)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (weighted_residual_sq(&p, &xp).unwrap() - weighted_residual_sq(&p, &xm).unwrap()) / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-5 * g[idx].abs().max(1.0), "{fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn bad_config_and_initial_iterate_rejected() {
        let p = random_problem(11, 4, 4, 2, 0.1);
        let cfg = SolverConfig {
            step: 0.0,
            ..SolverConfig::default()
        };
        assert!(apg_solve(&p, &cfg, None).is_err());
        let cfg = SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        };
        assert!(apg_solve(&p, &cfg, None).is_err());
        let wrong = FeatureStack::zeros((1, 4, 4));
        assert!(matches!(
            apg_solve(&p, &SolverConfig::default(), Some(&wrong)),
            Err(CgscError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn warm_start_at_solution_stops_quickly() {
        let p = random_problem(12, 5, 5, 2, 0.1);
        let cfg = SolverConfig {
            rel_tol: 1e-12,
            max_iters: 5000,
            ..SolverConfig::default()
        };
        let (x, first) = apg_solve(&p, &cfg, None).unwrap();
        let (_, second) = apg_solve(&p, &cfg, Some(&x)).unwrap();
        assert!(second.iterations < first.iterations);
        assert!(x.sum_axis(Axis(0)).iter().all(|v| v.is_finite()));
    }
}
