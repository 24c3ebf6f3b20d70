//! Convolutional group-sparse coding.
//!
//! Recovers non-negative feature maps `{x_k}` that explain an image `s` as
//! `Σ_k h_k ⊛ x_k` under a weighted least-squares fit and a disjoint
//! group-sparsity penalty, solved with an accelerated proximal gradient
//! (FISTA) iteration.
//!
//! Layout conventions used throughout the crate:
//!
//! - an [`Image`] is an `M × N` array,
//! - a [`FeatureStack`] is a `K × M × N` array (map index first),
//! - a [`GroupPartition`] label volume is `M × N × K`.

pub mod conv;
pub mod error;
pub mod groups;
pub mod metrics;
pub mod prox;
pub mod solver;
pub mod synth;
pub mod types;

pub use conv::{
    adjoint, conv_same, forward, matched_filter, normalize_kernels, power_iteration,
    weighted_residual_sq, OperatorNormEstimate,
};
pub use error::{CgscError, Result};
pub use groups::{across_k_groups, groups_from_labels, singleton_groups, tile_groups};
pub use metrics::{detect_sources, match_and_score, recon_error, LocalizationReport, Source};
pub use prox::{prox_nonneg_group, regularizer_value, ProxScaling};
pub use solver::{apg_solve, fidelity_gradient, objective, Objective, SolveTrace, SolverConfig, SolverState, TraceRecord};
pub use synth::{gaussian_kernel, generate, reconstruct_y_alpha, AlphaMode, GroundTruth, Observation, SceneSpec};
pub use types::{validate_problem, FeatureStack, GroupPartition, Image, Kernel, KernelDictionary, Problem};
