//! Shared domain types: images, feature stacks, kernels, group partitions
//! and the problem bundle handed to the solver.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{CgscError, Result};

/// Dense `M × N` real image (observation, weights or a single feature map).
pub type Image = Array2<f64>;

/// `K` feature maps of identical `M × N` shape, stored as a `K × M × N` array.
pub type FeatureStack = Array3<f64>;

/// A convolution kernel together with the index treated as its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    data: Array2<f64>,
    anchor: (usize, usize),
}

impl Kernel {
    /// Kernel with the default anchor `(⌊P1/2⌋, ⌊P2/2⌋)`.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (p1, p2) = data.dim();
        Self::with_anchor(data, (p1 / 2, p2 / 2))
    }

    pub fn with_anchor(data: Array2<f64>, anchor: (usize, usize)) -> Result<Self> {
        let (p1, p2) = data.dim();
        if p1 == 0 || p2 == 0 {
            return Err(CgscError::DimensionMismatch("kernel has an empty extent".into()));
        }
        if anchor.0 >= p1 || anchor.1 >= p2 {
            return Err(CgscError::InvalidParameter {
                name: "anchor",
                reason: format!("{anchor:?} lies outside a {p1}x{p2} kernel"),
            });
        }
        Ok(Self { data, anchor })
    }

    /// Unit impulse of the given size placed at the default anchor.
    pub fn delta(rows: usize, cols: usize) -> Result<Self> {
        let mut data = Array2::zeros((rows, cols));
        if rows > 0 && cols > 0 {
            data[[rows / 2, cols / 2]] = 1.0;
        }
        Self::new(data)
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn anchor(&self) -> (usize, usize) {
        self.anchor
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        Self {
            data: &self.data * factor,
            anchor: self.anchor,
        }
    }

    pub(crate) fn from_parts_unchecked(data: Array2<f64>, anchor: (usize, usize)) -> Self {
        Self { data, anchor }
    }
}

/// The `K` kernels `{h_k}` and, once normalized, their common 1-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDictionary {
    kernels: Vec<Kernel>,
    norm_target: Option<f64>,
}

impl KernelDictionary {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(CgscError::InvalidParameter {
                name: "kernels",
                reason: "dictionary needs at least one kernel".into(),
            });
        }
        Ok(Self {
            kernels,
            norm_target: None,
        })
    }

    pub(crate) fn with_norm_target(kernels: Vec<Kernel>, norm_target: f64) -> Self {
        Self {
            kernels,
            norm_target: Some(norm_target),
        }
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Common 1-norm recorded by [`crate::normalize_kernels`]; `None` until then.
    pub fn norm_target(&self) -> Option<f64> {
        self.norm_target
    }
}

/// Assignment of every `(i, j, k)` triple to at most one group.
///
/// Labels `1..=G` name groups and `0` marks an ungrouped triple, so groups
/// are disjoint by construction. The label volume is `M × N × K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    labels: Array3<u32>,
    group_count: usize,
}

impl GroupPartition {
    /// Wraps a label volume that already uses the dense range `0..=G`.
    ///
    /// Fails with `EmptyGroupLabel` if some `g ≤ G` has no member, where `G`
    /// is the largest label present. See [`crate::groups_from_labels`] for
    /// arbitrary labelings.
    pub fn from_dense_labels(labels: Array3<u32>) -> Result<Self> {
        let group_count = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; group_count + 1];
        for &l in labels.iter() {
            seen[l as usize] = true;
        }
        if let Some(g) = (1..=group_count).find(|&g| !seen[g]) {
            return Err(CgscError::EmptyGroupLabel(g));
        }
        Ok(Self {
            labels,
            group_count,
        })
    }

    pub(crate) fn from_parts_unchecked(labels: Array3<u32>, group_count: usize) -> Self {
        Self {
            labels,
            group_count,
        }
    }

    pub fn labels(&self) -> &Array3<u32> {
        &self.labels
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// `(M, N, K)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.labels.dim()
    }

    /// Number of members of each group, indexed by label (entry 0 counts
    /// the ungrouped triples).
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_count + 1];
        for &l in self.labels.iter() {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub(crate) fn check_stack(&self, x: &FeatureStack) -> Result<()> {
        let (m, n, k) = self.dim();
        if x.dim() != (k, m, n) {
            return Err(CgscError::DimensionMismatch(format!(
                "feature stack {:?} does not match partition of {m}x{n} pixels and {k} maps",
                x.shape()
            )));
        }
        Ok(())
    }
}

/// Everything that defines one weighted group-sparse coding problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub s: Image,
    pub w: Image,
    pub dict: KernelDictionary,
    pub groups: GroupPartition,
    pub lambda: f64,
}

impl Problem {
    /// `(K, M, N)`.
    pub fn stack_dim(&self) -> (usize, usize, usize) {
        let (m, n) = self.s.dim();
        (self.dict.len(), m, n)
    }

    pub fn zero_stack(&self) -> FeatureStack {
        FeatureStack::zeros(self.stack_dim())
    }

    pub fn validate(&self) -> Result<()> {
        validate_problem(self)
    }
}

/// Checks every invariant of [`Problem`] and reports the first violation.
pub fn validate_problem(p: &Problem) -> Result<()> {
    let (m, n) = p.s.dim();
    if m == 0 || n == 0 {
        return Err(CgscError::DimensionMismatch("observation is empty".into()));
    }
    if p.w.dim() != (m, n) {
        return Err(CgscError::DimensionMismatch(format!(
            "weights are {:?} but observation is {m}x{n}",
            p.w.shape()
        )));
    }
    let (gm, gn, gk) = p.groups.dim();
    if (gm, gn) != (m, n) {
        return Err(CgscError::DimensionMismatch(format!(
            "group labels cover {gm}x{gn} pixels but observation is {m}x{n}"
        )));
    }
    if gk != p.dict.len() {
        return Err(CgscError::DimensionMismatch(format!(
            "group labels cover {gk} maps but dictionary has {} kernels",
            p.dict.len()
        )));
    }
    if !p.lambda.is_finite() || p.lambda < 0.0 {
        return Err(CgscError::InvalidParameter {
            name: "lambda",
            reason: format!("must be finite and non-negative, got {}", p.lambda),
        });
    }
    if p.s.iter().any(|v| !v.is_finite()) {
        return Err(CgscError::NonFiniteEntry("observation"));
    }
    if p.w.iter().any(|v| !v.is_finite()) {
        return Err(CgscError::NonFiniteEntry("weights"));
    }
    if p
        .dict
        .kernels()
        .iter()
        .any(|h| h.data().iter().any(|v| !v.is_finite()))
    {
        return Err(CgscError::NonFiniteEntry("kernels"));
    }
    if let Some(((row, col), &value)) = p.w.indexed_iter().find(|(_, &v)| v < 0.0) {
        return Err(CgscError::NegativeWeight { row, col, value });
    }
    if p.w.iter().all(|&v| v == 0.0) {
        return Err(CgscError::ZeroWeights);
    }
    let sizes = p.groups.group_sizes();
    if let Some(g) = (1..sizes.len()).find(|&g| sizes[g] == 0) {
        return Err(CgscError::EmptyGroupLabel(g));
    }
    Ok(())
}

/// Largest absolute entry, `‖·‖_∞`.
pub(crate) fn max_abs(a: &Image) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
