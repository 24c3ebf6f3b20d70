//! Builders for [`GroupPartition`].
//!
//! Kernel indices passed to [`tile_groups`] are 1-based, matching the label
//! convention where `0` is reserved.

use std::collections::BTreeMap;

use ndarray::Array3;

use crate::error::{CgscError, Result};
use crate::types::GroupPartition;

/// Every `(i, j, k)` in its own group; the penalty becomes a plain ℓ₁ norm.
pub fn singleton_groups(m: usize, n: usize, k: usize) -> GroupPartition {
    let labels = Array3::from_shape_fn((m, n, k), |(i, j, kk)| ((i * n + j) * k + kk + 1) as u32);
    GroupPartition::from_parts_unchecked(labels, m * n * k)
}

/// One group per pixel holding its `K` coefficients.
pub fn across_k_groups(m: usize, n: usize, k: usize) -> GroupPartition {
    let labels = Array3::from_shape_fn((m, n, k), |(i, j, _)| (i * n + j + 1) as u32);
    GroupPartition::from_parts_unchecked(labels, m * n)
}

/// One group per (spatial tile, kernel subset) pair.
///
/// Tiles are `tile_h × tile_w` blocks anchored at the origin; those on the
/// bottom and right borders may be smaller. Kernels outside every subset
/// are left ungrouped.
pub fn tile_groups(
    m: usize,
    n: usize,
    k: usize,
    tile_h: usize,
    tile_w: usize,
    kernel_subsets: &[Vec<usize>],
) -> Result<GroupPartition> {
    if tile_h == 0 || tile_w == 0 {
        return Err(CgscError::InvalidParameter {
            name: "tile",
            reason: format!("tile dimensions must be positive, got {tile_h}x{tile_w}"),
        });
    }
    let mut subset_of = vec![None; k];
    for (s, subset) in kernel_subsets.iter().enumerate() {
        if subset.is_empty() {
            return Err(CgscError::InvalidSubset(format!("subset {} is empty", s + 1)));
        }
        for &kk in subset {
            if kk == 0 || kk > k {
                return Err(CgscError::InvalidSubset(format!(
                    "kernel index {kk} outside 1..={k}"
                )));
            }
            if let Some(prev) = subset_of[kk - 1] {
                return Err(CgscError::InvalidSubset(format!(
                    "kernel {kk} appears in subsets {} and {}",
                    prev + 1,
                    s + 1
                )));
            }
            subset_of[kk - 1] = Some(s);
        }
    }
    let tiles_down = m.div_ceil(tile_h);
    let tiles_across = n.div_ceil(tile_w);
    let n_subsets = kernel_subsets.len();
    let labels = Array3::from_shape_fn((m, n, k), |(i, j, kk)| match subset_of[kk] {
        None => 0,
        Some(s) => {
            let tile = (i / tile_h) * tiles_across + j / tile_w;
            (tile * n_subsets + s + 1) as u32
        }
    });
    let group_count = if m == 0 || n == 0 {
        0
    } else {
        tiles_down * tiles_across * n_subsets
    };
    Ok(GroupPartition::from_parts_unchecked(labels, group_count))
}

/// Densifies an arbitrary labeling to `1..=G`, keeping `0` as ungrouped.
///
/// New labels follow the order in which each distinct original label is
/// first met in a row-major scan of the `M × N × K` volume.
pub fn groups_from_labels(labels: &Array3<u32>) -> GroupPartition {
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    let mut next = 0;
    let dense = labels.mapv(|l| {
        if l == 0 {
            return 0;
        }
        *remap.entry(l).or_insert_with(|| {
            next += 1;
            next
        })
    });
    let g = remap.len();
    GroupPartition::from_parts_unchecked(dense, g)
}
