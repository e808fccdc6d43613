use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tensor grid of marginal-quantile cells, with sparse cells merged.
///
/// Raw cells are indexed lexicographically with the last coordinate fastest.
/// Walking raw cells in that order, consecutive cells are merged into one
/// group until it holds `min_cell_count` points; a short tail joins the
/// previous group. Merges therefore run along the last split dimension and
/// only spill into the next column when a whole column is too sparse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub dim: usize,
    pub cells_per_dim: usize,
    pub min_cell_count: usize,
    /// Interior split points per dimension, nondecreasing.
    pub splits: Vec<Vec<f64>>,
    /// Bounding box of the cloud the partition was built from.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    group_of: Vec<usize>,
    counts: Vec<usize>,
}

impl Partition {
    pub fn cell_count(&self) -> usize {
        self.counts.len()
    }

    /// Points of the building cloud per merged cell.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    #[inline]
    fn raw_cell(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for (k, s) in self.splits.iter().enumerate() {
            let bin = s.partition_point(|v| *v <= x[k]);
            idx = idx * self.cells_per_dim + bin;
        }
        idx
    }

    /// Merged cell containing `x`; points outside the box land in the
    /// nearest boundary cell.
    #[inline]
    pub fn cell_of(&self, x: &[f64]) -> usize {
        self.group_of[self.raw_cell(x)]
    }

    /// Projection onto the bounding box.
    #[inline]
    pub fn clamp_into(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = x[k].clamp(self.lower[k], self.upper[k]);
        }
    }
}

/// Builds a partition of the `N × d` row-major cloud `points`.
pub fn build_partition(
    points: &[f64],
    dim: usize,
    cells_per_dim: usize,
    min_cell_count: usize,
) -> Result<Partition> {
    if dim == 0 {
        return Err(Error::Dimension("partition dimension must be positive".into()));
    }
    if points.len() % dim != 0 {
        return Err(Error::Dimension(format!(
            "point buffer of length {} is not a multiple of {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if cells_per_dim == 0 {
        return Err(Error::InvalidParameter("cells_per_dim must be at least 1".into()));
    }
    let raw_total = cells_per_dim
        .checked_pow(dim as u32)
        .filter(|&c| c <= 1 << 24)
        .ok_or_else(|| Error::InvalidParameter("too many cells".into()))?;

    let mut splits = Vec::with_capacity(dim);
    let mut lower = Vec::with_capacity(dim);
    let mut upper = Vec::with_capacity(dim);
    let mut coord = vec![0.0; n];
    for k in 0..dim {
        for (j, c) in coord.iter_mut().enumerate() {
            *c = points[j * dim + k];
        }
        coord.sort_unstable_by(f64::total_cmp);
        lower.push(coord[0]);
        upper.push(coord[n - 1]);
        splits.push(
            (1..cells_per_dim)
                .map(|q| coord[(q * n / cells_per_dim).min(n - 1)])
                .collect::<Vec<_>>(),
        );
    }

    let mut part = Partition {
        dim,
        cells_per_dim,
        min_cell_count,
        splits,
        lower,
        upper,
        group_of: vec![0; raw_total],
        counts: Vec::new(),
    };

    let mut raw_counts = vec![0usize; raw_total];
    for x in points.chunks_exact(dim) {
        raw_counts[part.raw_cell(x)] += 1;
    }

    let threshold = min_cell_count.max(1);
    let mut group_of = vec![0usize; raw_total];
    let mut counts: Vec<usize> = Vec::new();
    let mut open = 0usize;
    let mut open_has_cells = false;
    for (r, &c) in raw_counts.iter().enumerate() {
        if !open_has_cells {
            counts.push(0);
            open_has_cells = true;
        }
        let g = counts.len() - 1;
        group_of[r] = g;
        counts[g] += c;
        open += c;
        if open >= threshold {
            open = 0;
            open_has_cells = false;
        }
    }
    // A short tail (possibly all empty cells) joins its predecessor.
    if open_has_cells && counts.len() > 1 && *counts.last().unwrap() < threshold {
        let tail = counts.len() - 1;
        let tail_count = counts.pop().unwrap();
        counts[tail - 1] += tail_count;
        for g in group_of.iter_mut().filter(|g| **g == tail) {
            *g = tail - 1;
        }
    }
    part.group_of = group_of;
    part.counts = counts;
    Ok(part)
}
