use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{hermite_channels, Partition};
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Relative singular-value cutoff for the per-cell normal equations.
const RANK_TOLERANCE: f64 = 1e-10;

/// Per-cell affine fits `c₀ + cᵀ(x − x̄)` for every target channel.
#[derive(Debug, Clone)]
pub struct LayerEstimator {
    pub partition: Partition,
    pub channels: usize,
    /// Cell centroids, `cells × d`.
    centers: Vec<f64>,
    /// Coefficients, `cells × channels × (d + 1)`.
    coefs: Vec<f64>,
    counts: Vec<usize>,
    /// Cells whose normal equations were rank-deficient and fell back to
    /// a constant fit.
    pub fallback_cells: usize,
}

/// `(ψ̂, D̂ψ, D̂²ψ)` at a point; the Hessian is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Derivatives {
    pub(crate) fn zeros(d: usize) -> Self {
        Derivatives {
            value: 0.0,
            grad: vec![0.0; d],
            hess: vec![0.0; d * d],
        }
    }

    /// Reads the `1 + d + d²` Hermite channel layout, symmetrising the
    /// Hessian block.
    pub(crate) fn from_channels(raw: &[f64], d: usize, out: &mut Derivatives) {
        out.value = raw[0];
        out.grad.copy_from_slice(&raw[1..1 + d]);
        let h = &raw[1 + d..];
        for r in 0..d {
            for c in 0..d {
                out.hess[r * d + c] = 0.5 * (h[r * d + c] + h[c * d + r]);
            }
        }
    }
}

impl LayerEstimator {
    pub fn cell_count(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn center(&self, cell: usize) -> &[f64] {
        let d = self.partition.dim;
        &self.centers[cell * d..(cell + 1) * d]
    }

    /// Coefficients `(c₀, c₁, …, c_d)` of one channel in one cell.
    pub fn coefficients(&self, cell: usize, channel: usize) -> &[f64] {
        let w = self.partition.dim + 1;
        let off = (cell * self.channels + channel) * w;
        &self.coefs[off..off + w]
    }

    /// Evaluates every channel at `x` (clamped to the partition box).
    pub fn evaluate_channels(&self, x: &[f64], clamped: &mut [f64], out: &mut [f64]) {
        let d = self.partition.dim;
        self.partition.clamp_into(x, clamped);
        let cell = self.partition.cell_of(clamped);
        let center = self.center(cell);
        let w = d + 1;
        let block = &self.coefs[cell * self.channels * w..(cell + 1) * self.channels * w];
        for (c, o) in out.iter_mut().enumerate() {
            let coef = &block[c * w..(c + 1) * w];
            let mut v = coef[0];
            for k in 0..d {
                v += coef[k + 1] * (clamped[k] - center[k]);
            }
            *o = v;
        }
    }

    /// Value, gradient and symmetric Hessian at `x` for an estimator fitted
    /// on the Hermite channel layout.
    pub fn evaluate(&self, x: &[f64]) -> Derivatives {
        let d = self.partition.dim;
        assert_eq!(self.channels, hermite_channels(d), "not a Hermite-channel estimator");
        let mut clamped = vec![0.0; d];
        let mut raw = vec![0.0; self.channels];
        self.evaluate_channels(x, &mut clamped, &mut raw);
        let mut out = Derivatives::zeros(d);
        Derivatives::from_channels(&raw, d, &mut out);
        out
    }
}

/// Least-squares fit of each target channel on `(1, x − x̄_cell)` per cell.
///
/// `x_points` is `N × d` row-major; `targets` is `N × channels` row-major.
/// Sums are compensated and taken in point order within each cell, so the
/// fit does not depend on thread count and is insensitive to input order.
pub fn fit_layer(
    partition: &Partition,
    x_points: &[f64],
    targets: &[f64],
    channels: usize,
) -> Result<LayerEstimator> {
    let d = partition.dim;
    if channels == 0 {
        return Err(Error::InvalidParameter("at least one channel required".into()));
    }
    if x_points.len() % d != 0 {
        return Err(Error::Dimension("x_points length is not a multiple of d".into()));
    }
    let n = x_points.len() / d;
    if targets.len() != n * channels {
        return Err(Error::Dimension(format!(
            "expected {} targets, got {}",
            n * channels,
            targets.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if let Some(pos) = targets.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite regression target at point {}",
            pos / channels
        )));
    }

    let cells = partition.cell_count();
    let cell_ids: Vec<usize> = x_points
        .par_chunks_exact(d)
        .map(|x| partition.cell_of(x))
        .collect();
    // Counting sort keeps each cell's members in ascending point order.
    let mut starts = vec![0usize; cells + 1];
    for &c in &cell_ids {
        starts[c + 1] += 1;
    }
    for c in 0..cells {
        starts[c + 1] += starts[c];
    }
    let mut cursor = starts.clone();
    let mut members = vec![0usize; n];
    for (j, &c) in cell_ids.iter().enumerate() {
        members[cursor[c]] = j;
        cursor[c] += 1;
    }

    let w = d + 1;
    let fits: Vec<CellFit> = (0..cells)
        .into_par_iter()
        .map(|c| {
            fit_cell(
                &members[starts[c]..starts[c + 1]],
                x_points,
                targets,
                d,
                channels,
            )
        })
        .collect();

    let mut centers = Vec::with_capacity(cells * d);
    let mut coefs = Vec::with_capacity(cells * channels * w);
    let mut counts = Vec::with_capacity(cells);
    let mut fallback_cells = 0;
    for fit in fits {
        centers.extend_from_slice(&fit.center);
        coefs.extend_from_slice(&fit.coefs);
        counts.push(fit.count);
        fallback_cells += usize::from(fit.fallback);
    }
    Ok(LayerEstimator {
        partition: partition.clone(),
        channels,
        centers,
        coefs,
        counts,
        fallback_cells,
    })
}

struct CellFit {
    center: Vec<f64>,
    coefs: Vec<f64>,
    count: usize,
    fallback: bool,
}

fn fit_cell(members: &[usize], xs: &[f64], ys: &[f64], d: usize, channels: usize) -> CellFit {
    let w = d + 1;
    let count = members.len();
    if count == 0 {
        // Only reachable for cells no point maps to; predict zero.
        return CellFit {
            center: vec![0.0; d],
            coefs: vec![0.0; channels * w],
            count,
            fallback: true,
        };
    }

    let mut mean = vec![CompensatedSum::default(); d];
    for &j in members {
        for k in 0..d {
            mean[k].add(xs[j * d + k]);
        }
    }
    let center: Vec<f64> = mean.iter().map(|s| s.value() / count as f64).collect();

    let mut gram = vec![CompensatedSum::default(); w * w];
    let mut rhs = vec![CompensatedSum::default(); channels * w];
    let mut basis = vec![1.0; w];
    for &j in members {
        for k in 0..d {
            basis[k + 1] = xs[j * d + k] - center[k];
        }
        for a in 0..w {
            for b in a..w {
                gram[a * w + b].add(basis[a] * basis[b]);
            }
        }
        let y = &ys[j * channels..(j + 1) * channels];
        for (c, &yc) in y.iter().enumerate() {
            for a in 0..w {
                rhs[c * w + a].add(basis[a] * yc);
            }
        }
    }
    let g = DMatrix::from_fn(w, w, |a, b| {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        gram[a * w + b].value()
    });
    let svd = g.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let mut coefs = vec![0.0; channels * w];
    let full_rank = smax > 0.0 && smin > RANK_TOLERANCE * smax;
    if full_rank {
        for c in 0..channels {
            let b = DVector::from_fn(w, |a, _| rhs[c * w + a].value());
            let sol = svd
                .solve(&b, RANK_TOLERANCE * smax)
                .expect("svd computed with both factors");
            coefs[c * w..(c + 1) * w].copy_from_slice(sol.as_slice());
        }
    } else {
        for c in 0..channels {
            coefs[c * w] = rhs[c * w].value() / count as f64;
        }
    }
    CellFit {
        center,
        coefs,
        count,
        fallback: !full_rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::build_partition;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn cloud(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d)
            .map(|_| crate::numeric::unit_open(rng.next_u64()) * 4.0 - 2.0)
            .collect()
    }

    #[test]
    fn affine_targets_reproduced_exactly() {
        let d = 2;
        let xs = cloud(4000, d, 1);
        let part = build_partition(&xs, d, 4, 30).unwrap();
        let f = |x: &[f64]| 1.5 - 0.25 * x[0] + 3.0 * x[1];
        let g = |x: &[f64]| -2.0 + x[0] * 0.5;
        let ys: Vec<f64> = xs.chunks(d).flat_map(|x| [f(x), g(x)]).collect();
        let est = fit_layer(&part, &xs, &ys, 2).unwrap();
        assert_eq!(est.fallback_cells, 0);
        let mut clamped = vec![0.0; d];
        let mut out = vec![0.0; 2];
        for x in xs.chunks(d).take(500) {
            est.evaluate_channels(x, &mut clamped, &mut out);
            assert!((out[0] - f(x)).abs() <= 1e-10 * f(x).abs().max(1.0));
            assert!((out[1] - g(x)).abs() <= 1e-10 * g(x).abs().max(1.0));
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_the_basis() {
        let d = 2;
        let xs = cloud(3000, d, 2);
        let part = build_partition(&xs, d, 3, 30).unwrap();
        let ys: Vec<f64> = xs.chunks(d).map(|x| (3.0 * x[0]).sin() + x[1] * x[1]).collect();
        let est = fit_layer(&part, &xs, &ys, 1).unwrap();
        let cells = est.cell_count();
        let mut sums = vec![[0.0f64; 3]; cells];
        let mut scale = vec![0.0f64; cells];
        let mut clamped = vec![0.0; d];
        let mut out = [0.0];
        for (x, y) in xs.chunks(d).zip(&ys) {
            let c = part.cell_of(x);
            est.evaluate_channels(x, &mut clamped, &mut out);
            let r = y - out[0];
            let ctr = est.center(c);
            let b = [1.0, x[0] - ctr[0], x[1] - ctr[1]];
            for a in 0..3 {
                sums[c][a] += r * b[a];
            }
            scale[c] += y.abs();
        }
        for c in 0..cells {
            for a in 0..3 {
                assert!(sums[c][a].abs() <= 1e-8 * scale[c], "cell {c}: {:?}", sums[c]);
            }
        }
    }

    #[test]
    fn centroid_evaluation_returns_intercept() {
        let d = 1;
        let xs = cloud(500, d, 3);
        let part = build_partition(&xs, d, 4, 20).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let est = fit_layer(&part, &xs, &ys, 1).unwrap();
        let mut clamped = [0.0];
        let mut out = [0.0];
        for c in 0..est.cell_count() {
            let ctr = est.center(c).to_vec();
            est.evaluate_channels(&ctr, &mut clamped, &mut out);
            assert_eq!(out[0], est.coefficients(c, 0)[0]);
        }
    }

    #[test]
    fn outside_points_clamp_to_the_box() {
        let d = 1;
        let xs = cloud(400, d, 4);
        let part = build_partition(&xs, d, 2, 20).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let est = fit_layer(&part, &xs, &ys, 1).unwrap();
        let mut clamped = [0.0];
        let (mut a, mut b) = ([0.0], [0.0]);
        est.evaluate_channels(&[50.0], &mut clamped, &mut a);
        est.evaluate_channels(&[part.upper[0]], &mut clamped, &mut b);
        assert_eq!(a, b);
        est.evaluate_channels(&[-50.0], &mut clamped, &mut a);
        est.evaluate_channels(&[part.lower[0]], &mut clamped, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn rank_deficient_cell_falls_back_to_mean() {
        let xs = vec![1.0; 40];
        let ys: Vec<f64> = (0..40).map(f64::from).collect();
        let part = build_partition(&xs, 1, 4, 10).unwrap();
        let est = fit_layer(&part, &xs, &ys, 1).unwrap();
        assert_eq!(est.fallback_cells, 1);
        assert_eq!(est.coefficients(0, 0), &[19.5, 0.0]);
    }

    #[test]
    fn symmetric_hessian_from_channels() {
        let raw = [1.0, 2.0, 3.0, 1.0, 4.0, 2.0, 5.0];
        let mut out = Derivatives::zeros(2);
        Derivatives::from_channels(&raw, 2, &mut out);
        assert_eq!(out.value, 1.0);
        assert_eq!(out.grad, vec![2.0, 3.0]);
        assert_eq!(out.hess, vec![1.0, 3.0, 3.0, 5.0]);
    }

    #[test]
    fn bad_shapes_rejected() {
        let xs = cloud(10, 1, 0);
        let part = build_partition(&xs, 1, 2, 1).unwrap();
        assert!(fit_layer(&part, &xs, &[0.0; 9], 1).is_err());
        let mut ys = vec![0.0; 10];
        ys[3] = f64::NAN;
        assert!(fit_layer(&part, &xs, &ys, 1).is_err());
    }
}
