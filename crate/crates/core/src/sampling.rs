//! Seeded Euler path ensembles and the Gaussian integration-by-parts weights.
//!
//! Brownian increments come from a ChaCha stream keyed by `(seed, path)`, so an
//! ensemble is bit-identical whatever the number of worker threads. Normals are
//! drawn by inverse-CDF transform of one 64-bit word each.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ProblemSpec;
use crate::numeric::unit_open;

/// Uniform grid `t_i = i h`, `h = T / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub steps: usize,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        Ok(TimeGrid { steps, horizon })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_i`; the last knot is `T` exactly.
    #[inline]
    pub fn knot(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.h()
        }
    }
}

/// One Euler step `x + μ(t, x) h + σ(t, x) dW`.
pub fn euler_step(spec: &ProblemSpec, t: f64, x: &[f64], h: f64, dw: &[f64]) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let d = spec.dim;
    if x.len() != d || dw.len() != d {
        return Err(Error::Dimension(format!("expected vectors of length {d}")));
    }
    let mut scratch = StepScratch::new(d);
    let mut out = vec![0.0; d];
    scratch.step(spec, t, x, h, dw, &mut out);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::PathBlowup {
            path: 0,
            step: 0,
            t,
            x: x.to_vec(),
        })
    }
}

pub(crate) struct StepScratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    shock: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(d: usize) -> Self {
        StepScratch {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
            shock: vec![0.0; d],
        }
    }

    #[inline]
    pub(crate) fn step(
        &mut self,
        spec: &ProblemSpec,
        t: f64,
        x: &[f64],
        h: f64,
        dw: &[f64],
        out: &mut [f64],
    ) {
        (spec.drift)(t, x, &mut self.drift);
        (spec.diffusion)(t, x, &mut self.sigma);
        linalg::mat_vec(&self.sigma, dw, &mut self.shock);
        for k in 0..x.len() {
            out[k] = x[k] + self.drift[k] * h + self.shock[k];
        }
    }
}

/// Per-path Gaussian stream.
pub(crate) struct PathRng {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl PathRng {
    pub(crate) fn new(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        PathRng {
            rng,
            normal: Normal::standard(),
        }
    }

    #[inline]
    pub(crate) fn standard_normal(&mut self) -> f64 {
        self.normal.inverse_cdf(unit_open(self.rng.next_u64()))
    }
}

/// `N` Euler paths on a [`TimeGrid`] with their Brownian increments.
///
/// Storage is path-major: `states[(j (n+1) + i) d + k]` and
/// `increments[(j n + i) d + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    pub grid: TimeGrid,
    pub states: Vec<f64>,
    pub increments: Vec<f64>,
}

const DUMP_MAGIC: &[u8; 4] = b"PFE1";

impl PathEnsemble {
    #[inline]
    pub fn state(&self, path: usize, i: usize) -> &[f64] {
        let d = self.dim;
        let off = (path * (self.grid.steps + 1) + i) * d;
        &self.states[off..off + d]
    }

    #[inline]
    pub fn increment(&self, path: usize, i: usize) -> &[f64] {
        let d = self.dim;
        let off = (path * self.grid.steps + i) * d;
        &self.increments[off..off + d]
    }

    /// All states at layer `i`, gathered into a contiguous `N × d` buffer.
    pub fn layer(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count * self.dim);
        for j in 0..self.count {
            out.extend_from_slice(self.state(j, i));
        }
        out
    }

    /// Little-endian dump: `PFE1`, then `d, n, N, seed` as u64, then states
    /// and increments as f64, path-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        for v in [self.dim as u64, self.grid.steps as u64, self.count as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.states.iter().chain(&self.increments) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`PathEnsemble::write_binary`]; the horizon
    /// is not part of the format.
    pub fn read_binary<R: Read>(mut r: R, horizon: f64) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Config("not a path-ensemble dump (bad magic)".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let dim = next_u64(&mut r)? as usize;
        let steps = next_u64(&mut r)? as usize;
        let count = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let grid = TimeGrid::new(horizon, steps)?;
        let mut read_f64s = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect())
        };
        let states = read_f64s(count * (steps + 1) * dim)?;
        let increments = read_f64s(count * steps * dim)?;
        Ok(PathEnsemble {
            dim,
            count,
            seed,
            grid,
            states,
            increments,
        })
    }
}

/// Simulates `count` Euler paths from `spec.eval_point`.
pub fn simulate(spec: &ProblemSpec, grid: &TimeGrid, count: usize, seed: u64) -> Result<PathEnsemble> {
    if count == 0 {
        return Err(Error::InvalidParameter("path count must be at least 1".into()));
    }
    let d = spec.dim;
    let n = grid.steps;
    let h = grid.h();
    let sqrt_h = h.sqrt();
    let mut states = vec![0.0; count * (n + 1) * d];
    let mut increments = vec![0.0; count * n * d];

    let failure = states
        .par_chunks_mut((n + 1) * d)
        .zip(increments.par_chunks_mut(n * d))
        .enumerate()
        .map_init(
            || StepScratch::new(d),
            |scratch, (j, (path, incs))| -> Option<Error> {
                let mut rng = PathRng::new(seed, j as u64);
                path[..d].copy_from_slice(&spec.eval_point);
                for i in 0..n {
                    let dw = &mut incs[i * d..(i + 1) * d];
                    for v in dw.iter_mut() {
                        *v = sqrt_h * rng.standard_normal();
                    }
                    let (done, rest) = path.split_at_mut((i + 1) * d);
                    let x = &done[i * d..];
                    let next = &mut rest[..d];
                    scratch.step(spec, grid.knot(i), x, h, dw, next);
                    if !next.iter().all(|v| v.is_finite()) {
                        return Some(Error::PathBlowup {
                            path: j,
                            step: i,
                            t: grid.knot(i),
                            x: x.to_vec(),
                        });
                    }
                }
                None
            },
        )
        .find_first(|e| e.is_some())
        .flatten();
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(PathEnsemble {
        dim: d,
        count,
        seed,
        grid: *grid,
        states,
        increments,
    })
}

/// The weight tuple `(H₀, H₁, H₂)` for one increment.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteWeights {
    pub h0: f64,
    /// `(σᵀ)⁻¹ dW / h`.
    pub h1: Vec<f64>,
    /// `(σᵀ)⁻¹ (dW dWᵀ − h I) σ⁻¹ / h²`, row-major.
    pub h2: Vec<f64>,
}

/// Weights at `(t, x)` for increment `dw` over a step `h`.
pub fn weights(spec: &ProblemSpec, t: f64, x: &[f64], dw: &[f64], h: f64) -> Result<HermiteWeights> {
    let d = spec.dim;
    let sigma = spec.diffusion_at(t, x);
    let inv = linalg::inverse(&sigma, d, spec.sigma_floor).ok_or_else(|| Error::WeightSingularity {
        t,
        x: x.to_vec(),
    })?;
    let mut kernel = WeightKernel::new(d);
    kernel.set_sigma_inverse(&inv);
    let mut h1 = vec![0.0; d];
    let mut h2 = vec![0.0; d * d];
    kernel.fill(dw, h, None, &mut h1, &mut h2);
    Ok(HermiteWeights { h0: 1.0, h1, h2 })
}

/// Reusable buffers for weight evaluation once `σ⁻¹` is known.
pub(crate) struct WeightKernel {
    d: usize,
    sigma_inv: Vec<f64>,
    a_inv: Vec<f64>,
    u: Vec<f64>,
    u_trunc: Vec<f64>,
    dw_trunc: Vec<f64>,
}

impl WeightKernel {
    pub(crate) fn new(d: usize) -> Self {
        WeightKernel {
            d,
            sigma_inv: vec![0.0; d * d],
            a_inv: vec![0.0; d * d],
            u: vec![0.0; d],
            u_trunc: vec![0.0; d],
            dw_trunc: vec![0.0; d],
        }
    }

    pub(crate) fn set_sigma_inverse(&mut self, inv: &[f64]) {
        let d = self.d;
        self.sigma_inv.copy_from_slice(inv);
        // a⁻¹ = (σ⁻¹)ᵀ σ⁻¹
        for r in 0..d {
            for c in 0..d {
                self.a_inv[r * d + c] = (0..d).map(|k| inv[k * d + r] * inv[k * d + c]).sum();
            }
        }
    }

    /// Writes `H₁` and `H₂`. With `truncation = Some(c)` the increment used
    /// in `H₂` is clipped coordinatewise at `c √h √(2 log(1/h))`.
    #[inline]
    pub(crate) fn fill(
        &mut self,
        dw: &[f64],
        h: f64,
        truncation: Option<f64>,
        h1: &mut [f64],
        h2: &mut [f64],
    ) {
        let d = self.d;
        linalg::mat_t_vec(&self.sigma_inv, dw, &mut self.u);
        for k in 0..d {
            h1[k] = self.u[k] / h;
        }
        let u2 = match truncation {
            Some(c) => {
                let cap = c * h.sqrt() * (2.0 * (1.0 / h).ln()).max(0.0).sqrt();
                for k in 0..d {
                    self.dw_trunc[k] = dw[k].clamp(-cap, cap);
                }
                linalg::mat_t_vec(&self.sigma_inv, &self.dw_trunc, &mut self.u_trunc);
                &self.u_trunc
            }
            None => &self.u,
        };
        let h_sq = h * h;
        for r in 0..d {
            for c in 0..d {
                h2[r * d + c] = (u2[r] * u2[c] - h * self.a_inv[r * d + c]) / h_sq;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_spec(drift: f64, vol_slope: f64) -> ProblemSpec {
        ProblemSpec::builder("s", 1, 1.0)
            .drift(move |_, _, out| out[0] = drift)
            .diffusion(move |_, x, out| out[0] = vol_slope * x[0])
            .eval_point(vec![2.0])
            .build()
            .unwrap()
    }

    #[test]
    fn grid_ends_exactly_at_horizon() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.knot(3), 1.0);
        assert!(g.knot(1) < g.knot(2));
        assert!((g.h() * 3.0 - 1.0).abs() <= f64::EPSILON);
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn euler_identity_case() {
        let spec = ProblemSpec::builder("id", 2, 1.0).build().unwrap();
        let x = euler_step(&spec, 0.0, &[0.3, -0.7], 0.1, &[0.0, 0.0]).unwrap();
        assert_eq!(x, vec![0.3, -0.7]);
    }

    #[test]
    fn euler_scalar_hand_value() {
        let spec = scalar_spec(0.0, 0.2);
        let x = euler_step(&spec, 0.0, &[2.0], 0.25, &[0.5]).unwrap();
        assert!((x[0] - 2.2).abs() < 1e-15);
    }

    #[test]
    fn euler_diagonal_hand_value() {
        let spec = ProblemSpec::builder("diag", 2, 1.0)
            .drift(|_, _, out| {
                out[0] = 1.0;
                out[1] = 0.0;
            })
            .diffusion(|_, _, out| out.copy_from_slice(&[1.0, 0.0, 0.0, 2.0]))
            .build()
            .unwrap();
        let x = euler_step(&spec, 0.0, &[0.0, 0.0], 1.0, &[1.0, 1.0]).unwrap();
        assert_eq!(x, vec![2.0, 2.0]);
    }

    #[test]
    fn euler_blowup_is_an_error() {
        let spec = ProblemSpec::builder("inf", 1, 1.0)
            .drift(|_, _, out| out[0] = f64::INFINITY)
            .build()
            .unwrap();
        assert!(matches!(
            euler_step(&spec, 0.0, &[0.0], 0.1, &[0.0]),
            Err(Error::PathBlowup { .. })
        ));
        let grid = TimeGrid::new(1.0, 2).unwrap();
        match simulate(&spec, &grid, 3, 0) {
            Err(Error::PathBlowup { path, step, .. }) => assert_eq!((path, step), (0, 0)),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_diffusion_keeps_paths_constant() {
        let spec = ProblemSpec::builder("flat", 2, 1.0)
            .diffusion(|_, _, out| out.iter_mut().for_each(|v| *v = 0.0))
            .eval_point(vec![1.5, -2.0])
            .build()
            .unwrap();
        let ens = simulate(&spec, &TimeGrid::new(1.0, 4).unwrap(), 5, 9).unwrap();
        for j in 0..5 {
            for i in 0..=4 {
                assert_eq!(ens.state(j, i), &[1.5, -2.0]);
            }
        }
    }

    #[test]
    fn simulation_is_reproducible_and_replayable() {
        let spec = scalar_spec(0.1, 0.3);
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let a = simulate(&spec, &grid, 2, 1).unwrap();
        let b = simulate(&spec, &grid, 2, 1).unwrap();
        assert_eq!(a, b);
        let c = simulate(&spec, &grid, 2, 2).unwrap();
        assert_ne!(a.increments, c.increments);
        for j in 0..2 {
            for i in 0..2 {
                let next =
                    euler_step(&spec, grid.knot(i), a.state(j, i), grid.h(), a.increment(j, i))
                        .unwrap();
                assert_eq!(next.as_slice(), a.state(j, i + 1));
            }
        }
    }

    #[test]
    fn increments_have_brownian_moments() {
        let spec = ProblemSpec::builder("bm", 2, 1.0).build().unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let n_paths = 20_000;
        let ens = simulate(&spec, &grid, n_paths, 5).unwrap();
        let h = grid.h();
        for k in 0..2 {
            let vals: Vec<f64> = ens.increments.iter().skip(k).step_by(2).copied().collect();
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
            assert!(mean.abs() < 4.0 * (h / m).sqrt(), "mean {mean}");
            assert!((var - h).abs() < 4.0 * h * (2.0 / m).sqrt(), "var {var}");
        }
    }

    #[test]
    fn weights_zero_increment() {
        let spec = ProblemSpec::builder("id", 2, 1.0).build().unwrap();
        let w = weights(&spec, 0.0, &[0.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(w.h0, 1.0);
        assert_eq!(w.h1, vec![0.0, 0.0]);
        assert_eq!(w.h2, vec![-1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn weights_scalar_hand_value() {
        let spec = ProblemSpec::builder("two", 1, 1.0)
            .diffusion(|_, _, out| out[0] = 2.0)
            .build()
            .unwrap();
        let w = weights(&spec, 0.0, &[0.0], &[1.0], 0.25).unwrap();
        assert!((w.h1[0] - 2.0).abs() < 1e-15);
        assert!((w.h2[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn weights_general_matrix_match_definition() {
        // Non-diagonal σ: compare the a⁻¹ shortcut with the literal formula.
        let sigma = [1.0, 0.5, -0.2, 2.0];
        let spec = ProblemSpec::builder("m", 2, 1.0)
            .diffusion(move |_, _, out| out.copy_from_slice(&sigma))
            .build()
            .unwrap();
        let dw = [0.3, -0.1];
        let h = 0.04;
        let w = weights(&spec, 0.0, &[0.0, 0.0], &dw, h).unwrap();
        let s = nalgebra::Matrix2::new(1.0, 0.5, -0.2, 2.0);
        let s_inv = s.try_inverse().unwrap();
        let dwv = nalgebra::Vector2::new(dw[0], dw[1]);
        let h1 = s_inv.transpose() * dwv / h;
        let h2 = s_inv.transpose() * (dwv * dwv.transpose() - nalgebra::Matrix2::identity() * h)
            * s_inv
            / (h * h);
        for k in 0..2 {
            assert!((w.h1[k] - h1[k]).abs() < 1e-12);
            for l in 0..2 {
                assert!((w.h2[k * 2 + l] - h2[(k, l)]).abs() < 1e-9 * h2.norm());
            }
        }
    }

    #[test]
    fn singular_sigma_rejected_by_weights() {
        let spec = ProblemSpec::builder("z", 1, 1.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .build()
            .unwrap();
        assert!(matches!(
            weights(&spec, 0.0, &[1.0], &[0.1], 0.1),
            Err(Error::WeightSingularity { .. })
        ));
    }

    #[test]
    fn truncation_clips_only_the_second_order_weight() {
        let mut k = WeightKernel::new(1);
        k.set_sigma_inverse(&[1.0]);
        let (mut h1, mut h2) = ([0.0], [0.0]);
        let h: f64 = 0.01;
        k.fill(&[1.0], h, Some(1.0), &mut h1, &mut h2);
        let cap = h.sqrt() * (2.0 * (1.0 / h).ln()).sqrt();
        assert!((h1[0] - 100.0).abs() < 1e-12);
        assert!((h2[0] - (cap * cap - h) / (h * h)).abs() < 1e-9);
    }

    #[test]
    fn binary_dump_round_trips() {
        let spec = scalar_spec(0.0, 0.2);
        let ens = simulate(&spec, &TimeGrid::new(0.5, 3).unwrap(), 4, 17).unwrap();
        let mut buf = Vec::new();
        ens.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PFE1");
        assert_eq!(buf.len(), 4 + 4 * 8 + 8 * (4 * 4 + 4 * 3));
        let back = PathEnsemble::read_binary(buf.as_slice(), 0.5).unwrap();
        assert_eq!(back, ens);
        assert!(PathEnsemble::read_binary(&b"XXXX"[..], 1.0).is_err());
    }
}
