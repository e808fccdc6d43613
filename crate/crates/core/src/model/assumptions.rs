//! Numerical spot checks of the structural conditions on `F` that make the
//! scheme monotone and stable.
//!
//! Partial derivatives of `F` are taken by central finite differences at a
//! seeded probe cloud over `domain_box × [0, T]` with random `(r, p, γ)`.

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ProblemSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::numeric::{max_poison, min_poison, unit_open};

/// Slack allowed on the domination and monotonicity inequalities.
pub const ASSUMPTION_TOLERANCE: f64 = 1e-6;

/// Range of the `p` and `γ` probe entries.
const DERIVATIVE_PROBE_RANGE: f64 = 10.0;

/// Eigenvalue cutoff for the pseudo-inverse of `F_γ`.
const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionPass {
    /// `F(·, 0, 0, 0)` bounded and `F` finite at every probe.
    pub bounded: bool,
    /// `σ` invertible at every probe.
    pub invertible: bool,
    /// `F_γ ≤ ½a`, i.e. `domination_max ≤ 1`.
    pub dominated: bool,
    /// `F_p ∈ Image(F_γ)` with `F_pᵀ F_γ⁻ F_p` bounded.
    pub image: bool,
    /// `F_r − ¼ F_pᵀ F_γ⁻ F_p ≥ 0`.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub probe_count: usize,
    pub fd_step: f64,
    pub seed: u64,
    /// max |F(t, x, 0, 0, 0)|.
    pub f_zero_bound: f64,
    /// max |F_r|.
    pub lipschitz_r: f64,
    /// min singular value of σ.
    pub sigma_condition_min: f64,
    /// max eigenvalue of `2 a⁻¹ F_γ`, the ratio of `F_γ` to the `½a` of `L^X`.
    pub domination_max: f64,
    /// max |F_p − F_γ F_γ⁻ F_p| / (1 + |F_p|).
    pub image_residual_max: f64,
    /// max F_pᵀ F_γ⁻ F_p.
    pub gradient_quadratic_max: f64,
    /// min of `F_r − ¼ F_pᵀ F_γ⁻ F_p`.
    pub monotonicity_min: f64,
    pub pass: AssumptionPass,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        let p = self.pass;
        p.bounded && p.invertible && p.dominated && p.image && p.monotone
    }

    /// Whether the one-step operator with step `h` is monotone: the
    /// continuous conditions with the zeroth-order part relaxed to
    /// `1 + h (F_r − ¼ F_pᵀF_γ⁻F_p) ≥ 0`.
    pub fn scheme_monotone(&self, h: f64) -> bool {
        let p = self.pass;
        p.bounded
            && p.invertible
            && p.dominated
            && p.image
            && 1.0 + h * self.monotonicity_min >= -ASSUMPTION_TOLERANCE
    }

    /// Growth constant `C` of the a-priori bound `(|g|∞ + 1) e^{CT}`.
    pub fn growth_constant(&self) -> f64 {
        self.lipschitz_r.max(self.f_zero_bound)
    }
}

struct Probe {
    t: f64,
    x: Vec<f64>,
    r: f64,
    p: Vec<f64>,
    gamma: Vec<f64>,
}

#[derive(Clone, Copy)]
struct ProbeResult {
    f_zero: f64,
    f_r: f64,
    sigma_min: f64,
    domination: f64,
    residual: f64,
    quad: f64,
    monotonicity: f64,
}

impl ProbeResult {
    fn identity() -> Self {
        ProbeResult {
            f_zero: 0.0,
            f_r: 0.0,
            sigma_min: f64::INFINITY,
            domination: f64::NEG_INFINITY,
            residual: 0.0,
            quad: 0.0,
            monotonicity: f64::INFINITY,
        }
    }

    fn merge(self, o: Self) -> Self {
        ProbeResult {
            f_zero: max_poison(self.f_zero, o.f_zero),
            f_r: max_poison(self.f_r, o.f_r),
            sigma_min: min_poison(self.sigma_min, o.sigma_min),
            domination: max_poison(self.domination, o.domination),
            residual: max_poison(self.residual, o.residual),
            quad: max_poison(self.quad, o.quad),
            monotonicity: min_poison(self.monotonicity, o.monotonicity),
        }
    }
}

/// Samples `probe_count` points and reports the structural conditions.
/// Deterministic in `seed`; singular `σ` fails the affected checks rather
/// than erroring.
pub fn check_assumptions(
    spec: &ProblemSpec,
    probe_count: usize,
    fd_step: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    if probe_count == 0 {
        return Err(Error::InvalidParameter("probe_count must be at least 1".into()));
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidParameter("fd_step must be positive".into()));
    }
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * unit_open(rng.next_u64());
    let bound = spec.obstacle_bound;
    let probes: Vec<Probe> = (0..probe_count)
        .map(|_| {
            let t = uniform(0.0, spec.horizon);
            let x = (0..d)
                .map(|k| uniform(spec.domain_box.0[k], spec.domain_box.1[k]))
                .collect();
            let r = uniform(-bound, bound);
            let p = (0..d)
                .map(|_| uniform(-DERIVATIVE_PROBE_RANGE, DERIVATIVE_PROBE_RANGE))
                .collect();
            let mut gamma = vec![0.0; d * d];
            for a in 0..d {
                for b in a..d {
                    let v = uniform(-DERIVATIVE_PROBE_RANGE, DERIVATIVE_PROBE_RANGE);
                    gamma[a * d + b] = v;
                    gamma[b * d + a] = v;
                }
            }
            Probe { t, x, r, p, gamma }
        })
        .collect();

    let agg = probes
        .par_iter()
        .map(|probe| evaluate_probe(spec, probe, fd_step))
        .reduce(ProbeResult::identity, ProbeResult::merge);

    let pass = AssumptionPass {
        bounded: agg.f_zero.is_finite() && agg.f_r.is_finite(),
        invertible: agg.sigma_min > spec.sigma_floor,
        dominated: agg.domination <= 1.0 + ASSUMPTION_TOLERANCE,
        image: agg.residual <= ASSUMPTION_TOLERANCE.sqrt() && agg.quad.is_finite(),
        monotone: agg.monotonicity >= -ASSUMPTION_TOLERANCE,
    };
    Ok(AssumptionReport {
        probe_count,
        fd_step,
        seed,
        f_zero_bound: agg.f_zero,
        lipschitz_r: agg.f_r,
        sigma_condition_min: agg.sigma_min,
        domination_max: agg.domination,
        image_residual_max: agg.residual,
        gradient_quadratic_max: agg.quad,
        monotonicity_min: agg.monotonicity,
        pass,
    })
}

fn evaluate_probe(spec: &ProblemSpec, probe: &Probe, step: f64) -> ProbeResult {
    let d = spec.dim;
    let Probe { t, x, r, p, gamma } = probe;
    let f = |r: f64, p: &[f64], g: &[f64]| spec.f(*t, x, r, p, g);

    let f_zero = f(0.0, &vec![0.0; d], &vec![0.0; d * d]).abs();
    let f_r = (f(r + step, p, gamma) - f(r - step, p, gamma)) / (2.0 * step);

    let mut f_p = vec![0.0; d];
    let mut pp = p.clone();
    for k in 0..d {
        pp[k] = p[k] + step;
        let up = f(*r, &pp, gamma);
        pp[k] = p[k] - step;
        let down = f(*r, &pp, gamma);
        pp[k] = p[k];
        f_p[k] = (up - down) / (2.0 * step);
    }

    // Symmetric perturbations: off-diagonal entries move in pairs, so the
    // difference quotient counts each of ∂F/∂γ_kl and ∂F/∂γ_lk once.
    let mut f_gamma = DMatrix::zeros(d, d);
    let mut gg = gamma.clone();
    for a in 0..d {
        for b in a..d {
            let bump = |gg: &mut Vec<f64>, delta: f64| {
                gg[a * d + b] += delta;
                if a != b {
                    gg[b * d + a] += delta;
                }
            };
            bump(&mut gg, step);
            let up = f(*r, p, &gg);
            bump(&mut gg, -2.0 * step);
            let down = f(*r, p, &gg);
            bump(&mut gg, step);
            let q = (up - down) / (2.0 * step);
            let entry = if a == b { q } else { 0.5 * q };
            f_gamma[(a, b)] = entry;
            f_gamma[(b, a)] = entry;
        }
    }

    let sigma = spec.diffusion_at(*t, x);
    let sigma_min = linalg::min_singular_value(&sigma, d);
    let domination = match linalg::inverse(&sigma, d, spec.sigma_floor) {
        Some(inv) => {
            // σ⁻¹ F_γ σ⁻ᵀ is similar to a⁻¹ F_γ and symmetric.
            let s_inv = linalg::to_matrix(&inv, d);
            let m = &s_inv * &f_gamma * s_inv.transpose() * 2.0;
            linalg::max_sym_eigenvalue(&m)
        }
        None => f64::INFINITY,
    };

    let pinv = linalg::sym_pseudo_inverse(&f_gamma, PINV_CUTOFF);
    let fp = linalg::dvector(&f_p);
    let projected = &f_gamma * (&pinv * &fp);
    let residual = (&fp - projected).norm() / (1.0 + fp.norm());
    let quad = fp.dot(&(&pinv * &fp));
    let monotonicity = f_r - 0.25 * quad;

    ProbeResult {
        f_zero,
        f_r: f_r.abs(),
        sigma_min,
        domination,
        residual,
        quad,
        monotonicity,
    }
}
