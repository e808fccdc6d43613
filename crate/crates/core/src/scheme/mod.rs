//! Backward induction
//!
//! ```text
//! v(T, ·)   = g(T, ·)
//! v(t_i, x) = max{ E[v(t_{i+1}, X̂)] + h F(t_i, x, D_h v), g(t_i, x) }
//! ```
//!
//! over either the regression Monte-Carlo backend ([`solve_mc`]) or the
//! quadrature mesh backend ([`solve_quadrature`]).

mod mc;
mod quadrature;

use serde::{Deserialize, Serialize};

use crate::estimators::{Derivatives, EstimatorConfig};
use crate::model::{AssumptionReport, ProblemSpec};

pub use mc::{backward_step, solve_mc, terminal_layer};
pub use quadrature::{
    quadrature_backward_step, solve_quadrature, solve_quadrature_full, Mesh, QuadratureSolution,
};

/// Knobs shared by both backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub estimator: EstimatorConfig,
    /// Keep the concave Hessian entry of problems that declare one at or
    /// below `-guard_delta · scale` before evaluating `F`.
    pub singularity_guard: bool,
    pub guard_delta: f64,
    /// Clamp `T_h` to the a-priori bound `(|g|∞ + 1) e^{CT}`.
    pub value_truncation: bool,
    /// Take the max with the obstacle before maturity; when off only the
    /// terminal condition uses `g`.
    pub apply_obstacle: bool,
    /// Solve even if the structural checks fail.
    pub override_assumptions: bool,
    pub probe_count: usize,
    pub fd_step: f64,
    pub probe_seed: u64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            estimator: EstimatorConfig::default(),
            singularity_guard: true,
            guard_delta: 1e-4,
            value_truncation: true,
            apply_obstacle: true,
            override_assumptions: false,
            probe_count: 1000,
            fd_step: 1e-4,
            probe_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mc,
    Quadrature,
}

impl Backend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::Mc => "mc",
            Backend::Quadrature => "quadrature",
        }
    }
}

/// Per-layer summary statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub index: usize,
    pub time: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub exercise_fraction: f64,
    pub cells: usize,
    pub fallback_cells: usize,
    pub evaluations: usize,
    pub guard_activations: usize,
    pub nonfinite: usize,
    pub truncated: usize,
    pub extrapolated: usize,
}

/// `v^h(t_i, ·)` on the ensemble's paths or on mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerValues {
    pub index: usize,
    pub values: Vec<f64>,
    /// Points where the obstacle is active.
    pub exercise: Vec<bool>,
    pub diagnostics: LayerDiagnostics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub checks_ms: f64,
    pub simulate_ms: f64,
    pub backward_ms: f64,
    pub total_ms: f64,
}

/// Outcome of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub problem: String,
    pub backend: Backend,
    pub steps: usize,
    pub h: f64,
    /// Paths (Monte-Carlo) or mesh nodes (quadrature).
    pub paths: usize,
    pub seed: u64,
    pub value_at_origin: f64,
    pub obstacle_at_origin: f64,
    pub exercise_frac_t0: f64,
    pub value_bound: Option<f64>,
    /// Layer 0 first.
    pub layers: Vec<LayerDiagnostics>,
    pub assumptions: Option<AssumptionReport>,
    pub timings: Timings,
    pub config: SchemeConfig,
}

impl SolveReport {
    pub fn guard_activations(&self) -> usize {
        self.layers.iter().map(|l| l.guard_activations).sum()
    }

    pub fn evaluations(&self) -> usize {
        self.layers.iter().map(|l| l.evaluations).sum()
    }

    /// Share of `F` evaluations where the singularity guard fired.
    pub fn guard_fraction(&self) -> f64 {
        let n = self.evaluations();
        if n == 0 {
            0.0
        } else {
            self.guard_activations() as f64 / n as f64
        }
    }
}

/// Guard/truncation settings resolved against a problem.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepRules {
    pub h: f64,
    pub guard: Option<(usize, f64)>,
    pub value_bound: Option<f64>,
    pub apply_obstacle: bool,
}

impl StepRules {
    pub(crate) fn new(spec: &ProblemSpec, config: &SchemeConfig, h: f64, value_bound: Option<f64>) -> Self {
        let scale = if spec.obstacle_bound > 0.0 { spec.obstacle_bound } else { 1.0 };
        let guard = match (config.singularity_guard, spec.concave_component) {
            (true, Some(k)) => Some((k, config.guard_delta * scale)),
            _ => None,
        };
        StepRules {
            h,
            guard,
            value_bound,
            apply_obstacle: config.apply_obstacle,
        }
    }
}

/// Outcome of `max{T_h, g}` at one point.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PointUpdate {
    pub value: f64,
    pub exercised: bool,
    pub guarded: bool,
    pub nonfinite: bool,
    pub truncated: bool,
}

/// Applies `T_h = ψ̂ + h F(t, x, ψ̂, D̂ψ, D̂²ψ)` and the obstacle at one point.
/// Returns `None` when `F` is non-finite and no guard is configured.
pub(crate) fn update_point(
    spec: &ProblemSpec,
    rules: &StepRules,
    t: f64,
    x: &[f64],
    est: &mut Derivatives,
) -> Option<PointUpdate> {
    let d = spec.dim;
    let mut upd = PointUpdate::default();
    if let Some((k, delta)) = rules.guard {
        let entry = &mut est.hess[k * d + k];
        if *entry > -delta {
            *entry = -delta;
            upd.guarded = true;
        }
    }
    let f = spec.f(t, x, est.value, &est.grad, &est.hess);
    let mut th = if f.is_finite() {
        est.value + rules.h * f
    } else if rules.guard.is_some() {
        upd.nonfinite = true;
        est.value
    } else {
        return None;
    };
    if let Some(b) = rules.value_bound {
        if th.abs() > b {
            th = th.clamp(-b, b);
            upd.truncated = true;
        }
    }
    if rules.apply_obstacle {
        let g = spec.g(t, x);
        upd.exercised = g >= th;
        upd.value = th.max(g);
    } else {
        upd.value = th;
    }
    Some(upd)
}

/// Fills min/max/mean/exercise/guard statistics from per-point updates.
pub(crate) fn summarize(index: usize, time: f64, updates: &[PointUpdate]) -> LayerDiagnostics {
    let n = updates.len();
    let mut sum = crate::numeric::CompensatedSum::default();
    let mut diag = LayerDiagnostics {
        index,
        time,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        evaluations: n,
        ..Default::default()
    };
    let mut exercised = 0usize;
    for u in updates {
        diag.min = diag.min.min(u.value);
        diag.max = diag.max.max(u.value);
        sum.add(u.value);
        exercised += usize::from(u.exercised);
        diag.guard_activations += usize::from(u.guarded);
        diag.nonfinite += usize::from(u.nonfinite);
        diag.truncated += usize::from(u.truncated);
    }
    if n > 0 {
        diag.mean = sum.value() / n as f64;
        diag.exercise_fraction = exercised as f64 / n as f64;
    }
    diag
}

/// `(|g|∞ + 1) e^{C T}` with `C` from the assumption probes. When the probes
/// find `F` unbounded (e.g. a `1/γ` singularity) `C` falls back to `1/T`.
pub(crate) fn a_priori_bound(spec: &ProblemSpec, report: &AssumptionReport) -> f64 {
    let c = match report.growth_constant() {
        c if c.is_finite() => c,
        _ => 1.0 / spec.horizon,
    };
    let b = (spec.obstacle_bound + 1.0) * (c * spec.horizon).exp();
    if b.is_finite() {
        b
    } else {
        f64::MAX
    }
}

pub(crate) fn elapsed_ms(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
