use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    a_priori_bound, elapsed_ms, summarize, update_point, Backend, LayerValues, PointUpdate,
    SchemeConfig, SolveReport, StepRules, Timings,
};
use crate::error::{Error, Result};
use crate::estimators::{Derivatives, QuadScratch, QuadratureRule};
use crate::model::{check_assumptions, ProblemSpec};
use crate::sampling::TimeGrid;

/// Uniform tensor mesh on a box; node values are stored with the last
/// coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nodes_per_dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Mesh {
    pub fn new(nodes_per_dim: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if nodes_per_dim < 2 {
            return Err(Error::InvalidParameter("mesh needs at least 2 nodes per dimension".into()));
        }
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Dimension("mesh bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidParameter("mesh bounds must satisfy lower < upper".into()));
        }
        Ok(Mesh {
            nodes_per_dim,
            lower,
            upper,
        })
    }

    /// Mesh spanning the problem's domain box.
    pub fn over_domain(spec: &ProblemSpec, nodes_per_dim: usize) -> Result<Self> {
        Mesh::new(nodes_per_dim, spec.domain_box.0.clone(), spec.domain_box.1.clone())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_dim.pow(self.dim() as u32)
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / (self.nodes_per_dim - 1) as f64
    }

    pub fn node(&self, mut index: usize, out: &mut [f64]) {
        let n = self.nodes_per_dim;
        for k in (0..self.dim()).rev() {
            let i = index % n;
            index /= n;
            out[k] = if i == n - 1 {
                self.upper[k]
            } else {
                self.lower[k] + i as f64 * self.spacing(k)
            };
        }
    }

    /// Multilinear interpolation of node `values` at `x`. Points outside
    /// the box are clamped onto it; the second component reports that.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> (f64, bool) {
        let d = self.dim();
        let n = self.nodes_per_dim;
        debug_assert_eq!(values.len(), self.node_count());
        let mut outside = false;
        // (base index, fraction) per coordinate; d is small.
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(d <= 8, "mesh interpolation supports d ≤ 8");
        for k in 0..d {
            let mut xk = x[k];
            if !(xk >= self.lower[k]) || !(xk <= self.upper[k]) {
                outside = true;
                xk = if xk.is_nan() { self.lower[k] } else { xk.clamp(self.lower[k], self.upper[k]) };
            }
            let s = (xk - self.lower[k]) / self.spacing(k);
            let i = (s.floor() as usize).min(n - 2);
            base[k] = i;
            frac[k] = (s - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                let up = (corner >> (d - 1 - k)) & 1;
                w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
                idx = idx * n + base[k] + up;
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        (acc, outside)
    }
}

/// Node values for every layer plus the summary report.
#[derive(Debug, Clone)]
pub struct QuadratureSolution {
    pub mesh: Mesh,
    /// Layer 0 first.
    pub layers: Vec<LayerValues>,
    pub report: SolveReport,
}

fn check_rule(spec: &ProblemSpec, mesh: &Mesh, rule: &QuadratureRule) -> Result<()> {
    if mesh.dim() != spec.dim || rule.dim != spec.dim {
        return Err(Error::Dimension(format!(
            "problem dimension {}, mesh {}, rule {}",
            spec.dim,
            mesh.dim(),
            rule.dim
        )));
    }
    if spec.dim > crate::estimators::MAX_QUADRATURE_DIM {
        return Err(Error::Dimension(format!(
            "quadrature backend supports d ≤ {}, got {}",
            crate::estimators::MAX_QUADRATURE_DIM,
            spec.dim
        )));
    }
    let total = rule.total_weight();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::QuadratureTooCoarse { sum: total });
    }
    Ok(())
}

/// `T_h` and the obstacle at a single point, reading layer `i + 1` from the
/// mesh (or from `g(T, ·)` when `i + 1` is maturity).
#[allow(clippy::too_many_arguments)]
fn step_point(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    i: usize,
    mesh: &Mesh,
    next: &LayerValues,
    rule: &QuadratureRule,
    rules: &StepRules,
    scratch: &mut QuadScratch,
    deriv: &mut Derivatives,
    x: &[f64],
) -> Result<(PointUpdate, bool)> {
    let t = grid.knot(i);
    let t_next = grid.knot(i + 1);
    let terminal = i + 1 == grid.steps;
    let mut extrapolated = false;
    scratch.integrate(
        spec,
        t,
        x,
        grid.h(),
        rule,
        |y| {
            if terminal {
                spec.g(t_next, y)
            } else {
                let (v, out) = mesh.interpolate(&next.values, y);
                extrapolated |= out;
                v
            }
        },
        deriv,
    )?;
    let upd = update_point(spec, rules, t, x, deriv).ok_or_else(|| Error::NonFiniteNonlinearity {
        t,
        x: x.to_vec(),
    })?;
    Ok((upd, extrapolated))
}

/// One step of the recursion on the mesh.
pub fn quadrature_backward_step(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    i: usize,
    mesh: &Mesh,
    next: &LayerValues,
    rule: &QuadratureRule,
    config: &SchemeConfig,
    value_bound: Option<f64>,
) -> Result<LayerValues> {
    check_rule(spec, mesh, rule)?;
    if i >= grid.steps || next.index != i + 1 {
        return Err(Error::InvalidParameter(format!(
            "layer {i} needs values at layer {}, got layer {}",
            i + 1,
            next.index
        )));
    }
    let terminal = i + 1 == grid.steps;
    if !terminal && next.values.len() != mesh.node_count() {
        return Err(Error::Dimension("layer values do not match mesh".into()));
    }
    let d = spec.dim;
    let rules = StepRules::new(spec, config, grid.h(), value_bound);
    let results: Vec<Result<(PointUpdate, bool)>> = (0..mesh.node_count())
        .into_par_iter()
        .map_init(
            || (QuadScratch::new(d), Derivatives::zeros(d), vec![0.0; d]),
            |(scratch, deriv, x), node| {
                mesh.node(node, x);
                step_point(spec, grid, i, mesh, next, rule, &rules, scratch, deriv, x)
            },
        )
        .collect();
    let mut updates = Vec::with_capacity(results.len());
    let mut extrapolated = 0usize;
    for r in results {
        let (u, out) = r?;
        extrapolated += usize::from(out);
        updates.push(u);
    }
    let mut diagnostics = summarize(i, grid.knot(i), &updates);
    diagnostics.extrapolated = extrapolated;
    Ok(LayerValues {
        index: i,
        values: updates.iter().map(|u| u.value).collect(),
        exercise: updates.iter().map(|u| u.exercised).collect(),
        diagnostics,
    })
}

/// Runs the recursion on `mesh` and evaluates `v^h(0, x₀)` by one direct
/// quadrature step from layer 1.
pub fn solve_quadrature_full(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    mesh: &Mesh,
    rule: &QuadratureRule,
    config: &SchemeConfig,
) -> Result<QuadratureSolution> {
    let start = Instant::now();
    check_rule(spec, mesh, rule)?;
    if (grid.horizon - spec.horizon).abs() > 1e-12 * spec.horizon {
        return Err(Error::InvalidParameter(format!(
            "grid horizon {} differs from problem horizon {}",
            grid.horizon, spec.horizon
        )));
    }
    let report = check_assumptions(spec, config.probe_count, config.fd_step, config.probe_seed)?;
    if !config.override_assumptions && !report.scheme_monotone(grid.h()) {
        return Err(Error::AssumptionsFailed(format!("{:?}", report.pass)));
    }
    let value_bound = config.value_truncation.then(|| a_priori_bound(spec, &report));
    let checks_ms = elapsed_ms(start);

    let back_start = Instant::now();
    let n = grid.steps;
    let t_end = grid.knot(n);
    let mut x = vec![0.0; spec.dim];
    let terminal_updates: Vec<PointUpdate> = (0..mesh.node_count())
        .map(|k| {
            mesh.node(k, &mut x);
            PointUpdate {
                value: spec.g(t_end, &x),
                exercised: true,
                ..Default::default()
            }
        })
        .collect();
    let mut layers = vec![LayerValues {
        index: n,
        values: terminal_updates.iter().map(|u| u.value).collect(),
        exercise: vec![true; terminal_updates.len()],
        diagnostics: summarize(n, t_end, &terminal_updates),
    }];
    for i in (0..n).rev() {
        let next = layers.last().expect("terminal layer present");
        let layer = quadrature_backward_step(spec, grid, i, mesh, next, rule, config, value_bound)?;
        layers.push(layer);
    }
    layers.reverse();

    let rules = StepRules::new(spec, config, grid.h(), value_bound);
    let mut scratch = QuadScratch::new(spec.dim);
    let mut deriv = Derivatives::zeros(spec.dim);
    let (origin, _) = step_point(
        spec,
        grid,
        0,
        mesh,
        &layers[1],
        rule,
        &rules,
        &mut scratch,
        &mut deriv,
        &spec.eval_point,
    )?;
    let backward_ms = elapsed_ms(back_start);

    let report = SolveReport {
        problem: spec.id.clone(),
        backend: Backend::Quadrature,
        steps: n,
        h: grid.h(),
        paths: mesh.node_count(),
        seed: 0,
        value_at_origin: origin.value,
        obstacle_at_origin: spec.g(0.0, &spec.eval_point),
        exercise_frac_t0: if origin.exercised { 1.0 } else { 0.0 },
        value_bound,
        layers: layers.iter().map(|l| l.diagnostics.clone()).collect(),
        assumptions: Some(report),
        timings: Timings {
            checks_ms,
            simulate_ms: 0.0,
            backward_ms,
            total_ms: elapsed_ms(start),
        },
        config: config.clone(),
    };
    Ok(QuadratureSolution {
        mesh: mesh.clone(),
        layers,
        report,
    })
}

/// [`solve_quadrature_full`] without the node values.
pub fn solve_quadrature(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    mesh: &Mesh,
    rule: &QuadratureRule,
    config: &SchemeConfig,
) -> Result<SolveReport> {
    solve_quadrature_full(spec, grid, mesh, rule, config).map(|s| s.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_nodes_and_interpolation_of_affine_functions() {
        let mesh = Mesh::new(5, vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(mesh.node_count(), 25);
        let mut x = [0.0; 2];
        mesh.node(7, &mut x);
        assert_eq!(x, [0.5, 0.0]);
        mesh.node(24, &mut x);
        assert_eq!(x, [2.0, 1.0]);
        let values: Vec<f64> = (0..25)
            .map(|k| {
                mesh.node(k, &mut x);
                1.0 + 2.0 * x[0] - 3.0 * x[1]
            })
            .collect();
        for p in [[0.3, 0.7], [1.99, -0.99], [1.0, 0.0]] {
            let (v, out) = mesh.interpolate(&values, &p);
            assert!(!out);
            assert!((v - (1.0 + 2.0 * p[0] - 3.0 * p[1])).abs() < 1e-12);
        }
        let (v, out) = mesh.interpolate(&values, &[3.0, 0.0]);
        assert!(out);
        assert!((v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mesh_rejects_degenerate_boxes() {
        assert!(Mesh::new(1, vec![0.0], vec![1.0]).is_err());
        assert!(Mesh::new(3, vec![1.0], vec![1.0]).is_err());
        assert!(Mesh::new(3, vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn heat_equation_with_zero_obstacle_stays_below_terminal_max() {
        let spec = ProblemSpec::builder("heat", 1, 1.0)
            .obstacle(|_t, x: &[f64]| (-x[0] * x[0]).exp())
            .eval_point(vec![0.0])
            .domain_box(vec![-6.0], vec![6.0])
            .regularity(2.0, 0.0, 1.0)
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let mesh = Mesh::over_domain(&spec, 241).unwrap();
        let rule = QuadratureRule::gauss_hermite(20, 1).unwrap();
        let config = SchemeConfig {
            apply_obstacle: false,
            ..Default::default()
        };
        let report = solve_quadrature(&spec, &grid, &mesh, &rule, &config).unwrap();
        // E[exp(-W_1²)] = 1/√3
        assert!((report.value_at_origin - 1.0 / 3f64.sqrt()).abs() < 2e-3, "{}", report.value_at_origin);
        assert_eq!(report.layers.len(), 11);
        assert_eq!(report.layers[0].index, 0);
    }
}
