use std::time::Instant;

use rayon::prelude::*;

use super::{
    a_priori_bound, elapsed_ms, summarize, update_point, Backend, LayerDiagnostics, LayerValues,
    PointUpdate, SchemeConfig, SolveReport, StepRules, Timings,
};
use crate::error::{Error, Result};
use crate::estimators::{build_partition, fit_layer, hermite_channels, Derivatives};
use crate::linalg;
use crate::model::{check_assumptions, ProblemSpec};
use crate::numeric::CompensatedSum;
use crate::sampling::{simulate, PathEnsemble, TimeGrid, WeightKernel};

/// `v^h(T, ·) = g(T, ·)` on every path.
pub fn terminal_layer(spec: &ProblemSpec, ensemble: &PathEnsemble) -> LayerValues {
    let n = ensemble.grid.steps;
    let t = ensemble.grid.knot(n);
    let values: Vec<f64> = (0..ensemble.count)
        .into_par_iter()
        .map(|j| spec.g(t, ensemble.state(j, n)))
        .collect();
    let updates: Vec<PointUpdate> = values
        .iter()
        .map(|&value| PointUpdate {
            value,
            exercised: true,
            ..Default::default()
        })
        .collect();
    LayerValues {
        index: n,
        exercise: vec![true; values.len()],
        values,
        diagnostics: summarize(n, t, &updates),
    }
}

/// One step of the recursion on the Monte-Carlo backend: regress
/// `ψ·(1, H₁, H₂)` on the layer-`i` cloud, apply `T_h` and the obstacle.
pub fn backward_step(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    i: usize,
    next: &LayerValues,
    ensemble: &PathEnsemble,
    config: &SchemeConfig,
    value_bound: Option<f64>,
) -> Result<LayerValues> {
    let d = spec.dim;
    let n_paths = ensemble.count;
    if i >= grid.steps || next.index != i + 1 {
        return Err(Error::InvalidParameter(format!(
            "layer {i} needs values at layer {}, got layer {}",
            i + 1,
            next.index
        )));
    }
    if next.values.len() != n_paths || ensemble.dim != d || ensemble.grid.steps != grid.steps {
        return Err(Error::Dimension("ensemble, grid and layer values disagree".into()));
    }
    let h = grid.h();
    let t = grid.knot(i);
    let channels = hermite_channels(d);
    let truncation = config.estimator.truncate_increments;

    let mut targets = vec![0.0; n_paths * channels];
    let failure = targets
        .par_chunks_mut(channels)
        .enumerate()
        .map_init(
            || (WeightKernel::new(d), vec![0.0; d], vec![0.0; d * d], vec![0.0; d * d]),
            |(kernel, h1, h2, sigma), (j, row)| -> Option<Error> {
                let x = ensemble.state(j, i);
                (spec.diffusion)(t, x, sigma);
                let Some(inv) = linalg::inverse(sigma, d, spec.sigma_floor) else {
                    return Some(Error::WeightSingularity { t, x: x.to_vec() });
                };
                kernel.set_sigma_inverse(&inv);
                kernel.fill(ensemble.increment(j, i), h, truncation, h1, h2);
                let psi = next.values[j];
                row[0] = psi;
                for k in 0..d {
                    row[1 + k] = psi * h1[k];
                }
                for k in 0..d * d {
                    row[1 + d + k] = psi * h2[k];
                }
                None
            },
        )
        .find_first(|e| e.is_some())
        .flatten();
    if let Some(err) = failure {
        return Err(err);
    }

    let xs = ensemble.layer(i);
    let partition = build_partition(
        &xs,
        d,
        config.estimator.cells_per_dim,
        config.estimator.min_cell_count_for(d),
    )?;
    let est = fit_layer(&partition, &xs, &targets, channels)?;
    drop(targets);

    let rules = StepRules::new(spec, config, h, value_bound);
    let updates: Vec<Option<PointUpdate>> = xs
        .par_chunks_exact(d)
        .map_init(
            || (vec![0.0; d], vec![0.0; channels], Derivatives::zeros(d)),
            |(clamped, raw, deriv), x| {
                est.evaluate_channels(x, clamped, raw);
                Derivatives::from_channels(raw, d, deriv);
                update_point(spec, &rules, t, x, deriv)
            },
        )
        .collect();
    if let Some(j) = updates.iter().position(Option::is_none) {
        return Err(Error::NonFiniteNonlinearity {
            t,
            x: ensemble.state(j, i).to_vec(),
        });
    }
    let updates: Vec<PointUpdate> = updates.into_iter().flatten().collect();
    let mut diagnostics = summarize(i, t, &updates);
    diagnostics.cells = est.cell_count();
    diagnostics.fallback_cells = est.fallback_cells;
    Ok(LayerValues {
        index: i,
        values: updates.iter().map(|u| u.value).collect(),
        exercise: updates.iter().map(|u| u.exercised).collect(),
        diagnostics,
    })
}

/// Simulates `paths` Euler paths and runs the recursion down to `t = 0`.
///
/// All paths start at `x₀`, so layer 0 is a single-cell regression and
/// `v^h(0, x₀)` is the mean of the layer-0 values.
pub fn solve_mc(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    config: &SchemeConfig,
) -> Result<SolveReport> {
    let start = Instant::now();
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

    let sim_start = Instant::now();
    let ensemble = simulate(spec, grid, paths, seed)?;
    let simulate_ms = elapsed_ms(sim_start);

    let back_start = Instant::now();
    let mut layer = terminal_layer(spec, &ensemble);
    let mut diagnostics: Vec<LayerDiagnostics> = vec![layer.diagnostics.clone()];
    for i in (0..grid.steps).rev() {
        layer = backward_step(spec, grid, i, &layer, &ensemble, config, value_bound)?;
        diagnostics.push(layer.diagnostics.clone());
        log::debug!(
            "layer {i}: mean {:.6} exercise {:.3} cells {}",
            layer.diagnostics.mean,
            layer.diagnostics.exercise_fraction,
            layer.diagnostics.cells
        );
    }
    diagnostics.reverse();
    let backward_ms = elapsed_ms(back_start);

    let mut sum = CompensatedSum::default();
    layer.values.iter().for_each(|&v| sum.add(v));
    let value_at_origin = sum.value() / layer.values.len() as f64;

    Ok(SolveReport {
        problem: spec.id.clone(),
        backend: Backend::Mc,
        steps: grid.steps,
        h: grid.h(),
        paths,
        seed,
        value_at_origin,
        obstacle_at_origin: spec.g(0.0, &spec.eval_point),
        exercise_frac_t0: layer.diagnostics.exercise_fraction,
        value_bound,
        layers: diagnostics,
        assumptions: Some(report),
        timings: Timings {
            checks_ms,
            simulate_ms,
            backward_ms,
            total_ms: elapsed_ms(start),
        },
        config: config.clone(),
    })
}
