//! Batch runs over `(n, N, seed)` grids, result files and convergence-rate
//! tables.
//!
//! A run is described by a JSON [`RunConfig`]:
//!
//! ```json
//! {
//!   "problem": { "id": "geometric_put_3d", "params": { "sigma0_sq": 0.9 } },
//!   "steps": [5, 10, 20],
//!   "paths": [500000],
//!   "seeds": [1, 2, 3],
//!   "backend": "mc",
//!   "scheme": { "estimator": { "cells_per_dim": 8 } },
//!   "output_dir": "out"
//! }
//! ```
//!
//! [`run`] writes `results.csv` (one row per solve), `reports.jsonl` (the full
//! [`SolveReport`] of every successful solve) and, when a reference value is
//! available, `rates.csv`.

mod output;
mod rate;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimators::QuadratureRule;
use crate::model::{build_problem, GeometricPutParams, ProblemSpec, PROBLEM_IDS};
use crate::reference::binomial_american_put;
use crate::sampling::TimeGrid;
use crate::scheme::{solve_mc, solve_quadrature, Backend, Mesh, SchemeConfig, SolveReport};

pub use output::{emit_csv, format_float, parse_csv, read_csv, write_csv, ResultRow, CSV_COLUMNS};
pub use rate::{rate_analysis, RateRow, RateTable};

/// Published lattice value for the default three-asset basket put; the
/// runtime binomial reference is compared against it.
pub const PUBLISHED_PUT_REFERENCE: f64 = 0.338778;
/// Allowed gap between the runtime binomial value and the published one
/// before a warning is logged.
pub const PUBLISHED_PUT_TOLERANCE: f64 = 1e-4;
/// Ratios with `|v^{h₂} − ref|` below this are left undefined.
pub const DEFAULT_REF_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub id: String,
    /// Builder parameters; missing fields take their defaults.
    #[serde(default)]
    pub params: Value,
}

/// Mesh and rule for the quadrature backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub nodes_per_dim: usize,
    /// Mesh box; `None` uses the problem's domain box.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub rule_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes_per_dim: 400,
            lower: None,
            upper: None,
            rule_nodes: 20,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_binomial_steps() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub steps: Vec<usize>,
    /// Path counts (Monte-Carlo backend only).
    #[serde(default)]
    pub paths: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Fill the `wall_ms` column; off by default so files are reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Lattice steps for the binomial reference of the put problems.
    #[serde(default = "default_binomial_steps")]
    pub binomial_steps: usize,
}

fn default_backend() -> Backend {
    Backend::Mc
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with_overrides(text, &[])
    }

    /// Parses `text` after applying `key.path=value` overrides; `value` is
    /// read as JSON when possible and as a bare string otherwise.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text)?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let config: RunConfig = serde_json::from_value(doc)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if !PROBLEM_IDS.contains(&self.problem.id.as_str()) {
            return Err(Error::UnknownProblem(self.problem.id.clone()));
        }
        if self.steps.is_empty() || self.steps.contains(&0) {
            return Err(Error::Config("`steps` must be a nonempty list of positive integers".into()));
        }
        match self.backend {
            Backend::Mc => {
                if self.paths.is_empty() || self.paths.contains(&0) {
                    return Err(Error::Config("`paths` must be a nonempty list of positive integers".into()));
                }
                if self.seeds.is_empty() {
                    return Err(Error::Config("`seeds` must be nonempty".into()));
                }
            }
            Backend::Quadrature => {
                let q = &self.quadrature;
                if q.nodes_per_dim < 2 || q.rule_nodes == 0 {
                    return Err(Error::Config("quadrature needs ≥ 2 mesh nodes and ≥ 1 rule node".into()));
                }
                if q.lower.is_some() != q.upper.is_some() {
                    return Err(Error::Config("give both `lower` and `upper` or neither".into()));
                }
            }
        }
        if self.binomial_steps == 0 {
            return Err(Error::Config("`binomial_steps` must be positive".into()));
        }
        Ok(())
    }
}

/// Sets `doc[a][b]... = value` for `a.b...=value`, creating objects on the way.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut cur = doc;
    for part in key.split('.') {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-object")))?;
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    *cur = value;
    Ok(())
}

/// Everything [`run`] produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub reports: Vec<SolveReport>,
    /// Binomial value (put problems) or the finest reduced solve
    /// (indifference problems).
    pub reference: Option<f64>,
    pub rates: Option<RateTable>,
    pub files: Vec<PathBuf>,
}

impl RunOutput {
    pub fn aborted(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

fn is_put(id: &str) -> bool {
    id.starts_with("geometric_put")
}

/// Binomial reference for a put configuration.
pub fn put_reference(params: &Value, steps: usize) -> Result<f64> {
    let p: GeometricPutParams = if params.is_null() {
        GeometricPutParams::default()
    } else {
        serde_json::from_value(params.clone())?
    };
    p.validate()?;
    let value = binomial_american_put(&p.reduced(), p.strike, p.horizon, steps)?;
    if p == GeometricPutParams::default() && (value - PUBLISHED_PUT_REFERENCE).abs() > PUBLISHED_PUT_TOLERANCE {
        log::warn!(
            "binomial reference {value:.6} differs from the published {PUBLISHED_PUT_REFERENCE} by more than {PUBLISHED_PUT_TOLERANCE}"
        );
    }
    Ok(value)
}

struct Job<'a> {
    spec: &'a ProblemSpec,
    n: usize,
    paths: usize,
    seed: u64,
}

fn solve_one(config: &RunConfig, job: &Job) -> Result<SolveReport> {
    let grid = TimeGrid::new(job.spec.horizon, job.n)?;
    match config.backend {
        Backend::Mc => solve_mc(job.spec, &grid, job.paths, job.seed, &config.scheme),
        Backend::Quadrature => {
            let q = &config.quadrature;
            let mesh = match (&q.lower, &q.upper) {
                (Some(lo), Some(hi)) => Mesh::new(q.nodes_per_dim, lo.clone(), hi.clone())?,
                _ => Mesh::over_domain(job.spec, q.nodes_per_dim)?,
            };
            let rule = QuadratureRule::gauss_hermite(q.rule_nodes, job.spec.dim)?;
            solve_quadrature(job.spec, &grid, &mesh, &rule, &config.scheme)
        }
    }
}

fn row_for(config: &RunConfig, job: &Job, outcome: &Result<SolveReport>, wall_ms: f64) -> ResultRow {
    let (value, exercise, paths, status) = match outcome {
        Ok(r) => (r.value_at_origin, r.exercise_frac_t0, r.paths, "ok".to_string()),
        Err(e) => (f64::NAN, f64::NAN, job.paths, e.code().to_string()),
    };
    ResultRow {
        problem: job.spec.id.clone(),
        backend: config.backend.as_str().to_string(),
        n: job.n,
        h: job.spec.horizon / job.n as f64,
        paths,
        seed: job.seed,
        cells_per_dim: config.scheme.estimator.cells_per_dim,
        value,
        exercise_frac_t0: exercise,
        wall_ms: if config.record_wall_time { wall_ms } else { 0.0 },
        status,
    }
}

/// Solves every `(n, N, seed)` combination (one solve per `n` on the
/// quadrature backend), continuing past per-row aborts, and writes the
/// result files into `config.output_dir`.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let id = config.problem.id.as_str();
    let spec = build_problem(id, &config.problem.params)?;
    // The 2+1-d indifference problem is always paired with its 2-d reduction.
    let companion = match id {
        "indifference_2+1d" => Some(build_problem("indifference_2d", &config.problem.params)?),
        _ => None,
    };
    let (paths, seeds) = match config.backend {
        Backend::Mc => (config.paths.clone(), config.seeds.clone()),
        Backend::Quadrature => (vec![0], vec![0]),
    };

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &n in &config.steps {
        for &n_paths in &paths {
            for &seed in &seeds {
                for s in std::iter::once(&spec).chain(companion.as_ref()) {
                    let job = Job {
                        spec: s,
                        n,
                        paths: n_paths,
                        seed,
                    };
                    let start = Instant::now();
                    let outcome = solve_one(config, &job);
                    let wall = start.elapsed().as_secs_f64() * 1e3;
                    match &outcome {
                        Ok(r) => log::info!("{} n={n} N={n_paths} seed={seed}: {:.6}", s.id, r.value_at_origin),
                        Err(e) => log::warn!("{} n={n} N={n_paths} seed={seed}: {e}", s.id),
                    }
                    rows.push(row_for(config, &job, &outcome, wall));
                    if let Ok(r) = outcome {
                        reports.push(r);
                    }
                }
            }
        }
    }

    let reference = if is_put(id) {
        Some(put_reference(&config.problem.params, config.binomial_steps)?)
    } else {
        finest_value(&rows, "indifference_2d")
    };
    let rates = reference.and_then(|r| rates_for(&rows, id, r, DEFAULT_REF_FLOOR).ok());

    fs::create_dir_all(&config.output_dir)?;
    let mut files = Vec::new();
    let csv_path = config.output_dir.join("results.csv");
    emit_csv(&rows, &csv_path)?;
    files.push(csv_path);
    let jsonl_path = config.output_dir.join("reports.jsonl");
    let mut w = BufWriter::new(File::create(&jsonl_path)?);
    for r in &reports {
        let mut r = r.clone();
        if !config.record_wall_time {
            r.timings = Default::default();
        }
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    files.push(jsonl_path);
    if let Some(table) = &rates {
        let path = config.output_dir.join("rates.csv");
        table.write_csv(File::create(&path)?)?;
        files.push(path);
    }

    Ok(RunOutput {
        rows,
        reports,
        reference,
        rates,
        files,
    })
}

/// Mean value over seeds of the smallest-`h`, largest-budget successful rows
/// of `problem`.
pub fn finest_value(rows: &[ResultRow], problem: &str) -> Option<f64> {
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.problem == problem && r.is_ok()).collect();
    let best = ok.iter().map(|r| (r.n, r.paths)).max()?;
    let vals: Vec<f64> = ok
        .iter()
        .filter(|r| (r.n, r.paths) == best)
        .map(|r| r.value)
        .collect();
    Some(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Rate table for `problem` using, per `n`, the rows with the largest
/// budget averaged over seeds.
pub fn rates_for(rows: &[ResultRow], problem: &str, reference: f64, ref_floor: f64) -> Result<RateTable> {
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.problem == problem && r.is_ok()).collect();
    let mut values = Vec::new();
    for r in &ok {
        let max_paths = ok.iter().filter(|o| o.n == r.n).map(|o| o.paths).max().unwrap_or(0);
        if r.paths == max_paths {
            values.push((r.h, r.value));
        }
    }
    rate_analysis(&values, reference, ref_floor)
}

/// Reference picked by `rate --reference auto`: the binomial value for the
/// put problems (default parameters) or the finest reduced indifference
/// solve found in `rows`.
pub fn auto_reference(rows: &[ResultRow], problem: &str) -> Result<f64> {
    if is_put(problem) {
        put_reference(&Value::Null, default_binomial_steps())
    } else {
        finest_value(rows, "indifference_2d")
            .ok_or_else(|| Error::InsufficientData("no successful indifference_2d rows".into()))
    }
}
