//! Stochastic schemes for fully nonlinear parabolic obstacle problems
//!
//! ```text
//! min{ -L^X v - F(t, x, v, Dv, D²v), v - g } = 0   on [0, T) × R^d
//! v(T, ·) = g(T, ·)
//! ```
//!
//! The backward recursion `v(t_i) = max{ E[v(t_{i+1})] + h F(·, D_h v), g(t_i) }`
//! is evaluated either by local-affine least-squares regression over simulated
//! Euler paths (Monte-Carlo backend) or by tensorised Gauss-Hermite quadrature on
//! a fixed mesh (deterministic backend, d ≤ 2). The derivative estimates `D_h v`
//! come from Gaussian integration-by-parts weights.
//!
//! Modules:
//! - [`model`]: problem specifications, built-in benchmarks, assumption checks.
//! - [`sampling`]: time grids, seeded Euler path ensembles, Hermite weights.
//! - [`estimators`]: partitions, local regression, Gauss-Hermite quadrature.
//! - [`scheme`]: backward induction over either backend.
//! - [`reference`]: binomial and closed-form oracles for the geometric basket.
//! - [`experiments`]: run configuration, CSV output and rate analysis.

// `!(x > 0.0)` is used deliberately so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod model;
pub mod reference;
pub mod sampling;
pub mod scheme;

mod linalg;
mod numeric;

pub use error::{Error, Result};
pub use estimators::{
    build_partition, fit_layer, quad_conditional, EstimatorConfig, LayerEstimator, Partition,
    QuadratureRule,
};
pub use experiments::{rate_analysis, RateRow, RateTable, RunConfig};
pub use model::{
    check_assumptions, make_geometric_put, make_indifference, AssumptionReport, GeometricPutParams,
    IndifferenceParams, ProblemSpec,
};
pub use reference::{binomial_american_put, lognormal_european_put, reduce_geometric, ReducedGbm};
pub use sampling::{euler_step, simulate, weights, HermiteWeights, PathEnsemble, TimeGrid};
pub use scheme::{
    backward_step, solve_mc, solve_quadrature, LayerValues, Mesh, SchemeConfig, SolveReport,
};
