//! Conditional-expectation estimators for `E[ψ(t+h, X̂_{t+h}) H | X̂_t = x]`.
//!
//! The Monte-Carlo backend regresses per-path targets `ψ·H` on a local affine
//! basis over an adaptive hypercube [`Partition`]; the quadrature backend
//! integrates against tensorised Gauss-Hermite nodes.

mod partition;
mod quadrature;
mod regression;

use serde::{Deserialize, Serialize};

pub use partition::{build_partition, Partition};
pub use quadrature::{quad_conditional, QuadratureRule, MAX_QUADRATURE_DIM};
pub use regression::{fit_layer, Derivatives, LayerEstimator};

pub(crate) use quadrature::QuadScratch;

/// Regression settings for the Monte-Carlo backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub cells_per_dim: usize,
    /// Minimum points per regression cell; `None` means `10 (d + 1)`.
    pub min_cell_count: Option<usize>,
    /// Clip increments entering `H₂` at `c √h √(2 log(1/h))`.
    pub truncate_increments: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            cells_per_dim: 8,
            min_cell_count: None,
            truncate_increments: None,
        }
    }
}

impl EstimatorConfig {
    pub fn min_cell_count_for(&self, dim: usize) -> usize {
        self.min_cell_count.unwrap_or(10 * (dim + 1))
    }
}

/// Number of regression channels `1 + d + d²` carried for value, gradient
/// and (unsymmetrised) Hessian.
#[inline]
pub fn hermite_channels(d: usize) -> usize {
    1 + d + d * d
}
