//! Obstacle-problem specifications.
//!
//! A [`ProblemSpec`] bundles the linear part `L^X` (drift and diffusion that
//! drive the simulated Euler chain), the nonlinearity `F(t, x, r, p, γ)` and
//! the obstacle `g`, which doubles as terminal condition.

mod assumptions;
mod problems;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub use assumptions::{check_assumptions, AssumptionPass, AssumptionReport, ASSUMPTION_TOLERANCE};
pub use problems::{
    build_problem, make_geometric_put, make_indifference, make_reduced_indifference,
    make_reduced_put, GeometricPutParams, IndifferenceParams, PROBLEM_IDS,
};

/// `μ(t, x)` written into the output slice.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `σ(t, x)` written row-major into the output slice (`d × d`).
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `F(t, x, r, p, γ)` with `γ` row-major `d × d`.
pub type NonlinearityFn = Arc<dyn Fn(f64, &[f64], f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// `g(t, x)`.
pub type ObstacleFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// An obstacle problem `min{-L^X v - F(·, v, Dv, D²v), v - g} = 0`, `v(T) = g(T)`.
///
/// Immutable once built; cloning shares the underlying closures.
#[derive(Clone)]
pub struct ProblemSpec {
    pub id: String,
    pub dim: usize,
    pub horizon: f64,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub nonlinearity: NonlinearityFn,
    pub obstacle: ObstacleFn,
    /// Point where `v(0, ·)` is reported.
    pub eval_point: Vec<f64>,
    /// Bounding box used for diagnostics and quadrature meshes.
    pub domain_box: (Vec<f64>, Vec<f64>),
    /// Declared Lipschitz constant of `g` in `x` on the box.
    pub lip_x: f64,
    /// Declared ½-Hölder constant of `g` in `t`.
    pub holder_t: f64,
    /// Declared bound on `|g|` over the box.
    pub obstacle_bound: f64,
    /// Smallest singular value of `σ` accepted as invertible.
    pub sigma_floor: f64,
    /// Hessian diagonal entry that must stay negative for `F` to be finite.
    pub concave_component: Option<usize>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("eval_point", &self.eval_point)
            .field("domain_box", &self.domain_box)
            .field("lip_x", &self.lip_x)
            .field("holder_t", &self.holder_t)
            .field("obstacle_bound", &self.obstacle_bound)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Starts a builder with zero drift, identity diffusion, `F ≡ 0` and `g ≡ 0`.
    pub fn builder(id: impl Into<String>, dim: usize, horizon: f64) -> ProblemBuilder {
        ProblemBuilder::new(id.into(), dim, horizon)
    }

    pub fn drift_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.drift)(t, x, &mut out);
        out
    }

    pub fn diffusion_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        (self.diffusion)(t, x, &mut out);
        out
    }

    #[inline]
    pub fn f(&self, t: f64, x: &[f64], r: f64, p: &[f64], gamma: &[f64]) -> f64 {
        (self.nonlinearity)(t, x, r, p, gamma)
    }

    #[inline]
    pub fn g(&self, t: f64, x: &[f64]) -> f64 {
        (self.obstacle)(t, x)
    }
}

pub struct ProblemBuilder {
    spec: ProblemSpec,
}

impl ProblemBuilder {
    fn new(id: String, dim: usize, horizon: f64) -> Self {
        let d = dim;
        let spec = ProblemSpec {
            id,
            dim,
            horizon,
            drift: Arc::new(|_, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            diffusion: Arc::new(move |_, _, out: &mut [f64]| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..d {
                    out[k * d + k] = 1.0;
                }
            }),
            nonlinearity: Arc::new(|_, _, _, _, _| 0.0),
            obstacle: Arc::new(|_, _| 0.0),
            eval_point: vec![0.0; dim],
            domain_box: (vec![-1.0; dim], vec![1.0; dim]),
            lip_x: 0.0,
            holder_t: 0.0,
            obstacle_bound: 0.0,
            sigma_floor: 1e-12,
            concave_component: None,
        };
        ProblemBuilder { spec }
    }

    pub fn drift(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.spec.drift = Arc::new(f);
        self
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.spec.diffusion = Arc::new(f);
        self
    }

    pub fn nonlinearity(
        mut self,
        f: impl Fn(f64, &[f64], f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.spec.nonlinearity = Arc::new(f);
        self
    }

    pub fn obstacle(mut self, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.obstacle = Arc::new(f);
        self
    }

    pub fn eval_point(mut self, x: Vec<f64>) -> Self {
        self.spec.eval_point = x;
        self
    }

    pub fn domain_box(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.spec.domain_box = (lo, hi);
        self
    }

    pub fn regularity(mut self, lip_x: f64, holder_t: f64, obstacle_bound: f64) -> Self {
        self.spec.lip_x = lip_x;
        self.spec.holder_t = holder_t;
        self.spec.obstacle_bound = obstacle_bound;
        self
    }

    pub fn sigma_floor(mut self, floor: f64) -> Self {
        self.spec.sigma_floor = floor;
        self
    }

    pub fn concave_component(mut self, k: Option<usize>) -> Self {
        self.spec.concave_component = k;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        let s = self.spec;
        if s.dim == 0 {
            return Err(Error::InvalidParameter("dim must be at least 1".into()));
        }
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                s.horizon
            )));
        }
        if s.eval_point.len() != s.dim {
            return Err(Error::Dimension(format!(
                "eval_point has length {}, expected {}",
                s.eval_point.len(),
                s.dim
            )));
        }
        let (lo, hi) = &s.domain_box;
        if lo.len() != s.dim || hi.len() != s.dim {
            return Err(Error::Dimension("domain_box corners must have length dim".into()));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter("domain_box must have lo < hi".into()));
        }
        if let Some(k) = s.concave_component {
            if k >= s.dim {
                return Err(Error::Dimension(format!("concave component {k} out of range")));
            }
        }
        if [s.lip_x, s.holder_t, s.obstacle_bound, s.sigma_floor]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::InvalidParameter(
                "regularity constants must be nonnegative".into(),
            ));
        }
        Ok(s)
    }
}
