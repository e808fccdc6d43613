use nalgebra::DMatrix;

use super::regression::Derivatives;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ProblemSpec;
use crate::sampling::{StepScratch, WeightKernel};

/// Largest dimension the tensorised rule is used for.
pub const MAX_QUADRATURE_DIM: usize = 2;

/// Gauss-Hermite rule for `N(0, I_d)`, tensorised from a `q`-point
/// one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub nodes_1d: Vec<f64>,
    pub weights_1d: Vec<f64>,
}

impl QuadratureRule {
    /// `q`-point rule (exact for polynomials of degree `≤ 2q − 1`).
    pub fn gauss_hermite(q: usize, dim: usize) -> Result<Self> {
        if q == 0 || dim == 0 {
            return Err(Error::InvalidParameter("rule needs q ≥ 1 and dim ≥ 1".into()));
        }
        if q > 150 {
            return Err(Error::InvalidParameter("more than 150 nodes is not supported".into()));
        }
        // Golub-Welsch on the probabilists' Hermite Jacobi matrix for a
        // starting guess, then Newton polishing and the closed-form weights
        // w_k = q! / (q He_{q-1}(x_k))².
        let jacobi = DMatrix::from_fn(q, q, |a, b| {
            if a + 1 == b || b + 1 == a {
                (a.max(b) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_unstable_by(f64::total_cmp);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (he, he_prev) = hermite_pair(q, *x);
                let step = he / (q as f64 * he_prev);
                if !step.is_finite() {
                    break;
                }
                *x -= step;
            }
        }
        // Exact symmetry about zero.
        for k in 0..q / 2 {
            let m = 0.5 * (nodes[q - 1 - k] - nodes[k]);
            nodes[k] = -m;
            nodes[q - 1 - k] = m;
        }
        if q % 2 == 1 {
            nodes[q / 2] = 0.0;
        }
        let ln_fact: f64 = (1..=q).map(|k| (k as f64).ln()).sum();
        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let (_, he_prev) = hermite_pair(q, x);
                (ln_fact - 2.0 * (q as f64 * he_prev.abs()).ln()).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(QuadratureRule {
            dim,
            nodes_1d: nodes,
            weights_1d: weights,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes_1d.len().pow(self.dim as u32)
    }

    /// Visits every tensor node `(z, w)`.
    pub fn for_each_node(&self, mut f: impl FnMut(&[f64], f64)) {
        let q = self.nodes_1d.len();
        let mut idx = vec![0usize; self.dim];
        let mut z = vec![0.0; self.dim];
        for _ in 0..self.node_count() {
            let mut w = 1.0;
            for k in 0..self.dim {
                z[k] = self.nodes_1d[idx[k]];
                w *= self.weights_1d[idx[k]];
            }
            f(&z, w);
            for k in (0..self.dim).rev() {
                idx[k] += 1;
                if idx[k] < q {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Sum of all tensor weights.
    pub fn total_weight(&self) -> f64 {
        self.weights_1d.iter().sum::<f64>().powi(self.dim as i32)
    }
}

/// `(He_q(x), He_{q-1}(x))` by the three-term recurrence.
fn hermite_pair(q: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (1.0, x);
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 1..q {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Buffers for repeated quadrature evaluations at one dimension.
pub(crate) struct QuadScratch {
    step: StepScratch,
    kernel: WeightKernel,
    dw: Vec<f64>,
    y: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    acc: Vec<f64>,
}

impl QuadScratch {
    pub(crate) fn new(d: usize) -> Self {
        QuadScratch {
            step: StepScratch::new(d),
            kernel: WeightKernel::new(d),
            dw: vec![0.0; d],
            y: vec![0.0; d],
            h1: vec![0.0; d],
            h2: vec![0.0; d * d],
            acc: vec![0.0; 1 + d + d * d],
        }
    }

    /// Integrates `ψ(y) (1, H₁, H₂)` over the one-step Euler transition from
    /// `(t, x)`; `ψ` receives the landed point.
    pub(crate) fn integrate(
        &mut self,
        spec: &ProblemSpec,
        t: f64,
        x: &[f64],
        h: f64,
        rule: &QuadratureRule,
        mut psi: impl FnMut(&[f64]) -> f64,
        out: &mut Derivatives,
    ) -> Result<()> {
        let d = spec.dim;
        let sigma = spec.diffusion_at(t, x);
        let inv = linalg::inverse(&sigma, d, spec.sigma_floor).ok_or_else(|| {
            Error::WeightSingularity {
                t,
                x: x.to_vec(),
            }
        })?;
        self.kernel.set_sigma_inverse(&inv);
        self.acc.iter_mut().for_each(|v| *v = 0.0);
        let sqrt_h = h.sqrt();
        let QuadScratch {
            step,
            kernel,
            dw,
            y,
            h1,
            h2,
            acc,
        } = self;
        rule.for_each_node(|z, w| {
            for k in 0..d {
                dw[k] = sqrt_h * z[k];
            }
            step.step(spec, t, x, h, dw, y);
            let v = w * psi(y);
            kernel.fill(dw, h, None, h1, h2);
            acc[0] += v;
            for k in 0..d {
                acc[1 + k] += v * h1[k];
            }
            for k in 0..d * d {
                acc[1 + d + k] += v * h2[k];
            }
        });
        Derivatives::from_channels(acc, d, out);
        Ok(())
    }
}

/// Deterministic `E[ψ(t+h, X̂_{t+h}) (1, H₁, H₂) | X̂_t = x]` by quadrature.
pub fn quad_conditional(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    h: f64,
    psi: impl Fn(f64, &[f64]) -> f64,
    rule: &QuadratureRule,
) -> Result<Derivatives> {
    let d = spec.dim;
    if d > MAX_QUADRATURE_DIM {
        return Err(Error::Dimension(format!(
            "quadrature backend supports d ≤ {MAX_QUADRATURE_DIM}, got {d}"
        )));
    }
    if rule.dim != d {
        return Err(Error::Dimension(format!("rule dimension {} ≠ {d}", rule.dim)));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("step must be positive".into()));
    }
    let total = rule.total_weight();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::QuadratureTooCoarse { sum: total });
    }
    let mut scratch = QuadScratch::new(d);
    let mut out = Derivatives::zeros(d);
    scratch.integrate(spec, t, x, h, rule, |y| psi(t + h, y), &mut out)?;
    Ok(out)
}
