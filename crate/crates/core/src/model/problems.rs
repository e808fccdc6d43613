//! Built-in benchmark problems and the id registry used by run configs.

use serde::{Deserialize, Serialize};

use super::ProblemSpec;
use crate::error::{Error, Result};
use crate::reference::{reduce_geometric, ReducedGbm};

/// Ids accepted by [`build_problem`].
pub const PROBLEM_IDS: [&str; 4] = [
    "geometric_put_3d",
    "geometric_put_1d",
    "indifference_2+1d",
    "indifference_2d",
];

/// Half-width of the diagnostic box in units of `σ√T`.
const BOX_WIDTH_SIGMAS: f64 = 5.0;

/// Geometric-basket American put under risk-neutral Black-Scholes dynamics,
/// with a share `sigma0_sq` of the diffusion simulated and the rest carried
/// by the nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricPutParams {
    pub rate: f64,
    pub sigmas: Vec<f64>,
    pub strike: f64,
    pub horizon: f64,
    pub sigma0_sq: f64,
    pub spots: Vec<f64>,
    /// Simulate the `r x` drift in `L^X`; otherwise `r Σ x_i ∂_i v` moves into `F`.
    pub drift_in_linear_part: bool,
}

impl Default for GeometricPutParams {
    fn default() -> Self {
        GeometricPutParams {
            rate: 0.03,
            sigmas: vec![0.1, 0.1, 0.1],
            strike: 8.0,
            horizon: 1.0,
            sigma0_sq: 1.0,
            spots: vec![2.0, 2.0, 2.0],
            drift_in_linear_part: true,
        }
    }
}

impl GeometricPutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma0_sq must lie in (0, 1], got {}",
                self.sigma0_sq
            )));
        }
        if self.sigmas.is_empty() || self.sigmas.len() != self.spots.len() {
            return Err(Error::Dimension(
                "sigmas and spots must be nonempty and of equal length".into(),
            ));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.sigmas.iter().chain(&self.spots).all(|&v| positive(v)) {
            return Err(Error::InvalidParameter("sigmas and spots must be positive".into()));
        }
        if !positive(self.rate) || !positive(self.strike) || !positive(self.horizon) {
            return Err(Error::InvalidParameter(
                "rate, strike and horizon must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The one-dimensional basket `ξ = Π s_i` under the risk-neutral measure.
    pub fn reduced(&self) -> ReducedGbm {
        let mus = vec![self.rate; self.sigmas.len()];
        reduce_geometric(&mus, &self.sigmas, &self.spots, self.rate)
    }
}

/// The `d`-asset geometric put, state `x = (s_1, …, s_d)`.
///
/// `L^X` carries `σ₀ diag(x) diag(σ)` (and `r x` when
/// `drift_in_linear_part`), while
/// `F = ((1-σ₀²)/2) Σ x_i² σ_i² γ_ii - r v`; the discount lives in `F`
/// so the obstacle is the undiscounted payoff `(K - Π x_i)₊`.
pub fn make_geometric_put(params: &GeometricPutParams) -> Result<ProblemSpec> {
    params.validate()?;
    let d = params.sigmas.len();
    let r = params.rate;
    let k = params.strike;
    let s0 = params.sigma0_sq.sqrt();
    let split = 0.5 * (1.0 - params.sigma0_sq);
    let sig = params.sigmas.clone();
    let sig_f = params.sigmas.clone();
    let drift_linear = params.drift_in_linear_part;

    let (lo, hi): (Vec<f64>, Vec<f64>) = params
        .spots
        .iter()
        .zip(&params.sigmas)
        .map(|(&s, &v)| {
            let w = BOX_WIDTH_SIGMAS * v * params.horizon.sqrt();
            (s * (-w).exp(), s * w.exp())
        })
        .unzip();
    // |∇g|² = Σ_i Π_{j≠i} x_j², maximised at the upper corner.
    let lip_x = (0..d)
        .map(|i| {
            (0..d)
                .filter(|&j| j != i)
                .map(|j| hi[j] * hi[j])
                .product::<f64>()
        })
        .sum::<f64>()
        .sqrt();

    ProblemSpec::builder("geometric_put_3d", d, params.horizon)
        .drift(move |_, x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = if drift_linear { r * xi } else { 0.0 };
            }
        })
        .diffusion(move |_, x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                out[i * d + i] = s0 * x[i] * sig[i];
            }
        })
        .nonlinearity(move |_, x, v, p, gamma| {
            let mut acc = -r * v;
            for i in 0..d {
                acc += split * x[i] * x[i] * sig_f[i] * sig_f[i] * gamma[i * d + i];
                if !drift_linear {
                    acc += r * x[i] * p[i];
                }
            }
            acc
        })
        .obstacle(move |_, x| (k - x.iter().product::<f64>()).max(0.0))
        .eval_point(params.spots.clone())
        .domain_box(lo, hi)
        .regularity(lip_x, 0.0, k)
        .build()
}

/// The same put written on the basket `ξ = Π s_i`, a one-dimensional GBM
/// with drift `d·r` and volatility `σ̄ = (Σ σ_i²)^{1/2}`, discounted at `r`.
pub fn make_reduced_put(params: &GeometricPutParams) -> Result<ProblemSpec> {
    params.validate()?;
    let red = params.reduced();
    let r = params.rate;
    let k = params.strike;
    let growth = red.drift_bar;
    let vol = red.vol_bar;
    let s0 = params.sigma0_sq.sqrt();
    let split = 0.5 * (1.0 - params.sigma0_sq);
    let drift_linear = params.drift_in_linear_part;
    let w = BOX_WIDTH_SIGMAS * vol * params.horizon.sqrt();

    ProblemSpec::builder("geometric_put_1d", 1, params.horizon)
        .drift(move |_, x, out| out[0] = if drift_linear { growth * x[0] } else { 0.0 })
        .diffusion(move |_, x, out| out[0] = s0 * vol * x[0])
        .nonlinearity(move |_, x, v, p, gamma| {
            let mut acc = -r * v + split * vol * vol * x[0] * x[0] * gamma[0];
            if !drift_linear {
                acc += growth * x[0] * p[0];
            }
            acc
        })
        .obstacle(move |_, x| (k - x[0]).max(0.0))
        .eval_point(vec![red.spot])
        .domain_box(vec![red.spot * (-w).exp()], vec![red.spot * w.exp()])
        .regularity(1.0, 0.0, k)
        .build()
}

/// Exponential-utility indifference price of a geometric put on
/// non-tradable assets, hedged with a correlated tradable asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndifferenceParams {
    pub mu0: f64,
    pub sigma0: f64,
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub risk_aversion: f64,
    pub strike: f64,
    pub horizon: f64,
    /// Artificial diffusion of the wealth coordinate in `L^X`.
    pub eps: f64,
    pub wealth: f64,
    pub spots: Vec<f64>,
}

impl Default for IndifferenceParams {
    fn default() -> Self {
        IndifferenceParams {
            mu0: 0.1,
            sigma0: 0.1,
            mus: vec![0.1, 0.1],
            sigmas: vec![0.1, 0.1],
            rhos: vec![0.1, 0.1],
            risk_aversion: 1.0,
            strike: 1.0,
            horizon: 1.0,
            eps: 0.05,
            wealth: 1.0,
            spots: vec![1.0, 1.0],
        }
    }
}

impl IndifferenceParams {
    pub fn validate(&self) -> Result<()> {
        let m = self.sigmas.len();
        if m == 0 || self.mus.len() != m || self.rhos.len() != m || self.spots.len() != m {
            return Err(Error::Dimension(
                "mus, sigmas, rhos and spots must be nonempty and of equal length".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.risk_aversion > 0.0) {
            return Err(Error::InvalidParameter("risk_aversion must be positive".into()));
        }
        if !(self.sigma0 > 0.0) {
            return Err(Error::InvalidParameter("sigma0 must be positive".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        if !self.sigmas.iter().chain(&self.spots).all(|&v| v > 0.0) {
            return Err(Error::InvalidParameter("sigmas and spots must be positive".into()));
        }
        Ok(())
    }

    fn market_price_of_risk_rate(&self) -> f64 {
        self.mu0 * self.mu0 / (2.0 * self.sigma0 * self.sigma0)
    }

    fn wealth_box(&self) -> (f64, f64) {
        let w = BOX_WIDTH_SIGMAS * self.eps * self.horizon.sqrt();
        (self.wealth - w, self.wealth + w)
    }
}

/// `−(μ₀ p_x + σ₀ Σ_i c_i γ_{x,i})² / (2σ₀² γ_xx) − ½ε² γ_xx`
/// where `c_i` multiplies the mixed derivative against coordinate `i ≥ 1`.
fn hedging_nonlinearity(
    mu0: f64,
    sigma0: f64,
    eps: f64,
    mixed: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
    d: usize,
) -> impl Fn(f64, &[f64], f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static {
    move |_, x, _, p, gamma| {
        let gxx = gamma[0];
        let mut num = mu0 * p[0];
        for i in 1..d {
            num += sigma0 * mixed(x, i) * gamma[i];
        }
        -num * num / (2.0 * sigma0 * sigma0 * gxx) - 0.5 * eps * eps * gxx
    }
}

/// Three-dimensional controller-stopper problem with state `(x, s_1, s_2)`.
///
/// `L^X` simulates `dx = ε dB̄` and the assets' own GBM dynamics; the optimal
/// hedge enters through `F`. The obstacle is the value of stopping now and
/// investing optimally until `T`.
pub fn make_indifference(params: &IndifferenceParams) -> Result<ProblemSpec> {
    params.validate()?;
    let m = params.sigmas.len();
    let d = m + 1;
    let eps = params.eps;
    let mus = params.mus.clone();
    let sig = params.sigmas.clone();
    let coef: Vec<f64> = params
        .rhos
        .iter()
        .zip(&params.sigmas)
        .map(|(r, s)| r * s)
        .collect();
    let gamma_ra = params.risk_aversion;
    let k = params.strike;
    let horizon = params.horizon;
    let lambda = params.market_price_of_risk_rate();

    let (xlo, xhi) = params.wealth_box();
    let mut lo = vec![xlo];
    let mut hi = vec![xhi];
    for (&s, &v) in params.spots.iter().zip(&params.sigmas) {
        let w = BOX_WIDTH_SIGMAS * v * horizon.sqrt();
        lo.push(s * (-w).exp());
        hi.push(s * w.exp());
    }
    let bound = (-gamma_ra * xlo).exp();
    let payoff_slope_sq: f64 = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j != i)
                .map(|j| hi[j + 1] * hi[j + 1])
                .product::<f64>()
        })
        .sum();
    let lip_x = gamma_ra * bound * (1.0 + payoff_slope_sq).sqrt();
    let holder_t = lambda * bound * horizon.sqrt();

    let mut eval_point = vec![params.wealth];
    eval_point.extend_from_slice(&params.spots);

    ProblemSpec::builder("indifference_2+1d", d, horizon)
        .drift(move |_, x, out| {
            out[0] = 0.0;
            for i in 0..m {
                out[i + 1] = mus[i] * x[i + 1];
            }
        })
        .diffusion(move |_, x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = eps;
            for i in 0..m {
                out[(i + 1) * d + i + 1] = sig[i] * x[i + 1];
            }
        })
        .nonlinearity(hedging_nonlinearity(
            params.mu0,
            params.sigma0,
            eps,
            move |x, i| coef[i - 1] * x[i],
            d,
        ))
        .obstacle(move |t, x| {
            let basket: f64 = x[1..].iter().product();
            let payoff = (k - basket).max(0.0);
            -(-lambda * (horizon - t) - gamma_ra * (x[0] + payoff)).exp()
        })
        .eval_point(eval_point)
        .domain_box(lo, hi)
        .regularity(lip_x, holder_t, bound)
        .concave_component(Some(0))
        .build()
}

/// The indifference problem reduced to state `(x, ξ)` with `ξ = Π s_i`.
pub fn make_reduced_indifference(params: &IndifferenceParams) -> Result<ProblemSpec> {
    params.validate()?;
    let red = reduce_geometric(&params.mus, &params.sigmas, &params.spots, 0.0);
    let eps = params.eps;
    let mu_bar = red.drift_bar;
    let vol = red.vol_bar;
    // Covariation of dξ/ξ with the hedge's Brownian motion.
    let cross: f64 = params.rhos.iter().zip(&params.sigmas).map(|(r, s)| r * s).sum();
    let gamma_ra = params.risk_aversion;
    let k = params.strike;
    let horizon = params.horizon;
    let lambda = params.market_price_of_risk_rate();

    let (xlo, xhi) = params.wealth_box();
    let w = BOX_WIDTH_SIGMAS * vol * horizon.sqrt();
    let bound = (-gamma_ra * xlo).exp();
    let lip_x = gamma_ra * bound * 2f64.sqrt();
    let holder_t = lambda * bound * horizon.sqrt();

    ProblemSpec::builder("indifference_2d", 2, horizon)
        .drift(move |_, x, out| {
            out[0] = 0.0;
            out[1] = mu_bar * x[1];
        })
        .diffusion(move |_, x, out| {
            out[0] = eps;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = vol * x[1];
        })
        .nonlinearity(hedging_nonlinearity(
            params.mu0,
            params.sigma0,
            eps,
            move |x, _| cross * x[1],
            2,
        ))
        .obstacle(move |t, x| {
            let payoff = (k - x[1]).max(0.0);
            -(-lambda * (horizon - t) - gamma_ra * (x[0] + payoff)).exp()
        })
        .eval_point(vec![params.wealth, red.spot])
        .domain_box(vec![xlo, red.spot * (-w).exp()], vec![xhi, red.spot * w.exp()])
        .regularity(lip_x, holder_t, bound)
        .concave_component(Some(0))
        .build()
}

fn params_from<T: for<'de> Deserialize<'de> + Default>(params: &serde_json::Value) -> Result<T> {
    if params.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(params.clone()).map_err(|e| Error::Config(e.to_string()))
}

/// Resolves a problem id and its JSON parameter overrides (`null` for defaults).
pub fn build_problem(id: &str, params: &serde_json::Value) -> Result<ProblemSpec> {
    match id {
        "geometric_put_3d" => make_geometric_put(&params_from(params)?),
        "geometric_put_1d" => make_reduced_put(&params_from(params)?),
        "indifference_2+1d" => make_indifference(&params_from(params)?),
        "indifference_2d" => make_reduced_indifference(&params_from(params)?),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn put(sigma0_sq: f64) -> ProblemSpec {
        make_geometric_put(&GeometricPutParams {
            sigma0_sq,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn longstaff_schwartz_split_is_pure_discounting() {
        let spec = put(1.0);
        let x = [2.1, 1.9, 2.0];
        let gamma = [1.0, 0.3, 0.2, 0.3, -4.0, 0.1, 0.2, 0.1, 7.0];
        let f = spec.f(0.3, &x, 0.5, &[1.0, -2.0, 3.0], &gamma);
        assert!((f - (-0.03 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn nonlinear_split_carries_residual_diffusion() {
        let spec = put(0.9);
        let x = [2.0, 2.0, 2.0];
        let mut gamma = [0.0; 9];
        gamma[0] = 1.0;
        // ((1 - 0.9) / 2) * 4 * 0.01 * 1
        let f = spec.f(0.0, &x, 0.0, &[0.0; 3], &gamma);
        assert!((f - 0.002).abs() < 1e-15);
        let sigma = spec.diffusion_at(0.0, &x);
        assert!((sigma[0] - 0.9f64.sqrt() * 0.2).abs() < 1e-15);
    }

    #[test]
    fn put_obstacle_at_the_money_is_zero() {
        let spec = put(1.0);
        assert_eq!(spec.g(0.0, &[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(spec.g(0.0, &[1.0, 2.0, 2.0]), 4.0);
    }

    #[test]
    fn sigma0_outside_unit_interval_rejected() {
        for bad in [0.0, -0.5, 1.2] {
            let err = make_geometric_put(&GeometricPutParams {
                sigma0_sq: bad,
                ..Default::default()
            })
            .unwrap_err();
            assert!(matches!(err, Error::InvalidParameter(_)));
        }
    }

    #[test]
    fn drift_moves_into_nonlinearity_when_requested() {
        let spec = make_geometric_put(&GeometricPutParams {
            drift_in_linear_part: false,
            ..Default::default()
        })
        .unwrap();
        let x = [2.0, 1.0, 3.0];
        assert_eq!(spec.drift_at(0.0, &x), vec![0.0; 3]);
        let f = spec.f(0.0, &x, 0.0, &[1.0, 1.0, 1.0], &[0.0; 9]);
        assert!((f - 0.03 * 6.0).abs() < 1e-15);
    }

    #[test]
    fn indifference_nonlinearity_hand_value() {
        let spec = make_indifference(&IndifferenceParams::default()).unwrap();
        let mut gamma = [0.0; 9];
        gamma[0] = -1.0;
        let f = spec.f(0.0, &[1.0, 1.0, 1.0], -0.3, &[0.0, 0.4, -0.2], &gamma);
        assert!((f - 0.5 * 0.05 * 0.05).abs() < 1e-15);

        // μ₀ p_x = 0.1 * 0.3, mixed term σ₀ ρ σ s γ_xs = 0.1 * 0.01 * 2 * 0.5
        gamma[1] = 0.5;
        let f = spec.f(0.0, &[1.0, 2.0, 1.0], 0.0, &[0.3, 0.0, 0.0], &gamma);
        let num: f64 = 0.03 + 0.001;
        let expected = -num * num / -(2.0 * 0.01) + 0.5 * 0.0025;
        assert!((f - expected).abs() < 1e-15);
    }

    #[test]
    fn indifference_terminal_and_obstacle() {
        let spec = make_indifference(&IndifferenceParams::default()).unwrap();
        assert_eq!(spec.g(1.0, &[0.0, 1.0, 1.0]), -1.0);
        let g0 = spec.g(0.0, &[1.0, 1.0, 1.0]);
        assert!((g0 + (-1.5f64).exp()).abs() < 1e-15);
        // in the money: payoff 0.5 with s1 s2 = 0.5
        let gt = spec.g(1.0, &[0.0, 0.5, 1.0]);
        assert!((gt + (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(spec.concave_component, Some(0));
    }

    #[test]
    fn reduced_indifference_matches_full_on_the_basket() {
        let params = IndifferenceParams::default();
        let full = make_indifference(&params).unwrap();
        let red = make_reduced_indifference(&params).unwrap();
        for (x, s1, s2) in [(1.0, 1.0, 1.0), (0.8, 0.7, 1.2), (1.1, 1.5, 0.4)] {
            assert_eq!(full.g(0.4, &[x, s1, s2]), red.g(0.4, &[x, s1 * s2]));
        }
    }

    #[test]
    fn registry_resolves_ids_and_overrides() {
        for id in PROBLEM_IDS {
            let spec = build_problem(id, &serde_json::Value::Null).unwrap();
            assert_eq!(spec.id, id);
        }
        let spec = build_problem(
            "geometric_put_3d",
            &serde_json::json!({"sigma0_sq": 0.9, "strike": 9.0}),
        )
        .unwrap();
        assert_eq!(spec.g(0.0, &[2.0, 2.0, 2.0]), 1.0);
        assert!(matches!(
            build_problem("nope", &serde_json::Value::Null),
            Err(Error::UnknownProblem(_))
        ));
        assert!(matches!(
            build_problem("geometric_put_3d", &serde_json::json!({"bogus": 1})),
            Err(Error::Config(_))
        ));
    }
}
