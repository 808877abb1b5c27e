//! Economic model of the seller/buyer supply chain.
//!
//! Goodwill `x` evolves as
//!
//! ```text
//! dx = [βp p + βw w − βx x + δ (Is + Ib)] dt + [βp p + βw w + βx x + δ (Is + Ib)]^½ dW
//! ```
//!
//! with demand `D = α − γp p − γw w + γx x`. The seller controls the
//! innovation effort `Is` (leader) and the wholesale price `w` (follower);
//! the buyer controls the retail price `p` (leader) and the innovation
//! effort `Ib` (follower). All quantities are dimensionless.
//!
//! [`KSet`] and [`PhiPsiSet`] hold the closed-form coefficient families that
//! the Riccati system, the equilibrium strategies and the verification code
//! are written in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("time {t} outside the horizon [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// Piecewise-linear function of time, stored as `(t, value)` knots.
///
/// Serialized as an array of `[t, value]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct TimeCurve {
    knots: Vec<(f64, f64)>,
}

impl TimeCurve {
    /// Constant curve on `[0, horizon]`, represented by two knots.
    pub fn constant(horizon: f64, value: f64) -> Self {
        Self {
            knots: vec![(0.0, value), (horizon, value)],
        }
    }

    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self, String> {
        if knots.len() < 2 {
            return Err("a time curve needs at least two knots".into());
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err("time curve contains a non-finite entry".into());
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("time curve knots must be strictly increasing in t".into());
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn start(&self) -> f64 {
        self.knots[0].0
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    pub fn min_value(&self) -> f64 {
        self.knots.iter().map(|k| k.1).fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation; `t` outside the knot range takes the nearest end value.
    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let last = k.len() - 1;
        if t >= k[last].0 {
            return k[last].1;
        }
        // knots are sorted; the first knot strictly after t closes the segment
        let hi = k.partition_point(|&(kt, _)| kt <= t);
        let (t0, v0) = k[hi - 1];
        let (t1, v1) = k[hi];
        if v0 == v1 {
            return v0;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

impl TryFrom<Vec<[f64; 2]>> for TimeCurve {
    type Error = String;

    fn try_from(pairs: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Self::from_knots(pairs.into_iter().map(|[t, v]| (t, v)).collect())
    }
}

impl From<TimeCurve> for Vec<[f64; 2]> {
    fn from(curve: TimeCurve) -> Self {
        curve.knots.into_iter().map(|(t, v)| [t, v]).collect()
    }
}

/// All economic and dynamics constants of the game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Retail-price effect on goodwill.
    pub beta_p: TimeCurve,
    /// Wholesale-price effect on goodwill.
    pub beta_w: TimeCurve,
    /// Innovation effectiveness.
    pub delta: TimeCurve,
    /// Goodwill decay rate.
    pub beta_x: f64,
    pub gamma_p: f64,
    pub gamma_w: f64,
    pub gamma_x: f64,
    /// Base market size.
    pub alpha: f64,
    /// Unit production cost.
    pub c0: f64,
    /// Discount rate.
    pub r: f64,
    /// Terminal time `T`.
    pub horizon: f64,
}

impl ModelParams {
    /// Baseline of the sensitivity study: βp = 0.1, βw = 0.2, βx = 0.1,
    /// δ = 0.1, γp = 0.1, γw = 0.0001, γx = 0.1, α = 1, C0 = 1, T = 1, r = 0.05.
    pub fn baseline() -> Self {
        let horizon = 1.0;
        Self {
            beta_p: TimeCurve::constant(horizon, 0.1),
            beta_w: TimeCurve::constant(horizon, 0.2),
            delta: TimeCurve::constant(horizon, 0.1),
            beta_x: 0.1,
            gamma_p: 0.1,
            gamma_w: 0.0001,
            gamma_x: 0.1,
            alpha: 1.0,
            c0: 1.0,
            r: 0.05,
            horizon,
        }
    }

    pub fn with_c0(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    /// Replaces δ(t) by a constant.
    pub fn with_constant_delta(mut self, delta: f64) -> Self {
        self.delta = TimeCurve::constant(self.horizon, delta);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("beta_x", self.beta_x),
            ("gamma_p", self.gamma_p),
            ("gamma_w", self.gamma_w),
            ("alpha", self.alpha),
            ("horizon", self.horizon),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("must be finite and > 0, got {v}")));
            }
        }
        for (field, v) in [("gamma_x", self.gamma_x), ("c0", self.c0), ("r", self.r)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        let denom = self.gamma_p * (2.0 * self.gamma_w + self.gamma_p);
        if !(denom.is_finite() && denom > 0.0) {
            return Err(invalid(
                "gamma_p",
                "gamma_p * (2 gamma_w + gamma_p) must be positive",
            ));
        }
        let curves = [
            ("beta_p", &self.beta_p, true),
            ("beta_w", &self.beta_w, true),
            ("delta", &self.delta, false),
        ];
        for (field, curve, strict) in curves {
            if curve.start() != 0.0 {
                return Err(invalid(field, "first knot must be at t = 0"));
            }
            if (curve.end() - self.horizon).abs() > 1e-12 * self.horizon.max(1.0) {
                return Err(invalid(
                    field,
                    format!("last knot must be at t = T = {}", self.horizon),
                ));
            }
            let min = curve.min_value();
            if (strict && min <= 0.0) || min < 0.0 {
                let bound = if strict { "> 0" } else { ">= 0" };
                return Err(invalid(field, format!("values must be {bound}, got {min}")));
            }
        }
        Ok(())
    }

    pub fn check_time(&self, t: f64) -> Result<(), ModelError> {
        if t.is_finite() && (0.0..=self.horizon).contains(&t) {
            Ok(())
        } else {
            Err(ModelError::TimeOutOfRange {
                t,
                horizon: self.horizon,
            })
        }
    }

    /// Magnitude of the wholesale price's response to the retail price,
    /// `γp / (2γw)`: the seller's best-response `w` falls by this much per unit of `p`.
    pub fn price_pass_through(&self) -> f64 {
        self.gamma_p / (2.0 * self.gamma_w)
    }

    /// Demand `α − γp p − γw w + γx x`.
    pub fn demand(&self, x: f64, w: f64, p: f64) -> f64 {
        self.alpha - self.gamma_p * p - self.gamma_w * w + self.gamma_x * x
    }
}

/// The coefficient family K1..K18 at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSet {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
    pub k8: f64,
    pub k9: f64,
    pub k10: f64,
    pub k11: f64,
    pub k12: f64,
    pub k13: f64,
    pub k14: f64,
    pub k15: f64,
    pub k16: f64,
    pub k17: f64,
    pub k18: f64,
}

impl KSet {
    /// Evaluates the family without checking `t` against the horizon.
    pub(crate) fn evaluate(params: &ModelParams, t: f64) -> Self {
        let ModelParams {
            beta_x,
            gamma_p: gp,
            gamma_w: gw,
            gamma_x: gx,
            alpha,
            c0,
            r,
            ..
        } = *params;
        let bp = params.beta_p.eval(t);
        let bw = params.beta_w.eval(t);
        let d2 = params.delta.eval(t).powi(2);
        let ert = (r * t).exp();
        let denom = gp * (2.0 * gw + gp);
        let two_gw = 2.0 * gw;
        let q = 1.0 + gp / two_gw;

        let k1 = -ert * gw * bw / denom;
        let k2 = ert * (2.0 * gw * bp - bw * gp) / denom;
        let k3 = (gw + gp) * gx / denom;
        let k4 = ((gw + gp) * alpha - c0 * gw * gw) / denom;

        let k5 = (ert * bw - gp * k1) / two_gw;
        let k6 = -gp * k2 / two_gw;
        let k7 = (gx - gp * k3) / two_gw;
        let k8 = (alpha + c0 * gw - gp * k4) / two_gw;

        let k9 = bp * k1 - gp * k1 * bw / two_gw + ert * bw * bw / two_gw + ert * d2 / 2.0;
        let k10 = bp * k2 - gp * k2 * bw / two_gw + ert * d2 / 2.0;
        let k11 = bp * k3 - gp * k3 * bw / two_gw + gx * bw / two_gw - beta_x;
        let k12 = bp * k4 - gp * k4 * bw / two_gw + bw * (alpha + c0 * gw) / two_gw;

        let k13 = -gp * k1 - ert * bw;
        let k14 = gx - gp * k3;
        let k15 = alpha - c0 * gw - gp * k4;
        let k16 = q * k1 - ert * bw / two_gw;
        let k17 = q * k3 - gx / two_gw;
        let k18 = q * k4 - (alpha + c0 * gw) / two_gw;

        Self {
            k1,
            k2,
            k3,
            k4,
            k5,
            k6,
            k7,
            k8,
            k9,
            k10,
            k11,
            k12,
            k13,
            k14,
            k15,
            k16,
            k17,
            k18,
        }
    }
}

/// K1..K18 at time `t`.
pub fn k_constants(params: &ModelParams, t: f64) -> Result<KSet, ModelError> {
    params.check_time(t)?;
    Ok(KSet::evaluate(params, t))
}

/// Coefficients of the quadratic pair (P2, N2):
///
/// ```text
/// P2' + Φ1 P2² + Φ2 N2² + Φ3 P2 N2 + Φ4 P2 + Φ5 N2 + Φ6 = 0
/// N2' + Ψ1 P2² + Ψ2 N2² + Ψ3 P2 N2 + Ψ4 P2 + Ψ5 N2 + Ψ6 = 0
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiPsiSet {
    pub phi: [f64; 6],
    pub psi: [f64; 6],
}

impl PhiPsiSet {
    pub(crate) fn evaluate(params: &ModelParams, t: f64) -> Self {
        let k = KSet::evaluate(params, t);
        Self::from_k(params, t, &k)
    }

    pub(crate) fn from_k(params: &ModelParams, t: f64, k: &KSet) -> Self {
        let gp = params.gamma_p;
        let q = 1.0 + params.price_pass_through();
        let ert = (params.r * t).exp();
        let emrt = (-params.r * t).exp();
        let d2 = params.delta.eval(t).powi(2);

        let phi = [
            4.0 * k.k9 + 2.0 * emrt * k.k5 * k.k13 - ert * d2,
            -2.0 * emrt * gp * k.k2 * k.k6,
            4.0 * k.k10 - 2.0 * emrt * gp * k.k2 * k.k5 + 2.0 * emrt * k.k6 * k.k13,
            2.0 * k.k11 + emrt * k.k5 * k.k14 + emrt * k.k7 * k.k13,
            emrt * k.k6 * k.k14 - emrt * gp * k.k2 * k.k7,
            emrt / 2.0 * k.k7 * k.k14,
        ];
        let psi = [
            2.0 * emrt * k.k13 * k.k16,
            4.0 * k.k10 - 2.0 * emrt * q * gp * k.k2 * k.k2 - ert * d2,
            4.0 * k.k9 - 2.0 * emrt * gp * k.k2 * k.k16 + 2.0 * emrt * q * k.k2 * k.k13,
            emrt * k.k14 * k.k16 + emrt * k.k13 * k.k17,
            2.0 * k.k11 + emrt * q * k.k2 * k.k14 - emrt * gp * k.k2 * k.k17,
            emrt / 2.0 * k.k14 * k.k17,
        ];
        Self { phi, psi }
    }

    /// Time derivatives `(P2', N2')` in forward time.
    pub fn quadratic_rhs(&self, p2: f64, n2: f64) -> (f64, f64) {
        let poly = |c: &[f64; 6]| {
            c[0] * p2 * p2 + c[1] * n2 * n2 + c[2] * p2 * n2 + c[3] * p2 + c[4] * n2 + c[5]
        };
        (-poly(&self.phi), -poly(&self.psi))
    }
}

/// Φ1..Φ6 and Ψ1..Ψ6 at time `t`.
pub fn phi_psi(params: &ModelParams, t: f64) -> Result<PhiPsiSet, ModelError> {
    params.check_time(t)?;
    Ok(PhiPsiSet::evaluate(params, t))
}

/// Second derivatives of each player's Hamiltonian in its own control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcavityReport {
    pub t: f64,
    /// ∂²Hs/∂w² = −2 e^{−rt} γw.
    pub seller_wholesale: f64,
    /// ∂²Hs/∂Is² = −2 e^{−rt}.
    pub seller_innovation: f64,
    /// ∂²Hb/∂p² with the seller's wholesale response substituted:
    /// −e^{−rt} γp (1 + γp / (2γw)).
    pub buyer_retail: f64,
    /// ∂²Hb/∂Ib² = −2 e^{−rt}.
    pub buyer_innovation: f64,
    pub all_negative: bool,
}

pub fn concavity_diagnostics(params: &ModelParams, t: f64) -> ConcavityReport {
    let emrt = (-params.r * t).exp();
    let seller_wholesale = -2.0 * emrt * params.gamma_w;
    let seller_innovation = -2.0 * emrt;
    let buyer_retail = -emrt * params.gamma_p * (1.0 + params.price_pass_through());
    let buyer_innovation = -2.0 * emrt;
    let all_negative = [
        seller_wholesale,
        seller_innovation,
        buyer_retail,
        buyer_innovation,
    ]
    .iter()
    .all(|&v| v < 0.0);
    ConcavityReport {
        t,
        seller_wholesale,
        seller_innovation,
        buyer_retail,
        buyer_innovation,
        all_negative,
    }
}
