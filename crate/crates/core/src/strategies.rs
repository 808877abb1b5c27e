//! Feedback Stackelberg-Nash equilibrium strategies.
//!
//! Every equilibrium control is affine in goodwill, `u*(t, x) = u_x(t)·x + u_0(t)`,
//! with slope and intercept built from the Riccati trajectories:
//!
//! ```text
//! w*  = (2K5 P2 + 2K6 N2 + K7) x + K5 (P1 + P2) + K6 (N1 + N2) + K8
//! p*  = (2K1 P2 + 2K2 N2 + K3) x + K1 (P1 + P2) + K2 (N1 + N2) + K4
//! Is* = e^{rt} δ/2 (2 P2 x + P1 + P2)
//! Ib* = e^{rt} δ/2 (2 N2 x + N1 + N2)
//! ```
//!
//! The nonnegativity clamp `max(u*, 0)` is applied only when a control is
//! evaluated; all identities are checked on the unclamped forms.

use serde::Serialize;
use thiserror::Error;

use crate::fmt::num;
use crate::model::{KSet, ModelParams};
use crate::riccati::{RiccatiSolution, TimeMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("Riccati solution is incomplete (blow-up at reversed time {eta})")]
    IncompleteSolution { eta: f64 },
}

/// Names of the eight slope/intercept trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, serde::Deserialize)]
pub enum Coefficient {
    #[serde(rename = "w_x")]
    WX,
    #[serde(rename = "w_0")]
    W0,
    #[serde(rename = "p_x")]
    PX,
    #[serde(rename = "p_0")]
    P0,
    #[serde(rename = "i_sx", alias = "I_sx")]
    ISX,
    #[serde(rename = "i_s0", alias = "I_s0")]
    IS0,
    #[serde(rename = "i_bx", alias = "I_bx")]
    IBX,
    #[serde(rename = "i_b0", alias = "I_b0")]
    IB0,
}

impl Coefficient {
    pub const ALL: [Coefficient; 8] = [
        Coefficient::WX,
        Coefficient::W0,
        Coefficient::PX,
        Coefficient::P0,
        Coefficient::ISX,
        Coefficient::IS0,
        Coefficient::IBX,
        Coefficient::IB0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::WX => "w_x",
            Coefficient::W0 => "w_0",
            Coefficient::PX => "p_x",
            Coefficient::P0 => "p_0",
            Coefficient::ISX => "i_sx",
            Coefficient::IS0 => "i_s0",
            Coefficient::IBX => "i_bx",
            Coefficient::IB0 => "i_b0",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

/// Slope (`_x`) and intercept (`_0`) trajectories on the solution mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyCoefficients {
    pub mesh: TimeMesh,
    pub w_x: Vec<f64>,
    pub w_0: Vec<f64>,
    pub p_x: Vec<f64>,
    pub p_0: Vec<f64>,
    pub i_sx: Vec<f64>,
    pub i_s0: Vec<f64>,
    pub i_bx: Vec<f64>,
    pub i_b0: Vec<f64>,
}

/// Four controls in the order the model lists them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Controls {
    pub w: f64,
    pub i_s: f64,
    pub p: f64,
    pub i_b: f64,
}

impl Controls {
    pub fn clamped(self) -> Controls {
        Controls {
            w: self.w.max(0.0),
            i_s: self.i_s.max(0.0),
            p: self.p.max(0.0),
            i_b: self.i_b.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValuePair {
    pub v_s: f64,
    pub v_b: f64,
}

pub fn strategy_coefficients(
    params: &ModelParams,
    sol: &RiccatiSolution,
) -> Result<StrategyCoefficients, StrategyError> {
    if !sol.existence_ok {
        return Err(StrategyError::IncompleteSolution { eta: sol.eta });
    }
    Ok(coefficients_on_window(params, sol))
}

/// Same as [`strategy_coefficients`] but tolerates a truncated solution;
/// unreached nodes come out as NaN.
pub(crate) fn coefficients_on_window(
    params: &ModelParams,
    sol: &RiccatiSolution,
) -> StrategyCoefficients {
    let mesh = sol.mesh;
    let len = mesh.len();
    let mut c = StrategyCoefficients {
        mesh,
        w_x: Vec::with_capacity(len),
        w_0: Vec::with_capacity(len),
        p_x: Vec::with_capacity(len),
        p_0: Vec::with_capacity(len),
        i_sx: Vec::with_capacity(len),
        i_s0: Vec::with_capacity(len),
        i_bx: Vec::with_capacity(len),
        i_b0: Vec::with_capacity(len),
    };
    for i in 0..len {
        let t = mesh.node(i);
        let k = KSet::evaluate(params, t);
        let [p2, p1, _, n2, n1, _] = sol.state(i);
        let ps = p1 + p2;
        let ns = n1 + n2;
        let scale = (params.r * t).exp() * params.delta.eval(t);
        c.w_x.push(2.0 * k.k5 * p2 + 2.0 * k.k6 * n2 + k.k7);
        c.w_0.push(k.k5 * ps + k.k6 * ns + k.k8);
        c.p_x.push(2.0 * k.k1 * p2 + 2.0 * k.k2 * n2 + k.k3);
        c.p_0.push(k.k1 * ps + k.k2 * ns + k.k4);
        c.i_sx.push(scale * p2);
        c.i_s0.push(scale * ps / 2.0);
        c.i_bx.push(scale * n2);
        c.i_b0.push(scale * ns / 2.0);
    }
    c
}

impl StrategyCoefficients {
    pub fn trajectory(&self, c: Coefficient) -> &[f64] {
        match c {
            Coefficient::WX => &self.w_x,
            Coefficient::W0 => &self.w_0,
            Coefficient::PX => &self.p_x,
            Coefficient::P0 => &self.p_0,
            Coefficient::ISX => &self.i_sx,
            Coefficient::IS0 => &self.i_s0,
            Coefficient::IBX => &self.i_bx,
            Coefficient::IB0 => &self.i_b0,
        }
    }

    /// Slopes and intercepts at `t`, linearly interpolated between nodes.
    pub fn at(&self, t: f64) -> ([f64; 4], [f64; 4]) {
        let m = &self.mesh;
        let slopes = [
            m.interpolate(&self.w_x, t),
            m.interpolate(&self.i_sx, t),
            m.interpolate(&self.p_x, t),
            m.interpolate(&self.i_bx, t),
        ];
        let intercepts = [
            m.interpolate(&self.w_0, t),
            m.interpolate(&self.i_s0, t),
            m.interpolate(&self.p_0, t),
            m.interpolate(&self.i_b0, t),
        ];
        (slopes, intercepts)
    }

    /// Unclamped equilibrium controls.
    pub fn linear_controls(&self, t: f64, x: f64) -> Controls {
        let (s, c) = self.at(t);
        Controls {
            w: s[0] * x + c[0],
            i_s: s[1] * x + c[1],
            p: s[2] * x + c[2],
            i_b: s[3] * x + c[3],
        }
    }

    /// Largest |slope| over the mesh, the `b` in the linear-growth bound `a + b|x|`.
    pub fn max_abs_slope(&self) -> f64 {
        [&self.w_x, &self.i_sx, &self.p_x, &self.i_bx]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_intercept(&self) -> f64 {
        [&self.w_0, &self.i_s0, &self.p_0, &self.i_b0]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `t,w_x,w_0,p_x,p_0,I_sx,I_s0,I_bx,I_b0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,w_x,w_0,p_x,p_0,I_sx,I_s0,I_bx,I_b0\n");
        for i in 0..self.mesh.len() {
            let row = [
                self.mesh.node(i),
                self.w_x[i],
                self.w_0[i],
                self.p_x[i],
                self.p_0[i],
                self.i_sx[i],
                self.i_s0[i],
                self.i_bx[i],
                self.i_b0[i],
            ];
            let row: Vec<String> = row.into_iter().map(num).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Equilibrium controls at `(t, x)` after the nonnegativity clamp.
pub fn evaluate_strategies(coeffs: &StrategyCoefficients, t: f64, x: f64) -> Controls {
    coeffs.linear_controls(t, x).clamped()
}

/// `Vs = P2 x² + P1 x + P0`, `Vb = N2 x² + N1 x + N0` at `(t, x)`.
pub fn value_functions(sol: &RiccatiSolution, t: f64, x: f64) -> ValuePair {
    let [p2, p1, p0, n2, n1, n0] = sol.state_at(t);
    ValuePair {
        v_s: (p2 * x + p1) * x + p0,
        v_b: (n2 * x + n1) * x + n0,
    }
}

/// First-order conditions of the two followers at node `i`, evaluated with
/// the unclamped equilibrium controls: `(∂Hs/∂w, ∂Hb/∂Ib)`.
pub fn follower_foc(
    params: &ModelParams,
    sol: &RiccatiSolution,
    coeffs: &StrategyCoefficients,
    i: usize,
    x: f64,
) -> (f64, f64) {
    let t = sol.mesh.node(i);
    let [p2, p1, _, n2, n1, _] = sol.state(i);
    let (y1, a1) = (2.0 * p2 * x + p1, 2.0 * p2);
    let (y2, a2) = (2.0 * n2 * x + n1, 2.0 * n2);
    let u = Controls {
        w: coeffs.w_x[i] * x + coeffs.w_0[i],
        i_s: coeffs.i_sx[i] * x + coeffs.i_s0[i],
        p: coeffs.p_x[i] * x + coeffs.p_0[i],
        i_b: coeffs.i_bx[i] * x + coeffs.i_b0[i],
    };
    let emrt = (-params.r * t).exp();
    let bw = params.beta_w.eval(t);
    let delta = params.delta.eval(t);
    let d_w = y1 * bw
        + 0.5 * bw * a1
        + emrt
            * (params.alpha - params.gamma_p * u.p - 2.0 * params.gamma_w * u.w
                + params.gamma_x * x
                + params.c0 * params.gamma_w);
    let d_ib = y2 * delta + 0.5 * delta * a2 - 2.0 * emrt * u.i_b;
    (d_w, d_ib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve;

    fn baseline(n: usize) -> (ModelParams, RiccatiSolution, StrategyCoefficients) {
        let p = ModelParams::baseline();
        let sol = solve(&p, &TimeMesh::for_params(&p, n).unwrap()).unwrap();
        let c = strategy_coefficients(&p, &sol).unwrap();
        (p, sol, c)
    }

    #[test]
    fn terminal_values() {
        let (p, _, c) = baseline(500);
        let k = crate::model::k_constants(&p, 1.0).unwrap();
        assert_eq!(c.i_sx[500], 0.0);
        assert_eq!(c.i_s0[500], 0.0);
        assert_eq!(c.i_bx[500], 0.0);
        assert_eq!(c.i_b0[500], 0.0);
        assert_eq!(c.w_x[500], k.k7);
        assert_eq!(c.p_x[500], k.k3);
    }

    #[test]
    fn no_goodwill_effect_makes_strategies_state_independent() {
        let mut p = ModelParams::baseline();
        p.gamma_x = 0.0;
        let sol = solve(&p, &TimeMesh::for_params(&p, 100).unwrap()).unwrap();
        let c = strategy_coefficients(&p, &sol).unwrap();
        for v in [&c.w_x, &c.p_x, &c.i_sx, &c.i_bx] {
            assert!(v.iter().all(|&s| s == 0.0));
        }
        let v1 = value_functions(&sol, 0.3, 0.0);
        let v2 = value_functions(&sol, 0.3, 7.0);
        assert_eq!(v1, v2);
    }

    #[test]
    fn clamp_and_arithmetic() {
        let (_, _, mut c) = baseline(100);
        let n = c.mesh.len();
        c.w_x = vec![0.5; n];
        c.w_0 = vec![1.0; n];
        c.p_x = vec![0.0; n];
        c.p_0 = vec![-3.0; n];
        let u = evaluate_strategies(&c, 0.42, 2.0);
        assert_eq!(u.w, 2.0);
        assert_eq!(u.p, 0.0);
    }

    #[test]
    fn terminal_innovation_is_zero_for_any_goodwill() {
        let (_, sol, c) = baseline(100);
        for x in [-5.0, 0.0, 3.0, 100.0] {
            let u = evaluate_strategies(&c, 1.0, x);
            assert_eq!(u.i_s, 0.0);
            assert_eq!(u.i_b, 0.0);
            let v = value_functions(&sol, 1.0, x);
            assert_eq!((v.v_s, v.v_b), (0.0, 0.0));
        }
    }

    #[test]
    fn incomplete_solution_is_rejected() {
        let p = ModelParams::baseline().with_constant_delta(1e3);
        let sol = solve(&p, &TimeMesh::for_params(&p, 200).unwrap()).unwrap();
        assert!(matches!(
            strategy_coefficients(&p, &sol),
            Err(StrategyError::IncompleteSolution { .. })
        ));
    }

    #[test]
    fn followers_first_order_conditions_vanish() {
        let (p, sol, c) = baseline(400);
        for i in (0..=400).step_by(37) {
            for x in [0.0, 1.0, 5.0, 10.0] {
                let (dw, dib) = follower_foc(&p, &sol, &c, i, x);
                assert!(dw.abs() < 1e-12, "dw = {dw} at node {i}, x = {x}");
                assert!(dib.abs() < 1e-15, "dib = {dib}");
            }
        }
    }

    #[test]
    fn coefficient_names_parse() {
        for c in Coefficient::ALL {
            assert_eq!(Coefficient::parse(c.name()), Some(c));
        }
        assert_eq!(Coefficient::parse("I_sx"), Some(Coefficient::ISX));
        let parsed: Vec<Coefficient> = serde_json::from_str(r#"["w_x","I_b0"]"#).unwrap();
        assert_eq!(parsed, vec![Coefficient::WX, Coefficient::IB0]);
    }
}
