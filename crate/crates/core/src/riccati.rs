//! Coupled Riccati system for the quadratic value functions
//! `Vs = P2 x² + P1 x + P0` and `Vb = N2 x² + N1 x + N0`.
//!
//! The six equations are triangular: (P2, N2) is a closed quadratic pair,
//! (P1, N1) is linear once (P2, N2) is known, and (P0, N0) are pure
//! integrals. The solver runs the three stages in that order on a uniform
//! mesh with classic RK4:
//!
//! 1. (P2, N2) is integrated forward in reversed time `s = T − t` from
//!    `(0, 0)` using the Φ/Ψ coefficient form, with blow-up detection.
//! 2. (P1, N1) and 3. (P0, N0) are integrated backward from `T`; the
//!    earlier stages are needed at RK4 half steps and are reconstructed by
//!    cubic Hermite interpolation from node values and node derivatives.
//!
//! Residual checks use the literal right-hand sides written in terms of
//! K1..K18, independent of the Φ/Ψ route used by stage 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::num;
use crate::model::{KSet, ModelError, ModelParams, PhiPsiSet};

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e9;
pub const DEFAULT_STEPS: usize = 10_000;
pub const MIN_STEPS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh mismatch: expected {expected} nodes, got {got}")]
    MeshMismatch { expected: usize, got: usize },
    #[error("quadratic stage blew up; later stages need a complete (P2, N2) solution")]
    Incomplete,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Uniform mesh `t_i = i·T/n`, `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    horizon: f64,
    n_steps: usize,
}

impl TimeMesh {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, RiccatiError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(RiccatiError::InvalidMesh(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_steps < MIN_STEPS {
            return Err(RiccatiError::InvalidMesh(format!(
                "n_steps must be at least {MIN_STEPS}, got {n_steps}"
            )));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn for_params(params: &ModelParams, n_steps: usize) -> Result<Self, RiccatiError> {
        Self::new(params.horizon, n_steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.horizon
        } else {
            i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Segment index and fractional position of `t`, clamped to `[0, T]`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let u = (t / self.step()).clamp(0.0, self.n_steps as f64);
        let i = (u.floor() as usize).min(self.n_steps - 1);
        (i, u - i as f64)
    }

    pub fn nearest_node(&self, t: f64) -> usize {
        let u = (t / self.step()).clamp(0.0, self.n_steps as f64);
        (u.round() as usize).min(self.n_steps)
    }

    /// Linear interpolation of a nodal trajectory.
    pub fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        let (i, frac) = self.locate(t);
        if frac == 0.0 {
            return values[i];
        }
        if frac == 1.0 {
            return values[i + 1];
        }
        values[i] + frac * (values[i + 1] - values[i])
    }
}

/// Index of each equation in state arrays and CSV columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Equation {
    P2,
    P1,
    P0,
    N2,
    N1,
    N0,
}

impl Equation {
    pub const ALL: [Equation; 6] = [
        Equation::P2,
        Equation::P1,
        Equation::P0,
        Equation::N2,
        Equation::N1,
        Equation::N0,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["P2", "P1", "P0", "N2", "N1", "N0"][self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Existence {
    pub existence_ok: bool,
    /// Largest reversed time reached before the blow-up threshold; `T` when complete.
    pub eta: f64,
    /// First mesh node (from `t = 0`) holding valid values.
    pub first_valid: usize,
}

/// State of the time-reversed quadratic pair `M(s) = (P2(T−s), N2(T−s))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReversedPair {
    pub p2: f64,
    pub n2: f64,
}

impl ReversedPair {
    pub const ZERO: ReversedPair = ReversedPair { p2: 0.0, n2: 0.0 };

    /// `G(s, M)`, with the coefficients already evaluated at physical time `T − s`.
    pub fn rhs(coeffs: &PhiPsiSet, m: ReversedPair) -> ReversedPair {
        let (dp, dn) = coeffs.quadratic_rhs(m.p2, m.n2);
        ReversedPair { p2: -dp, n2: -dn }
    }

    fn axpy(self, h: f64, d: ReversedPair) -> ReversedPair {
        ReversedPair {
            p2: self.p2 + h * d.p2,
            n2: self.n2 + h * d.n2,
        }
    }

    fn escapes(&self, threshold: f64) -> bool {
        !(self.p2.abs() <= threshold && self.n2.abs() <= threshold)
    }
}

/// Output of the first stage.
#[derive(Debug, Clone)]
pub struct QuadraticStage {
    pub p2: Vec<f64>,
    pub n2: Vec<f64>,
    /// Forward-time derivatives at the nodes (used for Hermite interpolation).
    pub dp2: Vec<f64>,
    pub dn2: Vec<f64>,
    pub existence: Existence,
}

#[derive(Debug, Clone)]
pub struct LinearStage {
    pub p1: Vec<f64>,
    pub n1: Vec<f64>,
    pub dp1: Vec<f64>,
    pub dn1: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConstantStage {
    pub p0: Vec<f64>,
    pub n0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub blowup_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
        }
    }
}

fn rk4_reversed_step(
    a: &PhiPsiSet,
    mid: &PhiPsiSet,
    b: &PhiPsiSet,
    m: ReversedPair,
    h: f64,
) -> ReversedPair {
    let k1 = ReversedPair::rhs(a, m);
    let k2 = ReversedPair::rhs(mid, m.axpy(h / 2.0, k1));
    let k3 = ReversedPair::rhs(mid, m.axpy(h / 2.0, k2));
    let k4 = ReversedPair::rhs(b, m.axpy(h, k3));
    ReversedPair {
        p2: m.p2 + h / 6.0 * (k1.p2 + 2.0 * k2.p2 + 2.0 * k3.p2 + k4.p2),
        n2: m.n2 + h / 6.0 * (k1.n2 + 2.0 * k2.n2 + 2.0 * k3.n2 + k4.n2),
    }
}

/// Stage 1: the quadratic pair (P2, N2).
pub fn solve_p2n2(params: &ModelParams, mesh: &TimeMesh) -> QuadraticStage {
    solve_p2n2_with(params, mesh, &SolverOptions::default())
}

pub fn solve_p2n2_with(
    params: &ModelParams,
    mesh: &TimeMesh,
    opts: &SolverOptions,
) -> QuadraticStage {
    let n = mesh.n_steps();
    let h = mesh.step();
    let threshold = opts.blowup_threshold;
    let mut p2 = vec![f64::NAN; n + 1];
    let mut n2 = vec![f64::NAN; n + 1];
    let mut dp2 = vec![f64::NAN; n + 1];
    let mut dn2 = vec![f64::NAN; n + 1];

    let mut coeff_hi = PhiPsiSet::evaluate(params, mesh.node(n));
    let mut m = ReversedPair::ZERO;
    p2[n] = 0.0;
    n2[n] = 0.0;
    (dp2[n], dn2[n]) = coeff_hi.quadratic_rhs(0.0, 0.0);

    let mut existence = Existence {
        existence_ok: true,
        eta: mesh.horizon(),
        first_valid: 0,
    };

    for i in (1..=n).rev() {
        let t_hi = mesh.node(i);
        let t_lo = mesh.node(i - 1);
        let coeff_mid = PhiPsiSet::evaluate(params, 0.5 * (t_hi + t_lo));
        let coeff_lo = PhiPsiSet::evaluate(params, t_lo);
        let next = rk4_reversed_step(&coeff_hi, &coeff_mid, &coeff_lo, m, h);
        if next.escapes(threshold) {
            // largest sub-step from t_hi that stays below the threshold
            let (mut ok, mut bad) = (0.0, h);
            for _ in 0..60 {
                let tau = 0.5 * (ok + bad);
                let mid = PhiPsiSet::evaluate(params, t_hi - tau / 2.0);
                let end = PhiPsiSet::evaluate(params, t_hi - tau);
                if rk4_reversed_step(&coeff_hi, &mid, &end, m, tau).escapes(threshold) {
                    bad = tau;
                } else {
                    ok = tau;
                }
            }
            existence = Existence {
                existence_ok: false,
                eta: (mesh.horizon() - t_hi) + ok,
                first_valid: i,
            };
            break;
        }
        m = next;
        p2[i - 1] = m.p2;
        n2[i - 1] = m.n2;
        (dp2[i - 1], dn2[i - 1]) = coeff_lo.quadratic_rhs(m.p2, m.n2);
        coeff_hi = coeff_lo;
    }

    QuadraticStage {
        p2,
        n2,
        dp2,
        dn2,
        existence,
    }
}

/// Literal non-derivative terms `F` of the six equations, `ẏ + F(t, y) = 0`.
///
/// `state` is ordered `[P2, P1, P0, N2, N1, N0]`; P0 and N0 never appear in `F`.
pub fn riccati_forcing(params: &ModelParams, t: f64, state: &[f64; 6]) -> [f64; 6] {
    let k = KSet::evaluate(params, t);
    forcing_with(params, &k, t, state)
}

pub(crate) fn forcing_with(params: &ModelParams, k: &KSet, t: f64, s: &[f64; 6]) -> [f64; 6] {
    let [p2, p1, _, n2, n1, _] = *s;
    let gp = params.gamma_p;
    let q = 1.0 + params.price_pass_through();
    let ert = (params.r * t).exp();
    let emrt = (-params.r * t).exp();
    let d2 = params.delta.eval(t).powi(2);
    let ps = p1 + p2;
    let ns = n1 + n2;

    // drift slope / intercept
    let a = 2.0 * k.k9 * p2 + 2.0 * k.k10 * n2 + k.k11;
    let b = k.k9 * ps + k.k10 * ns + k.k12;
    // wholesale margin w − C0
    let c = 2.0 * k.k5 * p2 + 2.0 * k.k6 * n2 + k.k7;
    let d = k.k5 * ps + k.k6 * ns + k.k8 - params.c0;
    // twice the demand
    let e = 2.0 * k.k13 * p2 - 2.0 * gp * k.k2 * n2 + k.k14;
    let f = k.k13 * ps - gp * k.k2 * ns + k.k15;
    // retail margin p − w
    let g = 2.0 * k.k16 * p2 + 2.0 * q * k.k2 * n2 + k.k17;
    let hh = k.k16 * ps + q * k.k2 * ns + k.k18;

    let bx2 = 2.0 * params.beta_x;
    [
        2.0 * p2 * a + emrt / 2.0 * c * e - ert * d2 * p2 * p2,
        2.0 * p2 * b + p1 * a + p2 * (a + bx2) + emrt / 2.0 * (c * f + d * e)
            - ert * d2 * p2 * ps,
        p1 * b + p2 * b + emrt / 2.0 * d * f - ert * d2 / 4.0 * ps * ps,
        2.0 * n2 * a + emrt / 2.0 * g * e - ert * d2 * n2 * n2,
        2.0 * n2 * b + n1 * a + n2 * (a + bx2) + emrt / 2.0 * (g * f + hh * e)
            - ert * d2 * n2 * ns,
        n1 * b + n2 * b + emrt / 2.0 * hh * f - ert * d2 / 4.0 * ns * ns,
    ]
}

/// Cubic Hermite value at the midpoint of `[t_i, t_i + h]`.
fn hermite_mid(y0: f64, d0: f64, y1: f64, d1: f64, h: f64) -> f64 {
    0.5 * (y0 + y1) + h * (d0 - d1) / 8.0
}

fn check_len(mesh: &TimeMesh, lens: &[usize]) -> Result<(), RiccatiError> {
    for &got in lens {
        if got != mesh.len() {
            return Err(RiccatiError::MeshMismatch {
                expected: mesh.len(),
                got,
            });
        }
    }
    Ok(())
}

/// Stage 2: the linear pair (P1, N1) given (P2, N2).
///
/// A truncated stage 1 is integrated only over its valid window.
pub fn solve_p1n1(
    params: &ModelParams,
    mesh: &TimeMesh,
    quad: &QuadraticStage,
) -> Result<LinearStage, RiccatiError> {
    check_len(mesh, &[quad.p2.len(), quad.n2.len(), quad.dp2.len(), quad.dn2.len()])?;
    let n = mesh.n_steps();
    let h = mesh.step();
    let first = quad.existence.first_valid;
    let mut p1 = vec![f64::NAN; n + 1];
    let mut n1 = vec![f64::NAN; n + 1];
    let mut dp1 = vec![f64::NAN; n + 1];
    let mut dn1 = vec![f64::NAN; n + 1];

    let deriv = |t: f64, k: &KSet, p2: f64, n2: f64, y: [f64; 2]| -> [f64; 2] {
        let f = forcing_with(params, k, t, &[p2, y[0], 0.0, n2, y[1], 0.0]);
        [-f[1], -f[4]]
    };

    let mut y = [0.0, 0.0];
    p1[n] = 0.0;
    n1[n] = 0.0;
    let mut k_hi = KSet::evaluate(params, mesh.node(n));
    [dp1[n], dn1[n]] = deriv(mesh.node(n), &k_hi, quad.p2[n], quad.n2[n], y);

    for i in (first + 1..=n).rev() {
        let t_hi = mesh.node(i);
        let t_lo = mesh.node(i - 1);
        let t_mid = 0.5 * (t_hi + t_lo);
        let k_mid = KSet::evaluate(params, t_mid);
        let k_lo = KSet::evaluate(params, t_lo);
        let p2m = hermite_mid(quad.p2[i - 1], quad.dp2[i - 1], quad.p2[i], quad.dp2[i], h);
        let n2m = hermite_mid(quad.n2[i - 1], quad.dn2[i - 1], quad.n2[i], quad.dn2[i], h);

        // backward step: y(t − h) from y(t)
        let k1 = deriv(t_hi, &k_hi, quad.p2[i], quad.n2[i], y);
        let y2 = [y[0] - h / 2.0 * k1[0], y[1] - h / 2.0 * k1[1]];
        let k2 = deriv(t_mid, &k_mid, p2m, n2m, y2);
        let y3 = [y[0] - h / 2.0 * k2[0], y[1] - h / 2.0 * k2[1]];
        let k3 = deriv(t_mid, &k_mid, p2m, n2m, y3);
        let y4 = [y[0] - h * k3[0], y[1] - h * k3[1]];
        let k4 = deriv(t_lo, &k_lo, quad.p2[i - 1], quad.n2[i - 1], y4);
        for j in 0..2 {
            y[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        p1[i - 1] = y[0];
        n1[i - 1] = y[1];
        [dp1[i - 1], dn1[i - 1]] = deriv(t_lo, &k_lo, quad.p2[i - 1], quad.n2[i - 1], y);
        k_hi = k_lo;
    }

    Ok(LinearStage { p1, n1, dp1, dn1 })
}

/// Stage 3: (P0, N0) by backward quadrature of the known forcing.
pub fn solve_p0n0(
    params: &ModelParams,
    mesh: &TimeMesh,
    quad: &QuadraticStage,
    lin: &LinearStage,
) -> Result<ConstantStage, RiccatiError> {
    check_len(mesh, &[quad.p2.len(), lin.p1.len(), lin.dp1.len()])?;
    let n = mesh.n_steps();
    let h = mesh.step();
    let first = quad.existence.first_valid;
    let mut p0 = vec![f64::NAN; n + 1];
    let mut n0 = vec![f64::NAN; n + 1];

    let rate = |t: f64, s: [f64; 6]| -> [f64; 2] {
        let f = riccati_forcing(params, t, &s);
        [-f[2], -f[5]]
    };
    let node_state = |i: usize| [quad.p2[i], lin.p1[i], 0.0, quad.n2[i], lin.n1[i], 0.0];

    let mut y = [0.0, 0.0];
    p0[n] = 0.0;
    n0[n] = 0.0;
    let mut r_hi = rate(mesh.node(n), node_state(n));
    for i in (first + 1..=n).rev() {
        let t_hi = mesh.node(i);
        let t_lo = mesh.node(i - 1);
        let mid = [
            hermite_mid(quad.p2[i - 1], quad.dp2[i - 1], quad.p2[i], quad.dp2[i], h),
            hermite_mid(lin.p1[i - 1], lin.dp1[i - 1], lin.p1[i], lin.dp1[i], h),
            0.0,
            hermite_mid(quad.n2[i - 1], quad.dn2[i - 1], quad.n2[i], quad.dn2[i], h),
            hermite_mid(lin.n1[i - 1], lin.dn1[i - 1], lin.n1[i], lin.dn1[i], h),
            0.0,
        ];
        let r_mid = rate(0.5 * (t_hi + t_lo), mid);
        let r_lo = rate(t_lo, node_state(i - 1));
        // the right-hand side does not involve (P0, N0), so RK4 reduces to Simpson's rule
        for j in 0..2 {
            y[j] -= h / 6.0 * (r_hi[j] + 4.0 * r_mid[j] + r_lo[j]);
        }
        p0[i - 1] = y[0];
        n0[i - 1] = y[1];
        r_hi = r_lo;
    }
    Ok(ConstantStage { p0, n0 })
}

/// The six coefficient trajectories on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub mesh: TimeMesh,
    pub p2: Vec<f64>,
    pub p1: Vec<f64>,
    pub p0: Vec<f64>,
    pub n2: Vec<f64>,
    pub n1: Vec<f64>,
    pub n0: Vec<f64>,
    pub existence_ok: bool,
    pub eta: f64,
    pub first_valid: usize,
}

/// Solves all three stages with default options.
pub fn solve(params: &ModelParams, mesh: &TimeMesh) -> Result<RiccatiSolution, RiccatiError> {
    solve_with(params, mesh, &SolverOptions::default())
}

pub fn solve_with(
    params: &ModelParams,
    mesh: &TimeMesh,
    opts: &SolverOptions,
) -> Result<RiccatiSolution, RiccatiError> {
    params.validate()?;
    if (mesh.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
        return Err(RiccatiError::InvalidMesh(format!(
            "mesh horizon {} differs from model horizon {}",
            mesh.horizon(),
            params.horizon
        )));
    }
    let quad = solve_p2n2_with(params, mesh, opts);
    let lin = solve_p1n1(params, mesh, &quad)?;
    let cst = solve_p0n0(params, mesh, &quad, &lin)?;
    let mut sol = RiccatiSolution {
        mesh: *mesh,
        p2: quad.p2,
        p1: lin.p1,
        p0: cst.p0,
        n2: quad.n2,
        n1: lin.n1,
        n0: cst.n0,
        existence_ok: quad.existence.existence_ok,
        eta: quad.existence.eta,
        first_valid: quad.existence.first_valid,
    };
    // stages 2 and 3 are linear but may still overflow when stage 1 came close to blowing up
    let threshold = opts.blowup_threshold;
    for i in (sol.first_valid..mesh.len()).rev() {
        if sol.state(i).iter().any(|v| !(v.abs() <= threshold)) {
            sol.truncate_before(i + 1);
            break;
        }
    }
    Ok(sol)
}

impl RiccatiSolution {
    pub fn trajectory(&self, eq: Equation) -> &[f64] {
        match eq {
            Equation::P2 => &self.p2,
            Equation::P1 => &self.p1,
            Equation::P0 => &self.p0,
            Equation::N2 => &self.n2,
            Equation::N1 => &self.n1,
            Equation::N0 => &self.n0,
        }
    }

    /// `[P2, P1, P0, N2, N1, N0]` at node `i`.
    pub fn state(&self, i: usize) -> [f64; 6] {
        [
            self.p2[i], self.p1[i], self.p0[i], self.n2[i], self.n1[i], self.n0[i],
        ]
    }

    /// Linear interpolation of all six trajectories at `t`.
    pub fn state_at(&self, t: f64) -> [f64; 6] {
        let mut out = [0.0; 6];
        for eq in Equation::ALL {
            out[eq.index()] = self.mesh.interpolate(self.trajectory(eq), t);
        }
        out
    }

    fn truncate_before(&mut self, first_valid: usize) {
        for v in [
            &mut self.p2,
            &mut self.p1,
            &mut self.p0,
            &mut self.n2,
            &mut self.n1,
            &mut self.n0,
        ] {
            v[..first_valid].iter_mut().for_each(|x| *x = f64::NAN);
        }
        self.existence_ok = false;
        self.first_valid = first_valid;
        let reached = self.mesh.horizon() - self.mesh.node(first_valid.min(self.mesh.n_steps()));
        self.eta = self.eta.min(reached);
    }

    /// `t,P2,P1,P0,N2,N1,N0`, one row per node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,P2,P1,P0,N2,N1,N0\n");
        for i in 0..self.mesh.len() {
            let row: Vec<String> = std::iter::once(self.mesh.node(i))
                .chain(self.state(i))
                .map(num)
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Reads a CSV written by [`RiccatiSolution::to_csv`]; the mesh is inferred
    /// from the first and last rows and must be uniform.
    pub fn from_csv(text: &str) -> Result<Self, RiccatiError> {
        let parse_err = |line: usize, message: String| RiccatiError::Parse { line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty input".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["t", "P2", "P1", "P0", "N2", "N1", "N0"] {
            return Err(parse_err(1, format!("unexpected header `{header}`")));
        }
        let mut t = Vec::new();
        let mut cols: [Vec<f64>; 6] = Default::default();
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(parse_err(idx + 1, format!("expected 7 fields, got {}", fields.len())));
            }
            let mut vals = [0.0; 7];
            for (j, f) in fields.iter().enumerate() {
                vals[j] = f
                    .parse()
                    .map_err(|_| parse_err(idx + 1, format!("bad number `{f}`")))?;
            }
            t.push(vals[0]);
            for j in 0..6 {
                cols[j].push(vals[j + 1]);
            }
        }
        if t.len() < MIN_STEPS + 1 {
            return Err(parse_err(0, format!("need at least {} rows", MIN_STEPS + 1)));
        }
        if t[0] != 0.0 {
            return Err(parse_err(2, "first row must be t = 0".into()));
        }
        let mesh = TimeMesh::new(t[t.len() - 1], t.len() - 1)?;
        let tol = 1e-9 * mesh.step();
        for (i, &ti) in t.iter().enumerate() {
            if (ti - mesh.node(i)).abs() > tol {
                return Err(parse_err(i + 2, format!("non-uniform mesh at t = {ti}")));
            }
        }
        let [p2, p1, p0, n2, n1, n0] = cols;
        let first_valid = (0..mesh.len())
            .rev()
            .find(|&i| [p2[i], p1[i], p0[i], n2[i], n1[i], n0[i]].iter().any(|v| !v.is_finite()))
            .map_or(0, |i| i + 1);
        Ok(Self {
            mesh,
            existence_ok: first_valid == 0,
            eta: mesh.horizon() - mesh.node(first_valid.min(mesh.n_steps())),
            first_valid,
            p2,
            p1,
            p0,
            n2,
            n1,
            n0,
        })
    }
}

/// Second integrator for (P2, N2): backward RK4 on the literal K-form of the
/// quadratic equations, without the Φ/Ψ abbreviation or time reversal.
pub fn solve_p2n2_direct(params: &ModelParams, mesh: &TimeMesh) -> (Vec<f64>, Vec<f64>) {
    let n = mesh.n_steps();
    let h = mesh.step();
    let mut p2 = vec![0.0; n + 1];
    let mut n2 = vec![0.0; n + 1];
    let deriv = |t: f64, y: [f64; 2]| -> [f64; 2] {
        let f = riccati_forcing(params, t, &[y[0], 0.0, 0.0, y[1], 0.0, 0.0]);
        [-f[0], -f[3]]
    };
    let mut y = [0.0, 0.0];
    for i in (1..=n).rev() {
        let t_hi = mesh.node(i);
        let t_lo = mesh.node(i - 1);
        let t_mid = 0.5 * (t_hi + t_lo);
        let k1 = deriv(t_hi, y);
        let k2 = deriv(t_mid, [y[0] - h / 2.0 * k1[0], y[1] - h / 2.0 * k1[1]]);
        let k3 = deriv(t_mid, [y[0] - h / 2.0 * k2[0], y[1] - h / 2.0 * k2[1]]);
        let k4 = deriv(t_lo, [y[0] - h * k3[0], y[1] - h * k3[1]]);
        for j in 0..2 {
            y[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        p2[i - 1] = y[0];
        n2[i - 1] = y[1];
    }
    (p2, n2)
}

/// Residuals `ẏ_fd + F(t, y)` of the six equations at interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiResidual {
    /// Interior node indices that were evaluated.
    pub nodes: Vec<usize>,
    pub t: Vec<f64>,
    /// One trajectory per [`Equation`], aligned with `t`.
    pub values: [Vec<f64>; 6],
    /// Sup-norm per equation.
    pub sup: [f64; 6],
}

impl RiccatiResidual {
    pub fn max_sup(&self) -> f64 {
        self.sup.iter().copied().fold(0.0, f64::max)
    }

    pub fn sup_of(&self, eq: Equation) -> f64 {
        self.sup[eq.index()]
    }
}

fn central_difference(sol: &RiccatiSolution, i: usize) -> [f64; 6] {
    let h2 = 2.0 * sol.mesh.step();
    let lo = sol.state(i - 1);
    let hi = sol.state(i + 1);
    std::array::from_fn(|j| (hi[j] - lo[j]) / h2)
}

/// Residual of each equation at a single interior node.
pub fn riccati_residual_at(params: &ModelParams, sol: &RiccatiSolution, i: usize) -> [f64; 6] {
    let t = sol.mesh.node(i);
    let fd = central_difference(sol, i);
    let f = riccati_forcing(params, t, &sol.state(i));
    std::array::from_fn(|j| fd[j] + f[j])
}

/// Residuals over the valid interior nodes; both mesh ends are excluded
/// because they only admit one-sided differences.
pub fn riccati_residual(params: &ModelParams, sol: &RiccatiSolution) -> RiccatiResidual {
    let n = sol.mesh.n_steps();
    let nodes: Vec<usize> = (sol.first_valid + 1..n).collect();
    let mut values: [Vec<f64>; 6] = Default::default();
    let mut sup = [0.0f64; 6];
    for &i in &nodes {
        let r = riccati_residual_at(params, sol, i);
        for j in 0..6 {
            values[j].push(r[j]);
            sup[j] = sup[j].max(r[j].abs());
        }
    }
    RiccatiResidual {
        t: nodes.iter().map(|&i| sol.mesh.node(i)).collect(),
        nodes,
        values,
        sup,
    }
}

/// Value-function derivatives entering the HJB equations at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueDerivatives {
    pub vs_t: f64,
    pub vs_x: f64,
    pub vs_xx: f64,
    pub vb_t: f64,
    pub vb_x: f64,
    pub vb_xx: f64,
}

impl ValueDerivatives {
    /// `∂V/∂t` by central differences of the trajectories, space
    /// derivatives from the quadratic ansatz.
    pub fn from_solution(sol: &RiccatiSolution, i: usize, x: f64) -> Self {
        let fd = central_difference(sol, i);
        let [p2, p1, _, n2, n1, _] = sol.state(i);
        Self {
            vs_t: fd[0] * x * x + fd[1] * x + fd[2],
            vs_x: 2.0 * p2 * x + p1,
            vs_xx: 2.0 * p2,
            vb_t: fd[3] * x * x + fd[4] * x + fd[5],
            vb_x: 2.0 * n2 * x + n1,
            vb_xx: 2.0 * n2,
        }
    }
}

/// Left-hand sides of the seller's and buyer's HJB equations, written in
/// the K-coefficient form with all four equilibrium responses substituted.
pub fn hjb_lhs(params: &ModelParams, t: f64, x: f64, v: &ValueDerivatives) -> (f64, f64) {
    let k = KSet::evaluate(params, t);
    let gp = params.gamma_p;
    let q = 1.0 + params.price_pass_through();
    let ert = (params.r * t).exp();
    let emrt = (-params.r * t).exp();
    let d2 = params.delta.eval(t).powi(2);

    let drift = k.k9 * v.vs_x + k.k10 * v.vb_x + 0.5 * k.k9 * v.vs_xx + 0.5 * k.k10 * v.vb_xx
        + k.k11 * x
        + k.k12;
    let diffusion = drift + 2.0 * params.beta_x * x;
    let wholesale_margin = k.k5 * v.vs_x + k.k6 * v.vb_x + 0.5 * k.k5 * v.vs_xx
        + 0.5 * k.k6 * v.vb_xx
        + k.k7 * x
        + k.k8
        - params.c0;
    let retail_margin = k.k16 * v.vs_x + q * k.k2 * v.vb_x + 0.5 * k.k16 * v.vs_xx
        + 0.5 * q * k.k2 * v.vb_xx
        + k.k17 * x
        + k.k18;
    let twice_demand = k.k13 * v.vs_x - gp * k.k2 * v.vb_x + 0.5 * k.k13 * v.vs_xx
        - 0.5 * gp * k.k2 * v.vb_xx
        + k.k14 * x
        + k.k15;

    let seller = v.vs_t + v.vs_x * drift + 0.5 * v.vs_xx * diffusion
        + emrt / 2.0 * wholesale_margin * twice_demand
        - ert * d2 / 16.0 * (2.0 * v.vs_x + v.vs_xx).powi(2);
    let buyer = v.vb_t + v.vb_x * drift + 0.5 * v.vb_xx * diffusion
        + emrt / 2.0 * retail_margin * twice_demand
        - ert * d2 / 16.0 * (2.0 * v.vb_x + v.vb_xx).powi(2);
    (seller, buyer)
}

/// HJB residuals at interior node `i` and goodwill `x`.
pub fn hjb_residual_at(params: &ModelParams, sol: &RiccatiSolution, i: usize, x: f64) -> (f64, f64) {
    let v = ValueDerivatives::from_solution(sol, i, x);
    hjb_lhs(params, sol.mesh.node(i), x, &v)
}

/// Coefficients `[c0, c1, c2]` of the HJB residual as a polynomial in `x`,
/// recovered from its values at `x = −1, 0, 1`. Seller first.
pub fn hjb_x_coefficients(
    params: &ModelParams,
    sol: &RiccatiSolution,
    i: usize,
) -> ([f64; 3], [f64; 3]) {
    let (sm, bm) = hjb_residual_at(params, sol, i, -1.0);
    let (s0, b0) = hjb_residual_at(params, sol, i, 0.0);
    let (sp, bp) = hjb_residual_at(params, sol, i, 1.0);
    let fit = |m: f64, z: f64, p: f64| [z, 0.5 * (p - m), 0.5 * (p + m) - z];
    (fit(sm, s0, sp), fit(bm, b0, bp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbResidual {
    /// Mesh nodes the requested times were snapped to.
    pub nodes: Vec<usize>,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// `seller[i][j]` at `(t[i], x[j])`.
    pub seller: Vec<Vec<f64>>,
    pub buyer: Vec<Vec<f64>>,
    pub sup_seller: f64,
    pub sup_buyer: f64,
}

/// HJB residual surfaces. Requested times are snapped to the nearest
/// interior node of the valid window.
pub fn hjb_residual(
    params: &ModelParams,
    sol: &RiccatiSolution,
    t_grid: &[f64],
    x_grid: &[f64],
) -> HjbResidual {
    let lo = sol.first_valid + 1;
    let hi = sol.mesh.n_steps() - 1;
    let nodes: Vec<usize> = t_grid
        .iter()
        .map(|&t| sol.mesh.nearest_node(t).clamp(lo, hi))
        .collect();
    let mut seller = Vec::with_capacity(nodes.len());
    let mut buyer = Vec::with_capacity(nodes.len());
    let (mut sup_seller, mut sup_buyer) = (0.0f64, 0.0f64);
    for &i in &nodes {
        let (row_s, row_b): (Vec<f64>, Vec<f64>) = x_grid
            .iter()
            .map(|&x| hjb_residual_at(params, sol, i, x))
            .unzip();
        sup_seller = row_s.iter().fold(sup_seller, |m, v| m.max(v.abs()));
        sup_buyer = row_b.iter().fold(sup_buyer, |m, v| m.max(v.abs()));
        seller.push(row_s);
        buyer.push(row_b);
    }
    HjbResidual {
        t: nodes.iter().map(|&i| sol.mesh.node(i)).collect(),
        nodes,
        x: x_grid.to_vec(),
        seller,
        buyer,
        sup_seller,
        sup_buyer,
    }
}
