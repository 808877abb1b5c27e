//! Nested Nash construction at the Hamiltonian level, solved numerically.
//!
//! Followers (`w` for the seller, `Ib` for the buyer) first play a static
//! Nash game for fixed leader actions `(Is, p)`; the leaders then play a
//! static Nash game with the follower responses substituted. Each best
//! response maximizes a scalar function that is exactly quadratic in the
//! player's own control, so it is found from three evaluations and the
//! parabola vertex. Nothing here uses the closed-form responses; those are
//! provided separately for cross-checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{KSet, ModelParams};
use crate::strategies::Controls;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NashError {
    #[error("{control} best response is not concave (second derivative {curvature:e})")]
    NonConcave {
        control: &'static str,
        curvature: f64,
    },
    #[error("best-response iteration did not converge in {iterations} iterations (last change {last_change:e})")]
    Diverged { iterations: usize, last_change: f64 },
}

/// Arguments of the Hamiltonians besides the controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HamiltonianPoint {
    pub t: f64,
    pub x: f64,
    /// Seller value gradient ∂Vs/∂x.
    pub y1: f64,
    /// Buyer value gradient ∂Vb/∂x.
    pub y2: f64,
    /// Seller value curvature ∂²Vs/∂x².
    pub a1: f64,
    /// Buyer value curvature ∂²Vb/∂x².
    pub a2: f64,
}

/// `(Hs, Hb)` evaluated literally.
pub fn hamiltonian_values(params: &ModelParams, pt: &HamiltonianPoint, u: &Controls) -> (f64, f64) {
    let t = pt.t;
    let bp = params.beta_p.eval(t);
    let bw = params.beta_w.eval(t);
    let delta = params.delta.eval(t);
    let emrt = (-params.r * t).exp();
    let push = bp * u.p + bw * u.w + delta * (u.i_s + u.i_b);
    let drift = push - params.beta_x * pt.x;
    let diffusion = push + params.beta_x * pt.x;
    let demand = params.demand(pt.x, u.w, u.p);
    let hs = pt.y1 * drift
        + 0.5 * diffusion * pt.a1
        + emrt * ((u.w - params.c0) * demand - u.i_s * u.i_s);
    let hb = pt.y2 * drift
        + 0.5 * diffusion * pt.a2
        + emrt * ((u.p - u.w) * demand - u.i_b * u.i_b);
    (hs, hb)
}

/// Closed-form seller wholesale response to a retail price `p`.
pub fn wholesale_response(params: &ModelParams, pt: &HamiltonianPoint, p: f64) -> f64 {
    let ert = (params.r * pt.t).exp();
    let bw = params.beta_w.eval(pt.t);
    (ert * (bw * pt.y1 + 0.5 * bw * pt.a1) + params.alpha - params.gamma_p * p
        + params.gamma_x * pt.x
        + params.c0 * params.gamma_w)
        / (2.0 * params.gamma_w)
}

/// Closed-form buyer innovation response.
pub fn buyer_innovation_response(params: &ModelParams, pt: &HamiltonianPoint) -> f64 {
    (params.r * pt.t).exp() * params.delta.eval(pt.t) * (2.0 * pt.y2 + pt.a2) / 4.0
}

/// Closed-form seller innovation (leader) response.
pub fn seller_innovation_response(params: &ModelParams, pt: &HamiltonianPoint) -> f64 {
    (params.r * pt.t).exp() * params.delta.eval(pt.t) * (2.0 * pt.y1 + pt.a1) / 4.0
}

/// Closed-form retail price (leader) response in K1..K4 form.
pub fn retail_response(params: &ModelParams, pt: &HamiltonianPoint) -> f64 {
    let k = KSet::evaluate(params, pt.t);
    k.k1 * pt.y1 + 0.5 * k.k1 * pt.a1 + k.k2 * pt.y2 + 0.5 * k.k2 * pt.a2 + k.k3 * pt.x + k.k4
}

/// All four equilibrium responses in closed form; `w` uses the K5..K8 form.
pub fn closed_form_equilibrium(params: &ModelParams, pt: &HamiltonianPoint) -> Controls {
    let k = KSet::evaluate(params, pt.t);
    Controls {
        w: k.k5 * pt.y1 + 0.5 * k.k5 * pt.a1 + k.k6 * pt.y2 + 0.5 * k.k6 * pt.a2 + k.k7 * pt.x
            + k.k8,
        i_s: seller_innovation_response(params, pt),
        p: retail_response(params, pt),
        i_b: buyer_innovation_response(params, pt),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NashOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

/// Maximizer of a concave quadratic, from three samples around `u0`.
fn parabola_vertex(
    control: &'static str,
    u0: f64,
    mut f: impl FnMut(f64) -> Result<f64, NashError>,
) -> Result<f64, NashError> {
    let h = 1.0 + u0.abs();
    let fm = f(u0 - h)?;
    let f0 = f(u0)?;
    let fp = f(u0 + h)?;
    let curvature = (fp + fm - 2.0 * f0) / (h * h);
    if !(curvature < 0.0) {
        return Err(NashError::NonConcave { control, curvature });
    }
    let slope = (fp - fm) / (2.0 * h);
    Ok(u0 - slope / curvature)
}

/// Jacobi best-response iteration on a pair, with damping 0.5 once the
/// step size grows.
fn jacobi<F>(start: [f64; 2], opts: &NashOptions, mut respond: F) -> Result<PairIteration, NashError>
where
    F: FnMut([f64; 2]) -> Result<[f64; 2], NashError>,
{
    let mut u = start;
    let mut history = vec![u];
    let mut changes = Vec::new();
    let mut damped = false;
    for iter in 1..=opts.max_iter {
        let br = respond(u)?;
        let step = [br[0] - u[0], br[1] - u[1]];
        let size = step[0].abs().max(step[1].abs());
        if let Some(&prev) = changes.last() {
            if size > prev {
                damped = true;
            }
        }
        let lambda = if damped { 0.5 } else { 1.0 };
        u = [u[0] + lambda * step[0], u[1] + lambda * step[1]];
        history.push(u);
        changes.push(size);
        if !size.is_finite() {
            break;
        }
        let scale = 1.0f64.max(u[0].abs()).max(u[1].abs());
        if size <= opts.tol * scale {
            return Ok(PairIteration {
                value: u,
                iterations: iter,
                history,
                damped,
            });
        }
    }
    Err(NashError::Diverged {
        iterations: opts.max_iter,
        last_change: changes.last().copied().unwrap_or(f64::NAN),
    })
}

struct PairIteration {
    value: [f64; 2],
    iterations: usize,
    history: Vec<[f64; 2]>,
    damped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FollowerNash {
    pub w: f64,
    pub i_b: f64,
    pub iterations: usize,
}

/// Follower-level Nash point `(w, Ib)` for given leader actions.
pub fn follower_nash_numeric(
    params: &ModelParams,
    pt: &HamiltonianPoint,
    leaders: (f64, f64),
    init: (f64, f64),
    opts: &NashOptions,
) -> Result<FollowerNash, NashError> {
    let (i_s, p) = leaders;
    let res = jacobi([init.0, init.1], opts, |[w, i_b]| {
        let w_br = parabola_vertex("w", w, |w| {
            Ok(hamiltonian_values(params, pt, &Controls { w, i_s, p, i_b }).0)
        })?;
        let ib_br = parabola_vertex("I_b", i_b, |i_b| {
            Ok(hamiltonian_values(params, pt, &Controls { w, i_s, p, i_b }).1)
        })?;
        Ok([w_br, ib_br])
    })?;
    Ok(FollowerNash {
        w: res.value[0],
        i_b: res.value[1],
        iterations: res.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderNash {
    pub controls: Controls,
    pub iterations: usize,
    pub damped: bool,
    /// Distance of each leader iterate to the converged point.
    pub errors: Vec<f64>,
    /// Whether `errors` is non-increasing from the second iterate on.
    pub monotone_after_second: bool,
}

/// Starting guesses for the leader iteration and for every embedded follower solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashStart {
    pub i_s: f64,
    pub p: f64,
    pub w: f64,
    pub i_b: f64,
}

impl Default for NashStart {
    fn default() -> Self {
        Self {
            i_s: 0.0,
            p: 0.0,
            w: 0.0,
            i_b: 0.0,
        }
    }
}

/// Leader-level Nash point `(Is, p)` with the follower game solved inside
/// every evaluation, plus the induced follower controls.
pub fn leader_nash_numeric(
    params: &ModelParams,
    pt: &HamiltonianPoint,
    start: &NashStart,
    opts: &NashOptions,
) -> Result<LeaderNash, NashError> {
    let follow = |i_s: f64, p: f64| {
        follower_nash_numeric(params, pt, (i_s, p), (start.w, start.i_b), opts)
    };
    let res = jacobi([start.i_s, start.p], opts, |[i_s, p]| {
        let is_br = parabola_vertex("I_s", i_s, |i_s| {
            let f = follow(i_s, p)?;
            let u = Controls { w: f.w, i_s, p, i_b: f.i_b };
            Ok(hamiltonian_values(params, pt, &u).0)
        })?;
        let p_br = parabola_vertex("p", p, |p| {
            let f = follow(i_s, p)?;
            let u = Controls { w: f.w, i_s, p, i_b: f.i_b };
            Ok(hamiltonian_values(params, pt, &u).1)
        })?;
        Ok([is_br, p_br])
    })?;
    let [i_s, p] = res.value;
    let f = follow(i_s, p)?;
    let errors: Vec<f64> = res
        .history
        .iter()
        .map(|u| (u[0] - i_s).abs().max((u[1] - p).abs()))
        .collect();
    let monotone_after_second = errors
        .windows(2)
        .skip(1)
        .all(|w| w[1] <= w[0]);
    Ok(LeaderNash {
        controls: Controls { w: f.w, i_s, p, i_b: f.i_b },
        iterations: res.iterations,
        damped: res.damped,
        errors,
        monotone_after_second,
    })
}

/// Random point in the regime where the baseline value functions live.
pub fn random_point(params: &ModelParams, rng: &mut impl Rng) -> HamiltonianPoint {
    HamiltonianPoint {
        t: rng.random_range(0.0..=params.horizon),
        x: rng.random_range(0.0..10.0),
        y1: rng.random_range(-0.1..0.1),
        y2: rng.random_range(-0.1..0.1),
        a1: rng.random_range(-0.1..0.1),
        a2: rng.random_range(-0.1..0.1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheck {
    pub points: usize,
    /// Largest |numeric − closed form| over all points and controls.
    pub max_error: f64,
    /// Largest spread between multi-start solutions at one point.
    pub max_multistart_spread: f64,
    pub all_monotone: bool,
}

/// Compares the numeric nested Nash against the closed forms on `n_points`
/// seeded random points, each solved from `starts` random initializations.
pub fn cross_check(
    params: &ModelParams,
    n_points: usize,
    starts: usize,
    seed: u64,
) -> Result<CrossCheck, NashError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = NashOptions::default();
    let mut max_error = 0.0f64;
    let mut max_spread = 0.0f64;
    let mut all_monotone = true;
    for _ in 0..n_points {
        let pt = random_point(params, &mut rng);
        let exact = closed_form_equilibrium(params, &pt);
        let mut sols = Vec::with_capacity(starts);
        for _ in 0..starts.max(1) {
            let start = NashStart {
                i_s: rng.random_range(-10.0..10.0),
                p: rng.random_range(-10.0..10.0),
                w: rng.random_range(-10.0..10.0),
                i_b: rng.random_range(-10.0..10.0),
            };
            let res = leader_nash_numeric(params, &pt, &start, &opts)?;
            all_monotone &= res.monotone_after_second;
            sols.push(res.controls);
        }
        for s in &sols {
            max_error = max_error.max(control_distance(s, &exact));
            max_spread = max_spread.max(control_distance(s, &sols[0]));
        }
    }
    Ok(CrossCheck {
        points: n_points,
        max_error,
        max_multistart_spread: max_spread,
        all_monotone,
    })
}

pub fn control_distance(a: &Controls, b: &Controls) -> f64 {
    (a.w - b.w)
        .abs()
        .max((a.i_s - b.i_s).abs())
        .max((a.p - b.p).abs())
        .max((a.i_b - b.i_b).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZERO: Controls = Controls {
        w: 0.0,
        i_s: 0.0,
        p: 0.0,
        i_b: 0.0,
    };

    fn pt(t: f64, x: f64, y1: f64, y2: f64, a1: f64, a2: f64) -> HamiltonianPoint {
        HamiltonianPoint { t, x, y1, y2, a1, a2 }
    }

    #[test]
    fn hamiltonians_at_rest() {
        let p = ModelParams::baseline();
        let (hs, hb) = hamiltonian_values(&p, &pt(0.4, 0.0, 0.0, 0.0, 0.0, 0.0), &ZERO);
        assert_eq!(hs, (-0.05f64 * 0.4).exp() * (-p.c0 * p.alpha));
        assert_eq!(hb, 0.0);
    }

    #[test]
    fn hamiltonian_with_unit_gradient() {
        // y1 = 1, x = 1: Hs = −βx + e^{−rt}(−C0)(α + γx) = −0.1 − 1.1 at t = 0
        let p = ModelParams::baseline();
        let (hs, _) = hamiltonian_values(&p, &pt(0.0, 1.0, 1.0, 0.0, 0.0, 0.0), &ZERO);
        assert!((hs - (-1.2)).abs() < 1e-15);
    }

    #[test]
    fn seller_hamiltonian_concave_in_w() {
        let p = ModelParams::baseline();
        let point = pt(0.3, 2.0, 0.01, -0.02, 0.001, 0.0);
        let h = |w| hamiltonian_values(&p, &point, &Controls { w, i_s: 0.1, p: 9.0, i_b: 0.2 }).0;
        assert!(h(1.0) + h(3.0) < 2.0 * h(2.0));
    }

    #[test]
    fn demand_neutral_retail_price_halves_cost() {
        let p = ModelParams::baseline();
        let point = pt(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let retail = p.alpha / p.gamma_p;
        let f = follower_nash_numeric(&p, &point, (0.0, retail), (3.0, 1.0), &NashOptions::default())
            .unwrap();
        assert!((f.w - p.c0 / 2.0).abs() < 1e-10);
        assert!((f.w - wholesale_response(&p, &point, retail)).abs() < 1e-10);
        assert!(f.i_b.abs() < 1e-12);
    }

    #[test]
    fn zero_gradients_reduce_to_k_tails() {
        let p = ModelParams::baseline();
        let point = pt(0.25, 3.0, 0.0, 0.0, 0.0, 0.0);
        let k = crate::model::k_constants(&p, 0.25).unwrap();
        let res = leader_nash_numeric(&p, &point, &NashStart::default(), &NashOptions::default())
            .unwrap();
        let u = res.controls;
        assert!(u.i_s.abs() < 1e-10);
        assert!(u.i_b.abs() < 1e-10);
        assert!((u.p - (k.k3 * 3.0 + k.k4)).abs() < 1e-8);
        assert!((u.w - (k.k7 * 3.0 + k.k8)).abs() < 1e-8);
    }

    #[test]
    fn baseline_point_matches_closed_forms() {
        let p = ModelParams::baseline();
        let point = pt(0.5, 1.0, 0.1, -0.2, 0.01, 0.02);
        let res = leader_nash_numeric(&p, &point, &NashStart::default(), &NashOptions::default())
            .unwrap();
        let exact = closed_form_equilibrium(&p, &point);
        assert!(control_distance(&res.controls, &exact) < 1e-8, "{res:?} vs {exact:?}");
        // composed K5..K8 form agrees with the raw wholesale response at p*
        let raw = wholesale_response(&p, &point, exact.p);
        assert!((raw - exact.w).abs() < 1e-9 * exact.w.abs().max(1.0));
    }

    #[test]
    fn retail_price_linear_in_buyer_gradient() {
        let p = ModelParams::baseline();
        let k = crate::model::k_constants(&p, 0.7).unwrap();
        let point = pt(0.7, 2.0, 0.0, 0.05, 0.0, 0.03);
        let expected = k.k2 * 0.05 + 0.5 * k.k2 * 0.03 + k.k3 * 2.0 + k.k4;
        assert!((retail_response(&p, &point) - expected).abs() < 1e-14);
    }

    #[test]
    fn innovation_responses_ignore_goodwill() {
        let p = ModelParams::baseline();
        let opts = NashOptions::default();
        let a = leader_nash_numeric(&p, &pt(0.2, 0.5, 0.03, 0.04, 0.01, 0.02), &NashStart::default(), &opts)
            .unwrap();
        let b = leader_nash_numeric(&p, &pt(0.2, 8.0, 0.03, 0.04, 0.01, 0.02), &NashStart::default(), &opts)
            .unwrap();
        assert!((a.controls.i_s - b.controls.i_s).abs() < 1e-10);
        assert!((a.controls.i_b - b.controls.i_b).abs() < 1e-10);
    }

    #[test]
    fn non_concave_regime_is_reported() {
        let mut p = ModelParams::baseline();
        p.gamma_w = -0.01;
        let err = follower_nash_numeric(
            &p,
            &pt(0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            (0.0, 1.0),
            (0.0, 0.0),
            &NashOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, NashError::NonConcave { control: "w", .. }));
    }

    #[test]
    fn zero_buyer_gradient_means_no_buyer_innovation() {
        let p = ModelParams::baseline();
        let point = pt(0.1, 4.0, 0.3, 0.0, 0.2, 0.0);
        let f = follower_nash_numeric(&p, &point, (0.5, 9.0), (0.0, 0.0), &NashOptions::default())
            .unwrap();
        assert!(f.i_b.abs() < 1e-12);
    }
}
