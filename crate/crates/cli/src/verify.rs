//! Verification report: residuals, closed-form cross-checks and, when a
//! simulation block is present, Monte Carlo consistency and deviation tests.

use mlsg_core::hamnash::cross_check;
use mlsg_core::model::concavity_diagnostics;
use mlsg_core::riccati::{
    hjb_residual, hjb_x_coefficients, riccati_residual, riccati_residual_at, solve, Equation,
    RiccatiSolution, TimeMesh,
};
use mlsg_core::sim::{deviation_test, feynman_kac_check, CheckStatus};
use mlsg_core::strategies::strategy_coefficients;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, VerifyBlock};
use crate::CliError;

pub const RICCATI_RESIDUAL_TOL: f64 = 1e-5;
pub const HALVING_RATIO_MIN: f64 = 3.0;
pub const HJB_RESIDUAL_TOL: f64 = 1e-4;
pub const HJB_COEFFICIENT_TOL: f64 = 1e-12;
pub const NASH_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// Hard checks decide the exit status; soft ones are informational.
    pub hard: bool,
    pub status: CheckStatus,
    pub measured: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn status(ok: bool) -> CheckStatus {
    if ok {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

fn hard(name: &'static str, ok: bool, measured: Value) -> Check {
    Check {
        name,
        hard: true,
        status: status(ok),
        measured,
    }
}

fn finish(checks: Vec<Check>) -> VerifyReport {
    let passed = checks
        .iter()
        .all(|c| !c.hard || c.status != CheckStatus::Fail);
    VerifyReport { passed, checks }
}

fn residual_sups(sol: &RiccatiSolution, cfg: &RunConfig) -> (f64, Value) {
    let res = riccati_residual(&cfg.model, sol);
    let per: serde_json::Map<String, Value> = Equation::ALL
        .iter()
        .map(|&eq| (eq.name().to_string(), json!(res.sup_of(eq))))
        .collect();
    (res.max_sup(), Value::Object(per))
}

/// Largest gap between the HJB residual's x-polynomial coefficients and the
/// Riccati residuals at the same nodes.
pub fn hjb_coefficient_gap(cfg: &RunConfig, sol: &RiccatiSolution) -> f64 {
    let mut worst = 0.0f64;
    for i in sol.first_valid + 1..sol.mesh.n_steps() {
        let (s, b) = hjb_x_coefficients(&cfg.model, sol, i);
        let r = riccati_residual_at(&cfg.model, sol, i);
        let gaps = [
            s[2] - r[0],
            s[1] - r[1],
            s[0] - r[2],
            b[2] - r[3],
            b[1] - r[4],
            b[0] - r[5],
        ];
        worst = gaps.iter().fold(worst, |m, g| m.max(g.abs()));
    }
    worst
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Runs every check on `sol`. `resolved` says whether `sol` came from the
/// solver with the configured mesh, which enables the step-halving check.
pub fn verify(cfg: &RunConfig, sol: &RiccatiSolution, resolved: bool) -> Result<VerifyReport, CliError> {
    let params = &cfg.model;
    let opts = cfg.verify.clone().unwrap_or_default();
    let mut checks = vec![hard(
        "existence",
        sol.existence_ok,
        json!({ "eta": sol.eta, "horizon": sol.mesh.horizon() }),
    )];
    if !sol.existence_ok {
        return Ok(finish(checks));
    }

    let terminal = sol.state(sol.mesh.n_steps());
    checks.push(hard(
        "terminal_conditions",
        terminal == [0.0; 6],
        json!({ "state_at_horizon": terminal }),
    ));

    let (sup, per) = residual_sups(sol, cfg);
    checks.push(hard(
        "riccati_residual",
        sup < RICCATI_RESIDUAL_TOL,
        json!({ "sup": sup, "per_equation": per, "tolerance": RICCATI_RESIDUAL_TOL }),
    ));

    if resolved {
        let fine_mesh = TimeMesh::new(sol.mesh.horizon(), 2 * sol.mesh.n_steps())?;
        let fine = solve(params, &fine_mesh)?;
        let (fine_sup, _) = residual_sups(&fine, cfg);
        let ratio = sup / fine_sup;
        checks.push(hard(
            "riccati_residual_halving",
            ratio >= HALVING_RATIO_MIN,
            json!({ "sup_h": sup, "sup_half_h": fine_sup, "ratio": ratio, "minimum": HALVING_RATIO_MIN }),
        ));
    }

    let t_grid = grid(0.0, params.horizon, opts.hjb_t_points);
    let x_grid = grid(0.0, opts.hjb_x_max, opts.hjb_x_points);
    let hjb = hjb_residual(params, sol, &t_grid, &x_grid);
    let hjb_sup = hjb.sup_seller.max(hjb.sup_buyer);
    checks.push(hard(
        "hjb_residual",
        hjb_sup < HJB_RESIDUAL_TOL,
        json!({ "sup_seller": hjb.sup_seller, "sup_buyer": hjb.sup_buyer, "tolerance": HJB_RESIDUAL_TOL }),
    ));
    let gap = hjb_coefficient_gap(cfg, sol);
    checks.push(hard(
        "hjb_coefficients_match_riccati",
        gap < HJB_COEFFICIENT_TOL,
        json!({ "max_gap": gap, "tolerance": HJB_COEFFICIENT_TOL }),
    ));

    if params.gamma_x == 0.0 {
        // demand ignores goodwill, so the value functions are state free
        let all_zero = [Equation::P2, Equation::P1, Equation::N2, Equation::N1]
            .iter()
            .all(|&eq| sol.trajectory(eq).iter().all(|&v| v == 0.0));
        checks.push(hard("zero_goodwill_effect_state_terms", all_zero, json!({ "all_zero": all_zero })));
    }

    let worst = sol
        .mesh
        .nodes()
        .iter()
        .map(|&t| concavity_diagnostics(params, t))
        .fold(f64::NEG_INFINITY, |m, c| {
            m.max(c.seller_wholesale)
                .max(c.seller_innovation)
                .max(c.buyer_retail)
                .max(c.buyer_innovation)
        });
    checks.push(hard(
        "concavity",
        worst < 0.0,
        json!({ "max_second_derivative": worst, "at_t0": concavity_diagnostics(params, 0.0) }),
    ));

    checks.extend(hamnash_checks(cfg, &opts));

    if let Some(sim) = &cfg.sim {
        let coeffs = strategy_coefficients(params, sol)?;
        let fk = feynman_kac_check(params, sol, &coeffs, sim)?;
        checks.push(Check {
            name: "feynman_kac",
            hard: true,
            status: fk.status,
            measured: serde_json::to_value(&fk).expect("report serializes"),
        });
        let dev = deviation_test(params, &coeffs, sim, &opts.factors)?;
        checks.push(hard(
            "deviation_test",
            dev.passed,
            serde_json::to_value(&dev).expect("report serializes"),
        ));
    }
    Ok(finish(checks))
}

fn hamnash_checks(cfg: &RunConfig, opts: &VerifyBlock) -> Vec<Check> {
    match cross_check(&cfg.model, opts.hamnash_points, opts.hamnash_starts, opts.hamnash_seed) {
        Ok(cc) => vec![
            hard(
                "hamiltonian_nash_cross_check",
                cc.max_error < NASH_TOL && cc.max_multistart_spread < NASH_TOL,
                json!({
                    "points": cc.points,
                    "starts": opts.hamnash_starts,
                    "max_error": cc.max_error,
                    "max_multistart_spread": cc.max_multistart_spread,
                    "tolerance": NASH_TOL,
                }),
            ),
            Check {
                name: "best_response_contraction",
                hard: false,
                status: status(cc.all_monotone),
                measured: json!({ "monotone_after_second_iteration": cc.all_monotone }),
            },
        ],
        Err(e) => vec![hard(
            "hamiltonian_nash_cross_check",
            false,
            json!({ "error": e.to_string() }),
        )],
    }
}
