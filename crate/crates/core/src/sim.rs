//! Euler–Maruyama Monte Carlo of the goodwill dynamics under feedback
//! strategies, profit estimation, and equilibrium deviation tests.
//!
//! Each path owns a ChaCha8 stream selected by its index, draws exactly one
//! standard normal per step, and is reduced in index order, so results do
//! not depend on how many workers ran the paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::num;
use crate::model::ModelParams;
use crate::riccati::RiccatiSolution;
use crate::strategies::{value_functions, Controls, StrategyCoefficients};

pub const MIN_SIM_STEPS: usize = 10;
/// Largest tolerated share of paths dropped for non-finite states.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;
pub const DEFAULT_FACTORS: [f64; 4] = [0.9, 0.95, 1.05, 1.1];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("{excluded} of {total} paths hit a non-finite state")]
    TooManyExclusions { excluded: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Player {
    Seller,
    Buyer,
}

/// Which of the deviating player's two controls is altered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Leader,
    Follower,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    Factor(f64),
    Offset(f64),
}

impl Adjustment {
    fn apply(self, v: f64) -> f64 {
        match self {
            Adjustment::Factor(f) => f * v,
            Adjustment::Offset(o) => v + o,
        }
    }
}

/// A unilateral change to one player's equilibrium feedback, applied to the
/// unclamped linear strategy before the nonnegativity clamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub player: Player,
    pub target: Target,
    pub adjustment: Adjustment,
}

fn default_sigma_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_sigma_scale")]
    pub sigma_scale: f64,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 2000,
            seed: 0,
            x0: 1.0,
            sigma_scale: 1.0,
            perturbation: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_paths == 0 {
            return Err(SimError::InvalidConfig("n_paths must be at least 1".into()));
        }
        if self.n_steps < MIN_SIM_STEPS {
            return Err(SimError::InvalidConfig(format!(
                "n_steps must be at least {MIN_SIM_STEPS}, got {}",
                self.n_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.sigma_scale) {
            return Err(SimError::InvalidConfig(format!(
                "sigma_scale must lie in [0, 1], got {}",
                self.sigma_scale
            )));
        }
        if !self.x0.is_finite() {
            return Err(SimError::InvalidConfig("x0 must be finite".into()));
        }
        Ok(())
    }

    pub fn with_perturbation(mut self, p: Option<Perturbation>) -> Self {
        self.perturbation = p;
        self
    }
}

/// One simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub j_s: f64,
    pub j_b: f64,
    /// Steps whose diffusion argument was negative before clamping.
    pub diffusion_clamps: u32,
    pub negative_x: u32,
    /// Steps where at least one control hit the nonnegativity clamp.
    pub control_clamps: u32,
    pub finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub j_s_mean: f64,
    pub j_s_se: f64,
    pub j_b_mean: f64,
    pub j_b_se: f64,
    pub clamp_fraction: f64,
    pub negative_x_fraction: f64,
    pub control_clamp_fraction: f64,
    pub valid_paths: usize,
    pub excluded_paths: usize,
}

impl SimResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("SimResult serializes")
    }
}

#[derive(Debug, Clone, Copy)]
struct StepCoeffs {
    t: f64,
    emrt: f64,
    bp: f64,
    bw: f64,
    delta: f64,
    slopes: [f64; 4],
    intercepts: [f64; 4],
}

/// Everything the inner loop needs, sampled once on the simulation grid.
struct Schedule {
    dt: f64,
    sqrt_dt: f64,
    steps: Vec<StepCoeffs>,
}

impl Schedule {
    fn new(params: &ModelParams, coeffs: &StrategyCoefficients, n_steps: usize) -> Self {
        let horizon = params.horizon;
        let dt = horizon / n_steps as f64;
        let steps = (0..=n_steps)
            .map(|k| {
                let t = if k == n_steps { horizon } else { k as f64 * dt };
                let (slopes, intercepts) = coeffs.at(t);
                StepCoeffs {
                    t,
                    emrt: (-params.r * t).exp(),
                    bp: params.beta_p.eval(t),
                    bw: params.beta_w.eval(t),
                    delta: params.delta.eval(t),
                    slopes,
                    intercepts,
                }
            })
            .collect();
        Self {
            dt,
            sqrt_dt: dt.sqrt(),
            steps,
        }
    }
}

/// Controls applied at one step plus whether any clamp bound.
fn applied_controls(
    s: &StepCoeffs,
    x: f64,
    pass_through: f64,
    perturbation: Option<&Perturbation>,
) -> (Controls, bool) {
    let lin = Controls {
        w: s.slopes[0] * x + s.intercepts[0],
        i_s: s.slopes[1] * x + s.intercepts[1],
        p: s.slopes[2] * x + s.intercepts[2],
        i_b: s.slopes[3] * x + s.intercepts[3],
    };
    let eq = lin.clamped();
    let mut u = eq;
    let mut raw = lin;
    if let Some(pert) = perturbation {
        let (lead, follow) = match pert.target {
            Target::Leader => (true, false),
            Target::Follower => (false, true),
            Target::Both => (true, true),
        };
        match pert.player {
            Player::Seller => {
                if lead {
                    raw.i_s = pert.adjustment.apply(lin.i_s);
                }
                if follow {
                    raw.w = pert.adjustment.apply(lin.w);
                }
            }
            Player::Buyer => {
                if lead {
                    raw.p = pert.adjustment.apply(lin.p);
                }
                if follow {
                    raw.i_b = pert.adjustment.apply(lin.i_b);
                }
                // the seller still follows the retail price actually posted
                let p_applied = raw.p.max(0.0);
                raw.w = lin.w - pass_through * (p_applied - eq.p);
            }
        }
        u = raw.clamped();
    }
    let clamped = raw.w < 0.0 || raw.i_s < 0.0 || raw.p < 0.0 || raw.i_b < 0.0;
    (u, clamped)
}

/// Per-step record of a traced path: `t, x, w, I_s, p, I_b, D`.
pub type TraceRow = [f64; 7];

fn run_path(
    params: &ModelParams,
    sched: &Schedule,
    cfg: &SimConfig,
    index: u64,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> PathOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let pass = params.price_pass_through();
    let pert = cfg.perturbation.as_ref();
    let (dt, sqrt_dt) = (sched.dt, sched.sqrt_dt);
    let mut x = cfg.x0;
    let mut out = PathOutcome {
        j_s: 0.0,
        j_b: 0.0,
        diffusion_clamps: 0,
        negative_x: 0,
        control_clamps: 0,
        finite: true,
    };
    let n = sched.steps.len() - 1;
    for s in &sched.steps[..n] {
        let z: f64 = StandardNormal.sample(&mut rng);
        let (u, clamped) = applied_controls(s, x, pass, pert);
        let demand = params.demand(x, u.w, u.p);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push([s.t, x, u.w, u.i_s, u.p, u.i_b, demand]);
        }
        out.control_clamps += clamped as u32;
        out.negative_x += (x < 0.0) as u32;
        out.j_s += s.emrt * ((u.w - params.c0) * demand - u.i_s * u.i_s) * dt;
        out.j_b += s.emrt * ((u.p - u.w) * demand - u.i_b * u.i_b) * dt;
        let push = s.bp * u.p + s.bw * u.w + s.delta * (u.i_s + u.i_b);
        let drift = push - params.beta_x * x;
        let arg = push + params.beta_x * x;
        if arg < 0.0 {
            out.diffusion_clamps += 1;
        }
        x += drift * dt + cfg.sigma_scale * arg.max(0.0).sqrt() * sqrt_dt * z;
        if !x.is_finite() {
            out.finite = false;
            break;
        }
    }
    if let Some(tr) = trace {
        if out.finite {
            let s = &sched.steps[n];
            let (u, _) = applied_controls(s, x, pass, pert);
            tr.push([s.t, x, u.w, u.i_s, u.p, u.i_b, params.demand(x, u.w, u.p)]);
        }
    }
    out.finite &= out.j_s.is_finite() && out.j_b.is_finite();
    out
}

#[cfg(feature = "parallel")]
fn map_paths<F>(n: usize, f: F) -> Vec<PathOutcome>
where
    F: Fn(u64) -> PathOutcome + Sync + Send,
{
    use rayon::prelude::*;
    (0..n as u64).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_paths<F>(n: usize, f: F) -> Vec<PathOutcome>
where
    F: Fn(u64) -> PathOutcome,
{
    (0..n as u64).map(f).collect()
}

/// Per-path outcomes in path-index order.
pub fn simulate_paths(
    params: &ModelParams,
    coeffs: &StrategyCoefficients,
    cfg: &SimConfig,
) -> Result<Vec<PathOutcome>, SimError> {
    cfg.validate()?;
    let sched = Schedule::new(params, coeffs, cfg.n_steps);
    Ok(map_paths(cfg.n_paths, |i| run_path(params, &sched, cfg, i, None)))
}

/// Sample mean and standard error, summed in slice order.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

pub fn summarize(cfg: &SimConfig, paths: &[PathOutcome]) -> Result<SimResult, SimError> {
    let total = paths.len();
    let valid: Vec<&PathOutcome> = paths.iter().filter(|p| p.finite).collect();
    let excluded = total - valid.len();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        return Err(SimError::TooManyExclusions { excluded, total });
    }
    let js: Vec<f64> = valid.iter().map(|p| p.j_s).collect();
    let jb: Vec<f64> = valid.iter().map(|p| p.j_b).collect();
    let (j_s_mean, j_s_se) = mean_se(&js);
    let (j_b_mean, j_b_se) = mean_se(&jb);
    let cells = (valid.len() * cfg.n_steps).max(1) as f64;
    let count = |f: fn(&PathOutcome) -> u32| valid.iter().map(|p| f(p) as u64).sum::<u64>() as f64;
    Ok(SimResult {
        config: *cfg,
        j_s_mean,
        j_s_se,
        j_b_mean,
        j_b_se,
        clamp_fraction: count(|p| p.diffusion_clamps) / cells,
        negative_x_fraction: count(|p| p.negative_x) / cells,
        control_clamp_fraction: count(|p| p.control_clamps) / cells,
        valid_paths: valid.len(),
        excluded_paths: excluded,
    })
}

pub fn simulate(
    params: &ModelParams,
    coeffs: &StrategyCoefficients,
    cfg: &SimConfig,
) -> Result<SimResult, SimError> {
    let paths = simulate_paths(params, coeffs, cfg)?;
    summarize(cfg, &paths)
}

/// Full trajectories of the first `min(n_paths, limit)` paths, identical to
/// the corresponding paths of [`simulate`].
pub fn trace_paths(
    params: &ModelParams,
    coeffs: &StrategyCoefficients,
    cfg: &SimConfig,
    limit: usize,
) -> Result<Vec<Vec<TraceRow>>, SimError> {
    cfg.validate()?;
    let sched = Schedule::new(params, coeffs, cfg.n_steps);
    Ok((0..cfg.n_paths.min(limit) as u64)
        .map(|i| {
            let mut rows = Vec::with_capacity(cfg.n_steps + 1);
            run_path(params, &sched, cfg, i, Some(&mut rows));
            rows
        })
        .collect())
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("t,x,w,I_s,p,I_b,D\n");
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&v| num(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationEntry {
    pub player: Player,
    pub factor: f64,
    /// Mean of (deviating player's profit when deviating − at equilibrium).
    pub gain_mean: f64,
    pub gain_se: f64,
    pub paired_paths: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub config: SimConfig,
    pub entries: Vec<DeviationEntry>,
    pub passed: bool,
}

/// Scales each player's strategy pair by every factor, re-simulates with the
/// same seed, and checks that no deviation gains more than 3 paired SE.
pub fn deviation_test(
    params: &ModelParams,
    coeffs: &StrategyCoefficients,
    cfg: &SimConfig,
    factors: &[f64],
) -> Result<DeviationReport, SimError> {
    let base_cfg = cfg.with_perturbation(None);
    let base = simulate_paths(params, coeffs, &base_cfg)?;
    summarize(&base_cfg, &base)?;
    let mut entries = Vec::new();
    for player in [Player::Seller, Player::Buyer] {
        for &factor in factors {
            let pert_cfg = cfg.with_perturbation(Some(Perturbation {
                player,
                target: Target::Both,
                adjustment: Adjustment::Factor(factor),
            }));
            let dev = simulate_paths(params, coeffs, &pert_cfg)?;
            summarize(&pert_cfg, &dev)?;
            let gains: Vec<f64> = base
                .iter()
                .zip(&dev)
                .filter(|(a, b)| a.finite && b.finite)
                .map(|(a, b)| match player {
                    Player::Seller => b.j_s - a.j_s,
                    Player::Buyer => b.j_b - a.j_b,
                })
                .collect();
            let (gain_mean, gain_se) = mean_se(&gains);
            entries.push(DeviationEntry {
                player,
                factor,
                gain_mean,
                gain_se,
                paired_paths: gains.len(),
                passed: gain_mean <= 3.0 * gain_se,
            });
        }
    }
    let passed = entries.iter().all(|e| e.passed);
    Ok(DeviationReport {
        config: base_cfg,
        entries,
        passed,
    })
}

/// Clamp share above which the Monte Carlo estimate no longer targets `V`.
pub const FEYNMAN_KAC_CLAMP_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeynmanKacReport {
    pub v_s: f64,
    pub v_b: f64,
    pub result: SimResult,
    /// |Ĵ − V| in units of the standard error.
    pub z_s: f64,
    pub z_b: f64,
    pub status: CheckStatus,
}

/// Equilibrium profit estimates against the value functions at `(0, x0)`.
pub fn feynman_kac_check(
    params: &ModelParams,
    sol: &RiccatiSolution,
    coeffs: &StrategyCoefficients,
    cfg: &SimConfig,
) -> Result<FeynmanKacReport, SimError> {
    let cfg = cfg.with_perturbation(None);
    let result = simulate(params, coeffs, &cfg)?;
    let v = value_functions(sol, 0.0, cfg.x0);
    let z = |j: f64, se: f64, v: f64| (j - v).abs() / se;
    let z_s = z(result.j_s_mean, result.j_s_se, v.v_s);
    let z_b = z(result.j_b_mean, result.j_b_se, v.v_b);
    let status = if result.clamp_fraction >= FEYNMAN_KAC_CLAMP_LIMIT {
        CheckStatus::Inconclusive
    } else if (result.j_s_mean - v.v_s).abs() <= 3.0 * result.j_s_se
        && (result.j_b_mean - v.v_b).abs() <= 3.0 * result.j_b_se
    {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(FeynmanKacReport {
        v_s: v.v_s,
        v_b: v.v_b,
        result,
        z_s,
        z_b,
        status,
    })
}
