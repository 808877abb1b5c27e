//! Command-line driver for the mixed-leadership game: `solve`, `verify`,
//! `simulate` and `sweep`.
//!
//! Exit codes: 0 success, 1 verification or simulation failure, 2 the
//! Riccati solution blew up before the horizon, 64 configuration error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mlsg_core::fmt::num;
use mlsg_core::riccati::{solve, RiccatiError, RiccatiSolution, TimeMesh};
use mlsg_core::sim::{simulate, trace_paths, trace_to_csv, SimError};
use mlsg_core::strategies::{strategy_coefficients, value_functions, StrategyError};
use mlsg_core::sweep::{emit_plots, run_sweep, SweepError, SweepSpec};
use serde_json::json;

pub mod config;
pub mod verify;

use config::{Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_EXISTENCE: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;

/// Paths dumped per `simulate` run.
pub const MAX_TRACED_PATHS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("Riccati solution blew up: existence window eta = {eta} < T = {horizon}")]
    Existence { eta: f64, horizon: f64 },
    #[error("verification failed: {0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Existence { .. } => EXIT_EXISTENCE,
            CliError::Failed(_) => EXIT_VERIFY,
        }
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        match e {
            RiccatiError::Parse { .. } => CliError::Config(format!("solution file: {e}")),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<StrategyError> for CliError {
    fn from(e: StrategyError) -> Self {
        match e {
            StrategyError::IncompleteSolution { eta } => CliError::Existence { eta, horizon: f64::NAN },
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mlsg", version, about = "Seller-buyer goodwill game with mixed leadership")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; built-in baseline when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Riccati mesh steps (overrides `mesh.n_steps`).
    #[arg(long, global = true)]
    pub mesh_steps: Option<usize>,
    /// Simulation seed (overrides `sim.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Simulated paths (overrides `sim.n_paths`).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the Riccati system; write trajectories, strategies, existence report and value samples.
    Solve,
    /// Check residuals, closed forms and (with a `sim` block) Monte Carlo properties.
    Verify {
        /// Verify this Riccati CSV instead of solving.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Simulate goodwill paths under the equilibrium strategies.
    Simulate,
    /// Sweep c0 or a constant delta and plot coefficient trajectories.
    Sweep,
}

struct Ctx {
    cfg: RunConfig,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Applies `MLSG_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("MLSG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("MLSG_THREADS must be a positive integer, got '{raw}'")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let overrides = Overrides {
        out: cli.out.clone(),
        mesh_steps: cli.mesh_steps,
        seed: cli.seed,
        paths: cli.paths,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let ctx = Ctx { cfg, quiet: cli.quiet };
    match &cli.command {
        Command::Solve => cmd_solve(&ctx),
        Command::Verify { solution } => cmd_verify(&ctx, solution.as_deref()),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
    }
}

fn solve_configured(cfg: &RunConfig) -> Result<RiccatiSolution, CliError> {
    let mesh = TimeMesh::for_params(&cfg.model, cfg.mesh.n_steps)?;
    Ok(solve(&cfg.model, &mesh)?)
}

fn existence_error(sol: &RiccatiSolution) -> CliError {
    CliError::Existence {
        eta: sol.eta,
        horizon: sol.mesh.horizon(),
    }
}

fn cmd_solve(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let dir = cfg.output_dir()?;
    let probes = cfg.probes();
    for p in &probes {
        cfg.model
            .check_time(p.t)
            .map_err(|e| CliError::Config(format!("probe: {e}")))?;
    }
    let sol = solve_configured(cfg)?;
    write(&dir, "riccati.csv", &sol.to_csv())?;
    let report = json!({
        "existence_ok": sol.existence_ok,
        "eta": sol.eta,
        "horizon": sol.mesh.horizon(),
        "n_steps": sol.mesh.n_steps(),
        "first_valid_node": sol.first_valid,
    });
    write(&dir, "existence.json", &to_json(&report))?;
    if !sol.existence_ok {
        return Err(existence_error(&sol));
    }
    let coeffs = strategy_coefficients(&cfg.model, &sol)?;
    write(&dir, "strategies.csv", &coeffs.to_csv())?;
    let mut samples = String::from("t,x,V_s,V_b\n");
    for p in &probes {
        let v = value_functions(&sol, p.t, p.x);
        let _ = writeln!(samples, "{},{},{},{}", num(p.t), num(p.x), num(v.v_s), num(v.v_b));
    }
    write(&dir, "value_samples.csv", &samples)?;
    ctx.note(format!(
        "solved on {} steps; wrote riccati.csv, strategies.csv, existence.json, value_samples.csv to {}",
        sol.mesh.n_steps(),
        dir.display()
    ));
    Ok(())
}

fn cmd_verify(ctx: &Ctx, solution: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let dir = cfg.output_dir()?;
    let (sol, resolved) = match solution {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let sol = RiccatiSolution::from_csv(&text)?;
            if sol.mesh.horizon() != cfg.model.horizon {
                return Err(CliError::Config(format!(
                    "solution horizon {} differs from model horizon {}",
                    sol.mesh.horizon(),
                    cfg.model.horizon
                )));
            }
            (sol, false)
        }
        None => (solve_configured(cfg)?, true),
    };
    let report = verify::verify(cfg, &sol, resolved)?;
    write(&dir, "verify.json", &to_json(&report))?;
    for c in &report.checks {
        ctx.note(format!(
            "{:<36} {}{}",
            c.name,
            format!("{:?}", c.status).to_lowercase(),
            if c.hard { "" } else { " (soft)" }
        ));
    }
    if !sol.existence_ok {
        return Err(existence_error(&sol));
    }
    if !report.passed {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| c.hard && c.status == mlsg_core::sim::CheckStatus::Fail)
            .map(|c| c.name)
            .collect();
        return Err(CliError::Failed(failed.join(", ")));
    }
    Ok(())
}

fn cmd_simulate(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let sim = cfg
        .sim
        .ok_or_else(|| CliError::Config("simulate needs a `sim` block in the config".into()))?;
    let dir = cfg.output_dir()?;
    let sol = solve_configured(cfg)?;
    if !sol.existence_ok {
        return Err(existence_error(&sol));
    }
    let coeffs = strategy_coefficients(&cfg.model, &sol)?;
    let result = simulate(&cfg.model, &coeffs, &sim)?;
    write(&dir, "sim_result.json", &to_json(&result))?;
    let traces = trace_paths(&cfg.model, &coeffs, &sim, MAX_TRACED_PATHS)?;
    for (k, rows) in traces.iter().enumerate() {
        write(&dir, &format!("path_{k}.csv"), &trace_to_csv(rows))?;
    }
    ctx.note(format!(
        "J_s = {} ± {}, J_b = {} ± {} over {} paths",
        result.j_s_mean, result.j_s_se, result.j_b_mean, result.j_b_se, result.valid_paths
    ));
    Ok(())
}

fn cmd_sweep(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let block = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep needs a `sweep` block in the config".into()))?;
    let dir = cfg.output_dir()?;
    let spec = SweepSpec {
        base: cfg.model.clone(),
        parameter: block.parameter,
        values: block.values,
        outputs: block.outputs,
    };
    let result = run_sweep(&spec, cfg.mesh.n_steps)?;
    let name = spec.parameter.name();
    let csv = result.to_csv();
    write(&dir, &format!("sweep_{name}.csv"), &csv)?;
    let groups: Vec<_> = result
        .groups
        .iter()
        .map(|g| json!({ "value": g.value, "complete": g.complete, "eta": g.eta }))
        .collect();
    let spreads: serde_json::Map<String, serde_json::Value> = if result.groups.iter().all(|g| g.complete) {
        spec.outputs
            .iter()
            .map(|&c| (c.name().to_string(), json!(result.relative_spread(c))))
            .collect()
    } else {
        Default::default()
    };
    let summary = json!({ "parameter": name, "groups": groups, "relative_spread": spreads });
    write(&dir, &format!("sweep_{name}.json"), &to_json(&summary))?;
    let plots = emit_plots(&csv, name)?;
    if plots.is_empty() {
        ctx.note("no coefficients selected; no plots written");
    }
    for (file, svg) in &plots {
        write(&dir, file, svg)?;
    }
    ctx.note(format!(
        "swept {name} over {} values; wrote sweep_{name}.csv and {} plots to {}",
        result.groups.len(),
        plots.len(),
        dir.display()
    ));
    if let Some(g) = result.groups.iter().find(|g| !g.complete) {
        return Err(CliError::Existence {
            eta: g.eta,
            horizon: cfg.model.horizon,
        });
    }
    Ok(())
}
