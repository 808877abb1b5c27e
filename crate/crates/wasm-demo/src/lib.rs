//! Browser bindings: equilibrium strategy curves, simulated goodwill paths
//! and value-function slices for a baseline market with adjustable
//! production cost and innovation effectiveness.
//!
//! Every function returns a flat `Float64Array`; the layout is given on
//! each function.

use mlsg_core::riccati::{solve, TimeMesh};
use mlsg_core::sim::{trace_paths, SimConfig};
use mlsg_core::strategies::{strategy_coefficients, value_functions, Coefficient, StrategyCoefficients};
use mlsg_core::{ModelParams, RiccatiSolution};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn params(c0: f64, delta: f64) -> Result<ModelParams, JsError> {
    let p = ModelParams::baseline().with_c0(c0).with_constant_delta(delta);
    p.validate().map_err(err)?;
    Ok(p)
}

fn solved(p: &ModelParams, n_steps: usize) -> Result<(RiccatiSolution, StrategyCoefficients), JsError> {
    let mesh = TimeMesh::for_params(p, n_steps).map_err(err)?;
    let sol = solve(p, &mesh).map_err(err)?;
    let coeffs = strategy_coefficients(p, &sol).map_err(err)?;
    Ok((sol, coeffs))
}

/// Names of the eight coefficient rows returned by [`strategy_curves`].
#[wasm_bindgen]
pub fn coefficient_names() -> Vec<String> {
    Coefficient::ALL.iter().map(|c| c.name().to_string()).collect()
}

/// Nine rows of `n_steps + 1` values: the time nodes, then the coefficients
/// in [`coefficient_names`] order.
#[wasm_bindgen]
pub fn strategy_curves(c0: f64, delta: f64, n_steps: usize) -> Result<Vec<f64>, JsError> {
    let p = params(c0, delta)?;
    let (sol, coeffs) = solved(&p, n_steps)?;
    let mut out = sol.mesh.nodes();
    for c in Coefficient::ALL {
        out.extend_from_slice(coeffs.trajectory(c));
    }
    Ok(out)
}

/// `n_paths` rows of `n_steps + 1` goodwill values on a uniform time grid.
#[wasm_bindgen]
pub fn goodwill_paths(
    c0: f64,
    delta: f64,
    x0: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    let p = params(c0, delta)?;
    let (_, coeffs) = solved(&p, 1000)?;
    let cfg = SimConfig {
        n_paths,
        n_steps,
        seed,
        x0,
        sigma_scale: 1.0,
        perturbation: None,
    };
    let traces = trace_paths(&p, &coeffs, &cfg, n_paths).map_err(err)?;
    Ok(traces
        .iter()
        .flat_map(|rows| rows.iter().map(|r| r[1]))
        .collect())
}

/// Three rows of `n_points` values at time `t`: goodwill on `[0, x_max]`,
/// then the seller's and the buyer's value.
#[wasm_bindgen]
pub fn value_slice(c0: f64, delta: f64, t: f64, x_max: f64, n_points: usize) -> Result<Vec<f64>, JsError> {
    let p = params(c0, delta)?;
    p.check_time(t).map_err(err)?;
    let (sol, _) = solved(&p, 1000)?;
    let n = n_points.max(2);
    let xs: Vec<f64> = (0..n).map(|k| x_max * k as f64 / (n - 1) as f64).collect();
    let vals: Vec<_> = xs.iter().map(|&x| value_functions(&sol, t, x)).collect();
    let mut out = xs;
    out.extend(vals.iter().map(|v| v.v_s));
    out.extend(vals.iter().map(|v| v.v_b));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts() {
        let curves = strategy_curves(1.0, 0.1, 50).unwrap();
        assert_eq!(curves.len(), 9 * 51);
        assert_eq!(curves[50], 1.0);
        let paths = goodwill_paths(1.0, 0.1, 1.0, 3, 20, 1).unwrap();
        assert_eq!(paths.len(), 3 * 21);
        assert_eq!(paths[21], 1.0);
        let slice = value_slice(1.0, 0.1, 0.0, 10.0, 5).unwrap();
        assert_eq!(slice.len(), 15);
        assert_eq!(slice[4], 10.0);
        assert!(slice[5] > 0.0);
    }
}
