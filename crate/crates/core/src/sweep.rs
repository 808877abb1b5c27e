//! One-parameter sensitivity sweeps over the production cost or a constant
//! innovation effectiveness, with long-format CSV output and SVG plots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::num;
use crate::model::{ModelError, ModelParams};
use crate::plot::{line_chart, Series};
use crate::riccati::{solve, RiccatiError, TimeMesh};
use crate::strategies::{coefficients_on_window, Coefficient, StrategyCoefficients};

pub const CSV_HEADER: &str = "parameter_value,t,coefficient_name,coefficient_value";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "c0")]
    C0,
    /// Replaces the innovation-effectiveness curve by a constant.
    #[serde(rename = "delta")]
    Delta,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::C0 => "c0",
            SweepParameter::Delta => "delta",
        }
    }

    pub fn apply(self, base: &ModelParams, value: f64) -> ModelParams {
        match self {
            SweepParameter::C0 => base.clone().with_c0(value),
            SweepParameter::Delta => base.clone().with_constant_delta(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ModelParams,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub outputs: Vec<Coefficient>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::InvalidSpec("values must be nonempty".into()));
        }
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SweepError::InvalidSpec(format!("value {v} is not finite")));
            }
            if self.values[..i].contains(v) {
                return Err(SweepError::InvalidSpec(format!("value {v} appears twice")));
            }
        }
        self.base.validate()?;
        for &v in &self.values {
            self.parameter.apply(&self.base, v).validate()?;
        }
        Ok(())
    }
}

/// Coefficients for one parameter value; `complete` is false when the
/// Riccati pair blew up, in which case unreached nodes hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGroup {
    pub value: f64,
    pub complete: bool,
    pub eta: f64,
    pub coeffs: StrategyCoefficients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub outputs: Vec<Coefficient>,
    pub groups: Vec<SweepGroup>,
}

fn solve_group(spec: &SweepSpec, mesh: &TimeMesh, value: f64) -> Result<SweepGroup, SweepError> {
    let params = spec.parameter.apply(&spec.base, value);
    let sol = solve(&params, mesh)?;
    Ok(SweepGroup {
        value,
        complete: sol.existence_ok,
        eta: sol.eta,
        coeffs: coefficients_on_window(&params, &sol),
    })
}

/// Solves every setting (in parallel when enabled) and keeps the spec's value order.
pub fn run_sweep(spec: &SweepSpec, n_steps: usize) -> Result<SweepResult, SweepError> {
    spec.validate()?;
    let mesh = TimeMesh::for_params(&spec.base, n_steps)?;
    #[cfg(feature = "parallel")]
    let groups: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        spec.values
            .par_iter()
            .map(|&v| solve_group(spec, &mesh, v))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let groups: Result<Vec<_>, _> = spec
        .values
        .iter()
        .map(|&v| solve_group(spec, &mesh, v))
        .collect();
    Ok(SweepResult {
        parameter: spec.parameter,
        outputs: spec.outputs.clone(),
        groups: groups?,
    })
}

impl SweepResult {
    /// Rows ordered by parameter value, then requested coefficient, then time.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for g in &self.groups {
            let value = num(g.value);
            for &c in &self.outputs {
                let traj = g.coeffs.trajectory(c);
                for (i, v) in traj.iter().enumerate() {
                    out.push_str(&format!(
                        "{value},{},{},{}\n",
                        num(g.coeffs.mesh.node(i)),
                        c.name(),
                        num(*v)
                    ));
                }
            }
        }
        out
    }

    pub fn group(&self, value: f64) -> Option<&SweepGroup> {
        self.groups.iter().find(|g| g.value == value)
    }

    /// Largest pointwise difference of `c` between any group and the first.
    pub fn sup_diff(&self, c: Coefficient) -> f64 {
        let first = self.groups[0].coeffs.trajectory(c);
        self.groups
            .iter()
            .flat_map(|g| g.coeffs.trajectory(c).iter().zip(first).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    /// `max_v ‖c_v − c_first‖∞ / ‖c_first‖∞`.
    pub fn relative_spread(&self, c: Coefficient) -> f64 {
        let first = self.groups[0].coeffs.trajectory(c);
        let scale = first.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.sup_diff(c) / scale
    }

    /// Checks strict monotonicity of `c` in the swept value at every node
    /// except `t = T`, with groups taken in increasing parameter order.
    pub fn monotonicity(&self, c: Coefficient, direction: Direction) -> Monotonicity {
        let mut order: Vec<&SweepGroup> = self.groups.iter().collect();
        order.sort_by(|a, b| a.value.total_cmp(&b.value));
        let mut min_gap = f64::INFINITY;
        for pair in order.windows(2) {
            let lo = pair[0].coeffs.trajectory(c);
            let hi = pair[1].coeffs.trajectory(c);
            let interior = lo.len().saturating_sub(1);
            for i in 0..interior {
                let gap = match direction {
                    Direction::Increasing => hi[i] - lo[i],
                    Direction::Decreasing => lo[i] - hi[i],
                };
                min_gap = min_gap.min(if gap.is_nan() { f64::NEG_INFINITY } else { gap });
            }
        }
        Monotonicity {
            coefficient: c,
            direction,
            holds: min_gap > 0.0,
            min_gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Monotonicity {
    pub coefficient: Coefficient,
    pub direction: Direction,
    pub holds: bool,
    /// Smallest step in the claimed direction; positive iff strict.
    pub min_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub parameter_value: f64,
    pub t: f64,
    pub coefficient: Coefficient,
    pub value: f64,
}

fn parse_number(field: &str, line: usize, what: &str) -> Result<f64, SweepError> {
    field.trim().parse().map_err(|_| SweepError::Parse {
        line,
        message: format!("{what} '{field}' is not a number"),
    })
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>, SweepError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(SweepError::Parse {
                line: 1,
                message: format!("expected header '{CSV_HEADER}', found '{h}'"),
            })
        }
        None => {
            return Err(SweepError::Parse {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 4 {
            return Err(SweepError::Parse {
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let coefficient = Coefficient::parse(fields[2].trim()).ok_or_else(|| SweepError::Parse {
            line,
            message: format!("unknown coefficient '{}'", fields[2]),
        })?;
        records.push(SweepRecord {
            parameter_value: parse_number(fields[0], line, "parameter value")?,
            t: parse_number(fields[1], line, "time")?,
            coefficient,
            value: parse_number(fields[3], line, "coefficient value")?,
        });
    }
    Ok(records)
}

/// One SVG per coefficient found in the CSV, named `fig_<coefficient>_<param>.svg`,
/// in first-appearance order of the coefficients.
pub fn emit_plots(csv: &str, parameter: &str) -> Result<Vec<(String, String)>, SweepError> {
    let records = parse_sweep_csv(csv)?;
    let mut coeffs: Vec<Coefficient> = Vec::new();
    for r in &records {
        if !coeffs.contains(&r.coefficient) {
            coeffs.push(r.coefficient);
        }
    }
    let mut files = Vec::new();
    for c in coeffs {
        let mut series: Vec<Series> = Vec::new();
        for r in records.iter().filter(|r| r.coefficient == c) {
            let label = format!("{}", r.parameter_value);
            match series.iter_mut().find(|s| s.label == label) {
                Some(s) => s.points.push((r.t, r.value)),
                None => series.push(Series {
                    label,
                    points: vec![(r.t, r.value)],
                }),
            }
        }
        let title = format!("{} across {}", c.name(), parameter);
        let svg = line_chart(&title, "t", c.name(), parameter, &series);
        files.push((format!("fig_{}_{}.svg", c.name(), parameter), svg));
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(parameter: SweepParameter, values: Vec<f64>, outputs: Vec<Coefficient>) -> SweepSpec {
        SweepSpec {
            base: ModelParams::baseline(),
            parameter,
            values,
            outputs,
        }
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        let s = spec(SweepParameter::C0, vec![], vec![Coefficient::W0]);
        assert!(s.validate().is_err());
        let s = spec(SweepParameter::C0, vec![1.0, 1.0], vec![Coefficient::W0]);
        assert!(s.validate().is_err());
        let s = spec(SweepParameter::Delta, vec![-0.1], vec![Coefficient::W0]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn csv_layout_and_plots() {
        let s = spec(SweepParameter::C0, vec![1.0, 2.0], vec![Coefficient::WX, Coefficient::W0]);
        let r = run_sweep(&s, 20).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 2 * 21);
        assert!(csv.lines().nth(1).unwrap().starts_with("1.0000000000000000e0,0.0000000000000000e0,w_x,"));
        let recs = parse_sweep_csv(&csv).unwrap();
        assert_eq!(recs.len(), 84);
        let plots = emit_plots(&csv, "c0").unwrap();
        let names: Vec<&str> = plots.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["fig_w_x_c0.svg", "fig_w_0_c0.svg"]);
        assert_eq!(plots[0].1.matches("<polyline").count(), 2);
    }

    #[test]
    fn empty_selection_gives_no_plots() {
        let s = spec(SweepParameter::C0, vec![1.0], vec![]);
        let csv = run_sweep(&s, 20).unwrap().to_csv();
        assert!(emit_plots(&csv, "c0").unwrap().is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = format!("{CSV_HEADER}\n1,0,w_x,2\n1,0.5,w_x,oops\n");
        match parse_sweep_csv(&bad) {
            Err(SweepError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad = format!("{CSV_HEADER}\n1,0,nope,2\n");
        assert!(matches!(parse_sweep_csv(&bad), Err(SweepError::Parse { line: 2, .. })));
        assert!(matches!(parse_sweep_csv("a,b\n"), Err(SweepError::Parse { line: 1, .. })));
    }

    #[test]
    fn intercept_monotone_in_cost() {
        let s = spec(SweepParameter::C0, vec![2.0, 1.0, 1.5], vec![Coefficient::W0]);
        let r = run_sweep(&s, 50).unwrap();
        assert!(r.monotonicity(Coefficient::W0, Direction::Increasing).holds);
        assert!(!r.monotonicity(Coefficient::W0, Direction::Decreasing).holds);
    }
}
