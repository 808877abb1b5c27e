//! JSON run configuration and flag overrides.

use std::path::{Path, PathBuf};

use mlsg_core::riccati::DEFAULT_STEPS;
use mlsg_core::sim::{SimConfig, DEFAULT_FACTORS};
use mlsg_core::strategies::Coefficient;
use mlsg_core::sweep::SweepParameter;
use mlsg_core::ModelParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n_steps: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            n_steps: DEFAULT_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub outputs: Vec<Coefficient>,
}

/// A `(t, x)` point at which `solve` reports both value functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    pub hamnash_points: usize,
    pub hamnash_starts: usize,
    pub hamnash_seed: u64,
    /// HJB residual grid: `hjb_t_points` times on `[0, T]`, `hjb_x_points`
    /// goodwill values on `[0, hjb_x_max]`.
    pub hjb_t_points: usize,
    pub hjb_x_points: usize,
    pub hjb_x_max: f64,
    pub factors: Vec<f64>,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            hamnash_points: 100,
            hamnash_starts: 5,
            hamnash_seed: 2024,
            hjb_t_points: 101,
            hjb_x_points: 101,
            hjb_x_max: 10.0,
            factors: DEFAULT_FACTORS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ModelParams::baseline")]
    pub model: ModelParams,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub verify: Option<VerifyBlock>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub probes: Option<Vec<Probe>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::baseline(),
            mesh: MeshConfig::default(),
            sim: None,
            sweep: None,
            verify: None,
            output_dir: None,
            probes: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub mesh_steps: Option<usize>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(out) = &overrides.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(n) = overrides.mesh_steps {
            cfg.mesh.n_steps = n;
        }
        if let Some(sim) = cfg.sim.as_mut() {
            if let Some(seed) = overrides.seed {
                sim.seed = seed;
            }
            if let Some(n) = overrides.paths {
                sim.n_paths = n;
            }
        }
        cfg.model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(sim) = &cfg.sim {
            sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Output directory, created if absent; a config without one is rejected.
    pub fn output_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.output_dir.clone().ok_or_else(|| {
            CliError::Config("no output directory: set output_dir or pass --out".into())
        })?;
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn probes(&self) -> Vec<Probe> {
        match &self.probes {
            Some(p) => p.clone(),
            None => {
                let t_max = self.model.horizon;
                [0.0, 0.5 * t_max, t_max]
                    .into_iter()
                    .flat_map(|t| [0.0, 1.0, 5.0, 10.0].into_iter().map(move |x| Probe { t, x }))
                    .collect()
            }
        }
    }
}
