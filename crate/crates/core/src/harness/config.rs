//! Experiment configuration and the shipped presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DysonError, Result};
use crate::groundstate::{ModelSpec, ScfOptions};
use crate::igmres::GmresOptions;
use crate::pwbasis::Vec3;
use crate::strategies::StrategySpec;

const TOY_METAL: &str = include_str!("../../configs/toy_metal.json");
const TOY_INSULATOR: &str = include_str!("../../configs/toy_insulator.json");
const TINY_METAL: &str = include_str!("../../configs/tiny_metal.json");
const TINY_INSULATOR: &str = include_str!("../../configs/tiny_insulator.json");

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 4] = ["toy_metal", "toy_insulator", "tiny_metal", "tiny_insulator"];

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

fn default_fd_step() -> f64 {
    1e-4
}

/// Displacement of one Gaussian well along a direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub gaussian: usize,
    pub direction: Vec3,
    /// Analytic centre derivative; central finite differences otherwise.
    #[serde(default = "default_true")]
    pub analytic: bool,
    /// Scales `δV₀`; zero gives a zero right-hand side.
    #[serde(default = "default_one")]
    pub amplitude: f64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_scf_tol() -> f64 {
    1e-10
}

fn default_scf_max_iter() -> usize {
    200
}

fn default_scf_damping() -> f64 {
    ScfOptions::default().damping
}

fn default_strategy() -> String {
    "pbal".into()
}

fn default_tau() -> f64 {
    1e-9
}

fn default_m() -> usize {
    10
}

fn default_kerker() -> f64 {
    0.8
}

fn default_verify_draws() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSpec,
    #[serde(default = "default_scf_tol")]
    pub scf_tol: f64,
    #[serde(default = "default_scf_max_iter")]
    pub scf_max_iter: usize,
    /// Kerker mixing during the SCF.
    #[serde(default)]
    pub scf_kerker_alpha: Option<f64>,
    #[serde(default = "default_scf_damping")]
    pub scf_damping: f64,
    /// Anderson history length during the SCF; 0 for plain mixing.
    #[serde(default)]
    pub scf_anderson_depth: usize,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Kerker parameter for preconditioned strategies.
    #[serde(default = "default_kerker")]
    pub kerker_alpha: f64,
    #[serde(default)]
    pub include_gap: bool,
    pub perturbation: PerturbationSpec,
    /// Recompute the true residual every this many iterations; 0 only at the end.
    #[serde(default)]
    pub true_residual_every: usize,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_verify_draws")]
    pub verify_draws: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "toy_metal" => TOY_METAL,
            "toy_insulator" => TOY_INSULATOR,
            "tiny_metal" => TINY_METAL,
            "tiny_insulator" => TINY_INSULATOR,
            _ => return Err(DysonError::Config(format!("unknown preset '{name}' (known: {})", PRESETS.join(", ")))),
        };
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON file, or a preset when `path` names one and no such file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            if let Some(name) = path.to_str().filter(|p| PRESETS.contains(p)) {
                return Self::preset(name);
            }
        }
        let text = fs::read_to_string(path)
            .map_err(|e| DysonError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let p = &self.perturbation;
        if p.gaussian >= self.model.gaussians.len() {
            return Err(DysonError::Config(format!(
                "perturbation gaussian index {} out of range ({} gaussians)",
                p.gaussian,
                self.model.gaussians.len()
            )));
        }
        if !p.amplitude.is_finite() || !(p.fd_step > 0.0) {
            return Err(DysonError::Config("perturbation amplitude must be finite and fd_step positive".into()));
        }
        if !(self.scf_damping > 0.0 && self.scf_damping <= 1.0) {
            return Err(DysonError::Config(format!("scf_damping must lie in (0, 1], got {}", self.scf_damping)));
        }
        if !(self.scf_tol > 0.0) || !(self.kerker_alpha > 0.0) {
            return Err(DysonError::Config("scf_tol and kerker_alpha must be positive".into()));
        }
        self.strategy_spec()?;
        Ok(())
    }

    pub fn scf_options(&self) -> ScfOptions {
        ScfOptions {
            tol: self.scf_tol,
            max_iter: self.scf_max_iter,
            kerker_alpha: self.scf_kerker_alpha,
            damping: self.scf_damping,
            anderson_depth: self.scf_anderson_depth,
        }
    }

    pub fn strategy_spec(&self) -> Result<StrategySpec> {
        self.strategy_named(&self.strategy)
    }

    pub fn strategy_named(&self, name: &str) -> Result<StrategySpec> {
        let mut spec = StrategySpec::parse(name, self.tau, self.m)?;
        spec.include_gap = self.include_gap;
        Ok(spec)
    }

    pub fn gmres_options(&self) -> GmresOptions {
        GmresOptions {
            max_iterations: self.max_iterations,
            monitor_every: self.true_residual_every,
            ..GmresOptions::new(self.m, self.tau)
        }
    }
}
