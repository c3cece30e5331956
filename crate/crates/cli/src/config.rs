//! JSON run configuration. Every key is optional and defaults to the reference
//! setup; unknown keys are rejected.

use std::path::{Path, PathBuf};

use pia_core::mc::{ExitDetection, McConfig};
use pia_core::problem::ExampleParams;
use pia_core::{Execution, PiaConfig, Rect, SweepScheme};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            x_min: 0.5,
            x_max: 2.0,
            y_min: 0.5,
            y_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McBlock {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub max_time: f64,
    pub probes: Vec<[f64; 2]>,
    /// Inner tolerance of the FDM solves the estimates are compared with.
    pub reference_tol: f64,
    pub exit_detection: String,
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-4,
            seed: 1,
            max_time: 500.0,
            probes: vec![[1.25, 1.25]],
            reference_tol: 1e-11,
            exit_detection: "brownian_bridge".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sigma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub domain: DomainConfig,
    /// Nodes per axis, boundary included.
    pub nodes: usize,
    pub tol1: f64,
    pub tol2: f64,
    pub max_pia_steps: usize,
    pub max_sweeps: usize,
    pub scheme: String,
    pub parallel: bool,
    /// Defaults to `tol1`.
    pub noise_floor: Option<f64>,
    pub out: Option<PathBuf>,
    pub mc: Option<McBlock>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            eta: 0.2,
            alpha: 0.03,
            domain: DomainConfig::default(),
            nodes: 101,
            tol1: 1e-5,
            tol2: 1e-3,
            max_pia_steps: 50,
            max_sweeps: 1_000_000,
            scheme: "gauss_seidel".into(),
            parallel: true,
            noise_floor: None,
            out: None,
            mc: None,
        }
    }
}

fn positive(name: &str, value: f64) -> Result<(), CliError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive (got {value})")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, value) in [
            ("sigma", self.sigma),
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("tol1", self.tol1),
            ("tol2", self.tol2),
        ] {
            positive(name, value)?;
        }
        if let Some(floor) = self.noise_floor {
            positive("noise_floor", floor)?;
        }
        let d = self.domain;
        if !(d.x_min < d.x_max && d.y_min < d.y_max) {
            return Err(CliError::Config(
                "domain must satisfy x_min < x_max and y_min < y_max".into(),
            ));
        }
        if !(d.x_min > 0.0 && d.y_min > 0.0) {
            return Err(CliError::Config(
                "domain must lie in the open positive quadrant (x_min, y_min > 0)".into(),
            ));
        }
        if self.nodes < 3 {
            return Err(CliError::Config(format!(
                "nodes must be at least 3 (got {})",
                self.nodes
            )));
        }
        if self.max_pia_steps == 0 {
            return Err(CliError::Config("max_pia_steps must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(CliError::Config("max_sweeps must be positive".into()));
        }
        self.sweep_scheme()?;
        if let Some(mc) = &self.mc {
            if mc.n_paths == 0 {
                return Err(CliError::Config("mc.n_paths must be positive".into()));
            }
            positive("mc.dt", mc.dt)?;
            positive("mc.max_time", mc.max_time)?;
            positive("mc.reference_tol", mc.reference_tol)?;
            self.exit_detection()?;
            let rect = self.rect()?;
            for &[x, y] in &mc.probes {
                if !rect.contains(x, y) {
                    return Err(CliError::Config(format!(
                        "mc.probes: ({x}, {y}) lies outside the domain"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sweep_scheme(&self) -> Result<SweepScheme, CliError> {
        self.scheme
            .parse()
            .map_err(|_| CliError::Config(format!(
                "scheme must be gauss_seidel or jacobi (got {:?})",
                self.scheme
            )))
    }

    fn exit_detection(&self) -> Result<ExitDetection, CliError> {
        let name = self.mc.as_ref().map_or("brownian_bridge", |m| m.exit_detection.as_str());
        name.parse().map_err(|_| {
            CliError::Config(format!(
                "mc.exit_detection must be brownian_bridge or step_endpoint (got {name:?})"
            ))
        })
    }

    pub fn rect(&self) -> Result<Rect, CliError> {
        let d = self.domain;
        Rect::new(d.x_min, d.x_max, d.y_min, d.y_max).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn example_params(&self) -> Result<ExampleParams, CliError> {
        Ok(ExampleParams {
            sigma: self.sigma,
            eta: self.eta,
            alpha: self.alpha,
            domain: self.rect()?,
        })
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn pia_config(&self) -> Result<PiaConfig, CliError> {
        Ok(PiaConfig {
            tol1: self.tol1,
            tol2: self.tol2,
            max_pia_steps: self.max_pia_steps,
            scheme: self.sweep_scheme()?,
            max_sweeps: self.max_sweeps,
            exec: self.execution(),
        })
    }

    pub fn mc_config(&self) -> Result<(McConfig, &McBlock), CliError> {
        let block = self
            .mc
            .as_ref()
            .ok_or_else(|| CliError::Config("validate needs an \"mc\" block".into()))?;
        Ok((
            McConfig {
                n_paths: block.n_paths,
                dt: block.dt,
                seed: block.seed,
                max_time: block.max_time,
                exit_detection: self.exit_detection()?,
            },
            block,
        ))
    }
}
