//! Controller and simulation configuration, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::estimator::EkfConfig;
use crate::ocp::{BoundsConfig, CostConfig};
use crate::sim::platform::PaperclipPath;
use crate::solver::SolverSettings;
use crate::zoro::UncertaintyConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    /// Sampling time of the controller and the predictive model (s).
    pub dt: f64,
    pub horizon: usize,
    /// RK4 substeps of the plant per sampling interval.
    pub plant_substeps: usize,
    pub t_max: f64,
    /// Time simulated after the drop-off before the run stops (s).
    pub settle_time: f64,
    /// Drop-off distance threshold (m).
    pub eps_p: f64,
    /// Scales the sampled disturbance; values in `[0, 1]` stay inside the bound.
    pub disturbance_level: f64,
    /// Probability of sampling a disturbance on the bound's boundary.
    pub boundary_probability: f64,
    pub path: PaperclipPath,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: 0.05,
            horizon: 25,
            plant_substeps: 5,
            t_max: 40.0,
            settle_time: 1.0,
            eps_p: 0.01,
            disturbance_level: 1.0,
            boundary_probability: 0.1,
            path: PaperclipPath::default(),
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.horizon == 0 || self.plant_substeps == 0 {
            return Err(Error::InvalidArgument("dt, horizon and plant_substeps must be positive".into()));
        }
        if !(self.t_max > 0.0 && self.settle_time >= 0.0 && self.eps_p > 0.0) {
            return Err(Error::InvalidArgument("t_max and eps_p must be positive".into()));
        }
        if !(self.disturbance_level >= 0.0) || !(0.0..=1.0).contains(&self.boundary_probability) {
            return Err(Error::InvalidArgument("invalid disturbance settings".into()));
        }
        self.path.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub model: ModelParams,
    pub cost: CostConfig,
    pub bounds: BoundsConfig,
    pub solver: SolverSettings,
    pub uncertainty: UncertaintyConfig,
    pub ekf: EkfConfig,
    pub sim: SimSettings,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.cost.validate()?;
        self.bounds.validate()?;
        self.uncertainty.validate()?;
        self.ekf.validate()?;
        self.sim.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
