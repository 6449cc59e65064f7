//! Scenario parameters of a single closed-loop run.

use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phases::TimeWindows;

/// Maps the scalar `p_xy` in `[0, 1]` onto the left and bottom edges of the
/// flight space at 1 m height.
pub fn initial_position(p_xy: f64) -> Result<Vector3<f64>> {
    if !(0.0..=1.0).contains(&p_xy) {
        return Err(Error::InvalidArgument(format!("p_xy must lie in [0, 1], got {p_xy}")));
    }
    let (x, y) = if p_xy <= 0.5 {
        (-3.5, 2.5 - 10.0 * p_xy)
    } else {
        (-3.5 + 14.0 * (p_xy - 0.5), -2.5)
    };
    Ok(Vector3::new(x, y, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    /// Boundary position parameter; ignored when `x0` and `y0` are given.
    #[serde(default)]
    pub p_xy: Option<f64>,
    #[serde(default)]
    pub x0: Option<f64>,
    #[serde(default)]
    pub y0: Option<f64>,
    #[serde(default = "default_z0")]
    pub z0: f64,
    /// Pick-up platform start (fraction of the path) and speed (m/s).
    pub s_g: f64,
    pub v_g: f64,
    /// Drop-off platform start and speed; default to half a lap ahead of
    /// the pick-up platform at the same speed.
    #[serde(default)]
    pub s_p: Option<f64>,
    #[serde(default)]
    pub v_p: Option<f64>,
    /// Nominal payload mass (kg), known to the controller.
    pub payload_mass: f64,
    /// Relative deviation of the true mass from the nominal one.
    #[serde(default)]
    pub mass_deviation: f64,
    /// Initial estimate of the adaptive controller; defaults to the nominal mass.
    #[serde(default)]
    pub initial_mass_estimate: Option<f64>,
    pub windows: TimeWindows,
    #[serde(default)]
    pub seed: u64,
    /// Start in transport with the payload already hooked.
    #[serde(default)]
    pub start_attached: bool,
}

fn default_z0() -> f64 {
    1.0
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        self.start_position()?;
        for (name, s) in [("s_g", self.s_g), ("s_p", self.drop_phase())] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {s}")));
            }
        }
        for (name, v) in [("v_g", self.v_g), ("v_p", self.drop_speed())] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.payload_mass >= 0.0) || !(self.true_mass() >= 0.0) {
            return Err(Error::InvalidArgument("payload masses must be non-negative".into()));
        }
        if let Some(m) = self.initial_mass_estimate {
            if !(m >= 0.0) {
                return Err(Error::InvalidArgument("initial mass estimate must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn start_position(&self) -> Result<Vector3<f64>> {
        match (self.x0, self.y0, self.p_xy) {
            (Some(x), Some(y), _) => Ok(Vector3::new(x, y, self.z0)),
            (None, None, Some(p)) => {
                let mut r = initial_position(p)?;
                r.z = self.z0;
                Ok(r)
            }
            _ => Err(Error::InvalidArgument("scenario needs either x0 and y0 or p_xy".into())),
        }
    }

    pub fn drop_phase(&self) -> f64 {
        self.s_p.unwrap_or_else(|| (self.s_g + 0.5) % 1.0)
    }

    pub fn drop_speed(&self) -> f64 {
        self.v_p.unwrap_or(self.v_g)
    }

    pub fn true_mass(&self) -> f64 {
        self.payload_mass * (1.0 + self.mass_deviation)
    }

    pub fn initial_estimate(&self) -> f64 {
        self.initial_mass_estimate.unwrap_or(self.payload_mass)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Box of scenario parameters sampled in studies and searches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioBounds {
    pub p_xy: [f64; 2],
    pub s: [f64; 2],
    pub v: [f64; 2],
    pub mass: [f64; 2],
}

impl Default for ScenarioBounds {
    fn default() -> Self {
        Self {
            p_xy: [0.0, 1.0],
            s: [0.0, 1.0],
            v: [0.4, 0.6],
            mass: [0.05, 0.2],
        }
    }
}

impl ScenarioBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("p_xy", self.p_xy), ("s", self.s), ("v", self.v), ("mass", self.mass)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!("empty scenario range {name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 4] {
        let mut draw = |[lo, hi]: [f64; 2]| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        [draw(self.p_xy), draw(self.s), draw(self.v), draw(self.mass)]
    }
}

/// Scenario with both platforms sharing the speed, the drop-off platform
/// half a lap ahead.
pub fn scenario_from_params(params: [f64; 4], windows: TimeWindows, seed: u64) -> Scenario {
    let [p_xy, s, v, mass] = params;
    Scenario {
        name: None,
        p_xy: Some(p_xy),
        x0: None,
        y0: None,
        z0: 1.0,
        s_g: s,
        v_g: v,
        s_p: None,
        v_p: None,
        payload_mass: mass,
        mass_deviation: 0.0,
        initial_mass_estimate: None,
        windows,
        seed,
        start_attached: false,
    }
}
