//! Ground platforms moving at constant speed along a paperclip path: two
//! straights joined by two semicircles, centered at the origin.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::PlatformPose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaperclipPath {
    /// Radius of the two end arcs (m).
    pub radius: f64,
    /// Length of each straight (m).
    pub straight: f64,
    /// Height of the payload center resting on a platform (m).
    pub height: f64,
}

impl Default for PaperclipPath {
    fn default() -> Self {
        Self {
            radius: 1.0,
            straight: 2.5,
            height: 0.3,
        }
    }
}

impl PaperclipPath {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.straight >= 0.0 && self.height.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid paperclip path {self:?}")));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        2.0 * self.straight + 2.0 * PI * self.radius
    }

    /// Pose at arc length `s` (wrapped), counter-clockwise starting at the
    /// left end of the lower straight.
    pub fn pose_at(&self, s: f64) -> PlatformPose {
        let (r, l) = (self.radius, self.straight);
        let half_arc = PI * r;
        let s = s.rem_euclid(self.length());
        let (x, y, yaw) = if s < l {
            (-0.5 * l + s, -r, 0.0)
        } else if s < l + half_arc {
            let phi = (s - l) / r - 0.5 * PI;
            (0.5 * l + r * phi.cos(), r * phi.sin(), phi + 0.5 * PI)
        } else if s < 2.0 * l + half_arc {
            (0.5 * l - (s - l - half_arc), r, PI)
        } else {
            let phi = (s - 2.0 * l - half_arc) / r + 0.5 * PI;
            (-0.5 * l + r * phi.cos(), r * phi.sin(), phi + 0.5 * PI)
        };
        PlatformPose {
            position: Vector3::new(x, y, self.height),
            yaw: wrap_angle(yaw),
        }
    }
}

/// Wraps to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlatformTrajectory {
    pub path: PaperclipPath,
    /// Start point as a fraction of the path length, in `[0, 1]`.
    pub phase: f64,
    pub speed: f64,
}

impl PlatformTrajectory {
    pub fn new(path: PaperclipPath, phase: f64, speed: f64) -> Result<Self> {
        path.validate()?;
        if !(0.0..=1.0).contains(&phase) {
            return Err(Error::InvalidArgument(format!("path phase must lie in [0, 1], got {phase}")));
        }
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(Error::InvalidArgument(format!("platform speed must be non-negative, got {speed}")));
        }
        Ok(Self { path, phase, speed })
    }

    pub fn pose(&self, t: f64) -> PlatformPose {
        self.path.pose_at(self.phase * self.path.length() + self.speed * t)
    }

    pub fn period(&self) -> f64 {
        self.path.length() / self.speed
    }
}
