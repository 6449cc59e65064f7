//! Five-phase task machine: approach, pick up, transport, place, unhook.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Approach = 1,
    PickUp = 2,
    Transport = 3,
    Place = 4,
    Unhook = 5,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Approach,
        Phase::PickUp,
        Phase::Transport,
        Phase::Place,
        Phase::Unhook,
    ];

    pub fn from_index(p: u8) -> Result<Self> {
        match p {
            1 => Ok(Phase::Approach),
            2 => Ok(Phase::PickUp),
            3 => Ok(Phase::Transport),
            4 => Ok(Phase::Place),
            5 => Ok(Phase::Unhook),
            _ => Err(Error::InvalidArgument(format!("unknown phase {p}"))),
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    /// True in the phases where the predictive model carries the payload.
    pub fn carries_payload(self) -> bool {
        matches!(self, Phase::Transport | Phase::Place)
    }

    /// Payload mass seen by the predictive model in this phase.
    pub fn payload_mass(self, mass: f64) -> f64 {
        if self.carries_payload() {
            mass
        } else {
            0.0
        }
    }

    pub fn next(self) -> Option<Phase> {
        match self {
            Phase::Approach => Some(Phase::PickUp),
            Phase::PickUp => Some(Phase::Transport),
            Phase::Transport => Some(Phase::Place),
            Phase::Place => Some(Phase::Unhook),
            Phase::Unhook => None,
        }
    }
}

/// Grasp and placement scheduling windows in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindows {
    pub grasp_open: f64,
    pub grasp_close: f64,
    pub place_open: f64,
    pub place_close: f64,
}

impl TimeWindows {
    pub fn new(grasp_open: f64, grasp_close: f64, place_open: f64, place_close: f64) -> Result<Self> {
        let w = Self {
            grasp_open,
            grasp_close,
            place_open,
            place_close,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.grasp_open, self.grasp_close, self.place_open, self.place_close];
        if all.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidArgument(format!("time windows must be finite and non-negative: {self:?}")));
        }
        if self.grasp_open >= self.grasp_close {
            return Err(Error::InvalidArgument(format!(
                "grasp window is empty: [{}, {}]",
                self.grasp_open, self.grasp_close
            )));
        }
        if self.place_open >= self.place_close {
            return Err(Error::InvalidArgument(format!(
                "placement window is empty: [{}, {}]",
                self.place_open, self.place_close
            )));
        }
        if self.grasp_close > self.place_open {
            log::debug!(
                "placement window opens at {} s before the grasp window closes at {} s",
                self.place_open,
                self.grasp_close
            );
        }
        Ok(())
    }

    /// First step of the grasp window, rounded to the nearest step.
    pub fn grasp_open_step(&self, dt: f64) -> u64 {
        (self.grasp_open / dt).round() as u64
    }

    pub fn place_open_step(&self, dt: f64) -> u64 {
        (self.place_open / dt).round() as u64
    }
}

/// Current phase and the step at which it was entered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: Phase,
    pub entered_at_step: u64,
}

impl PhaseState {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            entered_at_step: 0,
        }
    }
}

impl Default for PhaseState {
    fn default() -> Self {
        Self::new(Phase::Approach)
    }
}

pub fn grasp_condition(hook: &Vector3<f64>, payload_hook: &Vector3<f64>, rho_h: f64) -> bool {
    (hook - payload_hook).norm() <= rho_h
}

pub fn dropoff_condition(payload: &Vector3<f64>, platform: &Vector3<f64>, eps_p: f64) -> bool {
    (payload - platform).norm() <= eps_p
}

/// Geometric quantities the transition predicates look at.
#[derive(Clone, Copy, Debug)]
pub struct TransitionInputs {
    pub hook: Vector3<f64>,
    pub payload_hook: Vector3<f64>,
    pub payload: Vector3<f64>,
    pub drop_platform: Vector3<f64>,
    pub rho_h: f64,
    pub eps_p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub state: PhaseState,
    /// Set when the grasp or drop-off deadline has passed without the event.
    pub deadline_missed: bool,
}

/// Evaluates the transition predicates at step `k`. At most one edge fires
/// per call.
pub fn advance(
    current: PhaseState,
    k: u64,
    dt: f64,
    inputs: &TransitionInputs,
    windows: &TimeWindows,
) -> Transition {
    let t = k as f64 * dt;
    let fire = |phase| PhaseState {
        phase,
        entered_at_step: k,
    };
    let next = match current.phase {
        Phase::Approach if k >= windows.grasp_open_step(dt) => Some(fire(Phase::PickUp)),
        Phase::PickUp
            if t <= windows.grasp_close
                && grasp_condition(&inputs.hook, &inputs.payload_hook, inputs.rho_h) =>
        {
            Some(fire(Phase::Transport))
        }
        Phase::Transport if k >= windows.place_open_step(dt) => Some(fire(Phase::Place)),
        Phase::Place
            if t <= windows.place_close
                && dropoff_condition(&inputs.payload, &inputs.drop_platform, inputs.eps_p) =>
        {
            Some(fire(Phase::Unhook))
        }
        _ => None,
    };
    let state = next.unwrap_or(current);
    let deadline_missed = match state.phase {
        Phase::Approach | Phase::PickUp => t > windows.grasp_close,
        Phase::Transport | Phase::Place => t > windows.place_close,
        Phase::Unhook => false,
    };
    Transition {
        state,
        deadline_missed,
    }
}
