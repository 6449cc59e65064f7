//! Phase-dependent outputs, references, costs and constraints of the
//! optimal control problem.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{HookModel, InputVector, StateVector, NQ, NU, NX};
use crate::error::{Error, Result};
use crate::phases::Phase;
use crate::solver::{
    ConstraintValue, CostModel, DiscreteDynamics, InputHessian, Linearization, OcpProblem, PathConstraints,
    SolverSettings, StageCost,
};

pub type Output = Vector4<f64>;
type OutputJacobian = SMatrix<f64, 4, NX>;

/// Pose of something carried by a ground platform: position and heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlatformPose {
    pub position: Vector3<f64>,
    pub yaw: f64,
}

impl PlatformPose {
    pub fn rotation(&self) -> Matrix3<f64> {
        crate::dynamics::rotation(0.0, 0.0, self.yaw)
    }
}

/// Predicted payload pose on the pick-up platform and target pose on the
/// drop-off platform for stages `k..=k+N`.
#[derive(Clone, Debug)]
pub struct HorizonReferences {
    pub pickup: Vec<PlatformPose>,
    pub dropoff: Vec<PlatformPose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub gamma: f64,
    pub position_weight: f64,
    pub yaw_weight: f64,
    /// Diagonal of the velocity weight.
    pub velocity_weight: [f64; NQ],
    /// Diagonal of the input weight, applied to the deviation from hover.
    pub input_weight: [f64; NU],
    pub z_bar: f64,
    pub a1: f64,
    pub a2: f64,
    pub rho_con: f64,
    pub r_con: [f64; 3],
    pub rho_con_detach: f64,
    pub x_bar: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            position_weight: 10.0,
            yaw_weight: 1.0,
            velocity_weight: [4.0, 4.0, 4.0, 0.1, 0.1, 0.1, 0.1, 0.1],
            input_weight: [0.1, 2.0, 2.0, 2.0],
            z_bar: 0.3,
            a1: 10.0,
            a2: 3.0,
            rho_con: 0.25,
            r_con: [0.0, 0.0, 0.1],
            rho_con_detach: 0.25,
            x_bar: 0.3,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("z_bar", self.z_bar),
            ("a1", self.a1),
            ("rho_con", self.rho_con),
            ("rho_con_detach", self.rho_con_detach),
            ("x_bar", self.x_bar),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("position_weight", self.position_weight), ("yaw_weight", self.yaw_weight), ("a2", self.a2)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.velocity_weight.iter().chain(self.input_weight.iter()).any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidArgument("velocity and input weights must be positive definite".into()));
        }
        Ok(())
    }

    pub fn output_weights(&self) -> Output {
        Output::new(self.position_weight, self.position_weight, self.position_weight, self.yaw_weight)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub state_lower: [f64; NX],
    pub state_upper: [f64; NX],
    pub input_lower: [f64; NU],
    pub input_upper: [f64; NU],
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let inf = f64::INFINITY;
        Self {
            state_lower: [
                -3.5, -2.5, 0.0, -1.2, -1.2, -inf, -1.2, -1.2, -3.0, -3.0, -3.0, -10.0, -10.0, -10.0, -10.0, -10.0,
            ],
            state_upper: [
                3.5, 2.5, 3.0, 1.2, 1.2, inf, 1.2, 1.2, 3.0, 3.0, 3.0, 10.0, 10.0, 10.0, 10.0, 10.0,
            ],
            input_lower: [0.0, -0.1, -0.1, -0.1],
            input_upper: [16.0, 0.1, 0.1, 0.1],
        }
    }
}

impl BoundsConfig {
    pub fn validate(&self) -> Result<()> {
        for i in 0..NX {
            if !(self.state_lower[i] < self.state_upper[i]) {
                return Err(Error::InvalidArgument(format!("state bound {i} is empty")));
            }
        }
        for i in 0..NU {
            if !(self.input_lower[i] <= self.input_upper[i]) {
                return Err(Error::InvalidArgument(format!("input bound {i} is empty")));
            }
        }
        Ok(())
    }

    /// Largest violation of the state box (`<= 0` when inside).
    pub fn state_violation(&self, x: &StateVector) -> f64 {
        (0..NX)
            .map(|i| (self.state_lower[i] - x[i]).max(x[i] - self.state_upper[i]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn smooth_l1(y: &Output, y_ref: &Output, w: &Output, gamma: f64) -> f64 {
    (0..4)
        .map(|j| {
            let e = y[j] - y_ref[j];
            w[j] * ((e * e + gamma * gamma).sqrt() - gamma)
        })
        .sum()
}

/// Height offset that keeps the payload above the target until it is
/// horizontally close.
pub fn z_safe(payload: &Vector3<f64>, target: &Vector3<f64>, z_bar: f64, a1: f64, a2: f64) -> f64 {
    let d = (payload - target).xy().norm();
    0.5 * z_bar * ((a1 * d - a2).tanh() + 1.0)
}

/// `rho - |r - center|`; non-positive outside the sphere.
pub fn sphere_constraint(r: &Vector3<f64>, center: &Vector3<f64>, rho: f64) -> f64 {
    rho - (r - center).norm()
}

pub fn pregrasp_constraint(hook: &Vector3<f64>, payload: &PlatformPose, model: &HookModel, r_con: &Vector3<f64>, rho_con: f64) -> f64 {
    sphere_constraint(hook, &pregrasp_center(payload, model, r_con), rho_con)
}

pub fn detach_constraint(payload: &Vector3<f64>, target: &Vector3<f64>, rho: f64) -> f64 {
    sphere_constraint(payload, target, rho)
}

fn pregrasp_center(payload: &PlatformPose, model: &HookModel, r_con: &Vector3<f64>) -> Vector3<f64> {
    payload_hook_of(payload, model) + payload.rotation() * r_con
}

fn payload_hook_of(payload: &PlatformPose, model: &HookModel) -> Vector3<f64> {
    crate::dynamics::payload_hook_position(&payload.position, &payload.rotation(), model.params.payload_hook_standoff)
}

/// Tracked output: hook (phases 1, 2, 5) or payload (phases 3, 4) position,
/// followed by the quad yaw.
pub fn phase_output(phase: Phase, model: &HookModel, x: &StateVector) -> Output {
    let p = tracked_point(phase, model, x);
    Output::new(p.x, p.y, p.z, x[5])
}

fn tracked_point(phase: Phase, model: &HookModel, x: &StateVector) -> Vector3<f64> {
    if phase.carries_payload() {
        model.carried_payload_position(x)
    } else {
        model.hook_position(x)
    }
}

/// Jacobian of the tracked point with respect to the state.
fn point_jacobian(phase: Phase, model: &HookModel, x: &StateVector) -> SMatrix<f64, 3, NX> {
    let mut j = SMatrix::<f64, 3, NX>::zeros();
    for i in 0..3 {
        j[(i, i)] = 1.0;
    }
    for c in 3..NQ {
        let h = crate::dynamics::fd_step(x[c]);
        let mut xp = *x;
        let mut xm = *x;
        xp[c] += h;
        xm[c] -= h;
        let d = (tracked_point(phase, model, &xp) - tracked_point(phase, model, &xm)) / (2.0 * h);
        j.set_column(c, &d);
    }
    j
}

/// Shifts `yaw` by whole turns so that it is within pi of `near`.
pub fn unwrap_near(yaw: f64, near: f64) -> f64 {
    yaw + 2.0 * PI * ((near - yaw) / (2.0 * PI)).round()
}

/// Output references for stages `0..N` of the horizon starting at step `k`.
///
/// `x0` is the measured state; it fixes the yaw branch and the transport
/// height offset.
pub fn phase_reference(
    phase: Phase,
    refs: &HorizonReferences,
    model: &HookModel,
    cfg: &CostConfig,
    x0: &StateVector,
    horizon: usize,
) -> Result<Vec<Output>> {
    if refs.pickup.len() < horizon + 1 || refs.dropoff.len() < horizon + 1 {
        return Err(Error::Dimension(format!(
            "references cover {} / {} stages, horizon needs {}",
            refs.pickup.len(),
            refs.dropoff.len(),
            horizon + 1
        )));
    }
    let raw: Vec<(Vector3<f64>, f64)> = match phase {
        Phase::Approach => {
            let p = &refs.pickup[0];
            vec![(payload_hook_of(p, model), p.yaw); horizon]
        }
        Phase::PickUp => refs.pickup[..horizon]
            .iter()
            .map(|p| (payload_hook_of(p, model), p.yaw))
            .collect(),
        Phase::Transport | Phase::Place => {
            let payload = model.carried_payload_position(x0);
            let lift = z_safe(&payload, &refs.dropoff[0].position, cfg.z_bar, cfg.a1, cfg.a2);
            refs.dropoff[..horizon]
                .iter()
                .map(|p| (p.position + Vector3::z() * lift, p.yaw))
                .collect()
        }
        Phase::Unhook => refs.dropoff[..horizon]
            .iter()
            .map(|p| (p.position + p.rotation() * Vector3::x() * cfg.x_bar, p.yaw))
            .collect(),
    };
    let mut prev = x0[5];
    Ok(raw
        .into_iter()
        .map(|(r, yaw)| {
            let y = unwrap_near(yaw, prev);
            prev = y;
            Output::new(r.x, r.y, r.z, y)
        })
        .collect())
}

/// Smooth-L1 tracking plus quadratic velocity and input penalties.
///
/// The quadratic model uses the curvature `w / sqrt(e^2 + gamma^2)` of the
/// tangent majorizer of each smooth-L1 term, which stays informative far
/// from the reference where the exact second derivative vanishes.
pub struct PhaseCost {
    pub model: Arc<HookModel>,
    pub phase: Phase,
    pub references: Vec<Output>,
    pub weights: Output,
    pub gamma: f64,
    pub velocity_weight: SVector<f64, NQ>,
    pub input_weight: InputVector,
    pub input_trim: InputVector,
}

impl PhaseCost {
    pub fn value(&self, stage: usize, x: &StateVector, u: &InputVector) -> f64 {
        let y = phase_output(self.phase, &self.model, x);
        let v = x.fixed_rows::<NQ>(NQ);
        let du = u - self.input_trim;
        smooth_l1(&y, &self.references[stage], &self.weights, self.gamma)
            + v.component_mul(&v).dot(&self.velocity_weight)
            + du.component_mul(&du).dot(&self.input_weight)
    }
}

impl StageCost for PhaseCost {
    fn model(&self, stage: usize, x: &StateVector, u: &InputVector) -> Result<CostModel> {
        let y = phase_output(self.phase, &self.model, x);
        let e = y - self.references[stage];
        let mut grad_y = Output::zeros();
        let mut curv = Output::zeros();
        for j in 0..4 {
            let r = (e[j] * e[j] + self.gamma * self.gamma).sqrt();
            grad_y[j] = self.weights[j] * e[j] / r;
            curv[j] = self.weights[j] / r;
        }
        let mut jy = OutputJacobian::zeros();
        jy.fixed_rows_mut::<3>(0).copy_from(&point_jacobian(self.phase, &self.model, x));
        jy[(3, 5)] = 1.0;

        let mut grad_x = jy.transpose() * grad_y;
        let mut hess_x = jy.transpose() * SMatrix::<f64, 4, 4>::from_diagonal(&curv) * jy;
        for i in 0..NQ {
            grad_x[NQ + i] += 2.0 * self.velocity_weight[i] * x[NQ + i];
            hess_x[(NQ + i, NQ + i)] += 2.0 * self.velocity_weight[i];
        }
        let du = u - self.input_trim;
        Ok(CostModel {
            value: self.value(stage, x, u),
            grad_x,
            grad_u: 2.0 * self.input_weight.component_mul(&du),
            hess_x,
            hess_u: InputHessian::from_diagonal(&(2.0 * self.input_weight)),
        })
    }
}

/// Keep-out sphere on the hook (approach) or on the payload (transport).
pub struct SphereConstraints {
    pub model: Arc<HookModel>,
    pub phase: Phase,
    pub centers: Vec<Vector3<f64>>,
    pub radius: f64,
}

impl SphereConstraints {
    pub fn value(&self, stage: usize, x: &StateVector) -> f64 {
        sphere_constraint(&tracked_point(self.phase, &self.model, x), &self.centers[stage], self.radius)
    }
}

impl PathConstraints for SphereConstraints {
    fn count(&self, stage: usize) -> usize {
        usize::from(stage < self.centers.len())
    }

    fn evaluate(&self, stage: usize, x: &StateVector) -> Result<Vec<ConstraintValue>> {
        let r = tracked_point(self.phase, &self.model, x);
        let diff = r - self.centers[stage];
        let dist = diff.norm();
        let dir = if dist > 1e-12 { diff / dist } else { Vector3::z() };
        let grad = -(point_jacobian(self.phase, &self.model, x).transpose() * dir);
        Ok(vec![ConstraintValue {
            value: self.radius - dist,
            grad,
        }])
    }
}

/// Nonlinear constraints active in `phase`, or `None` when there are none.
pub fn phase_constraints(
    phase: Phase,
    model: &Arc<HookModel>,
    refs: &HorizonReferences,
    cfg: &CostConfig,
    horizon: usize,
) -> Option<SphereConstraints> {
    let r_con = Vector3::from(cfg.r_con);
    let (centers, radius) = match phase {
        Phase::Approach => (
            refs.pickup[..=horizon].iter().map(|p| pregrasp_center(p, model, &r_con)).collect(),
            cfg.rho_con,
        ),
        Phase::Transport => (refs.dropoff[..=horizon].iter().map(|p| p.position).collect(), cfg.rho_con_detach),
        _ => return None,
    };
    Some(SphereConstraints {
        model: model.clone(),
        phase,
        centers,
        radius,
    })
}

/// Phase-scheduled predictive model with a fixed payload-mass estimate.
pub struct PredictiveDynamics {
    pub model: Arc<HookModel>,
    pub phase: Phase,
    pub payload_mass: f64,
    pub dt: f64,
}

impl DiscreteDynamics for PredictiveDynamics {
    fn step(&self, _stage: usize, x: &StateVector, u: &InputVector) -> Result<StateVector> {
        self.model.rk4(x, u, self.phase.payload_mass(self.payload_mass), self.dt)
    }

    fn linearize(&self, _stage: usize, x: &StateVector, u: &InputVector) -> Result<Linearization> {
        let next = self.model.rk4(x, u, self.phase.payload_mass(self.payload_mass), self.dt)?;
        let (a, b, param) = self.model.linearize(x, u, self.payload_mass, self.phase, self.dt)?;
        Ok(Linearization { next, a, b, param })
    }
}

/// Everything needed to set up the problem at one sampling instant.
pub struct OcpInputs<'a> {
    pub phase: Phase,
    pub x0: &'a StateVector,
    pub refs: &'a HorizonReferences,
    pub payload_mass: f64,
    pub horizon: usize,
    pub dt: f64,
}

pub fn assemble(
    model: &Arc<HookModel>,
    inputs: &OcpInputs,
    cost: &CostConfig,
    bounds: &BoundsConfig,
    settings: &SolverSettings,
) -> Result<OcpProblem> {
    if inputs.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let references = phase_reference(inputs.phase, inputs.refs, model, cost, inputs.x0, inputs.horizon)?;
    let stage_cost = PhaseCost {
        model: model.clone(),
        phase: inputs.phase,
        references,
        weights: cost.output_weights(),
        gamma: cost.gamma,
        velocity_weight: SVector::from(cost.velocity_weight),
        input_weight: InputVector::from(cost.input_weight),
        input_trim: model.hover_input(inputs.phase.payload_mass(inputs.payload_mass)),
    };
    let constraints: Arc<dyn PathConstraints> = match phase_constraints(inputs.phase, model, inputs.refs, cost, inputs.horizon) {
        Some(c) => Arc::new(c),
        None => Arc::new(crate::solver::Unconstrained),
    };
    Ok(OcpProblem {
        horizon: inputs.horizon,
        dynamics: Arc::new(PredictiveDynamics {
            model: model.clone(),
            phase: inputs.phase,
            payload_mass: inputs.payload_mass,
            dt: inputs.dt,
        }),
        cost: Arc::new(stage_cost),
        constraints,
        state_lower: StateVector::from(bounds.state_lower),
        state_upper: StateVector::from(bounds.state_upper),
        input_lower: InputVector::from(bounds.input_lower),
        input_upper: InputVector::from(bounds.input_upper),
        backoffs: None,
        settings: settings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelParams;

    fn model() -> Arc<HookModel> {
        Arc::new(HookModel::new(ModelParams::default()).unwrap())
    }

    fn refs(n: usize) -> HorizonReferences {
        let pose = PlatformPose {
            position: Vector3::new(1.0, 0.5, 0.3),
            yaw: 0.0,
        };
        HorizonReferences {
            pickup: vec![pose; n + 1],
            dropoff: vec![pose; n + 1],
        }
    }

    #[test]
    fn smooth_l1_values() {
        let w = Output::new(1.0, 0.0, 0.0, 0.0);
        let y = Output::new(1.0, 0.0, 0.0, 0.0);
        assert_eq!(smooth_l1(&y, &y, &Output::repeat(1.0), 0.1), 0.0);
        let v = smooth_l1(&y, &Output::zeros(), &w, 0.1);
        assert!((v - (1.01f64.sqrt() - 0.1)).abs() < 1e-15);
        let big = Output::new(1e4, 0.0, 0.0, 0.0);
        assert!((smooth_l1(&big, &Output::zeros(), &w, 0.1) / 1e4 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn z_safe_midpoint_and_limits() {
        let t = Vector3::zeros();
        let d = Vector3::new(0.3, 0.0, 5.0);
        assert!((z_safe(&d, &t, 0.3, 10.0, 3.0) - 0.15).abs() < 1e-15);
        let far = Vector3::new(1.3, 0.0, 0.0);
        assert!((z_safe(&far, &t, 0.3, 10.0, 3.0) - 0.3).abs() < 1e-6 * 0.3);
        let at = z_safe(&t, &t, 1.0, 10.0, 3.0);
        assert!((at - 0.5 * ((-3.0f64).tanh() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sphere_sign_convention() {
        let c = Vector3::new(1.0, 1.0, 1.0);
        assert_eq!(sphere_constraint(&c, &c, 0.25), 0.25);
        assert!(sphere_constraint(&(c + Vector3::new(0.25, 0.0, 0.0)), &c, 0.25).abs() < 1e-15);
        assert!((sphere_constraint(&(c + Vector3::new(0.0, 0.5, 0.0)), &c, 0.25) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn unhook_reference_is_offset_along_heading() {
        let m = model();
        let cfg = CostConfig::default();
        let r = phase_reference(Phase::Unhook, &refs(3), &m, &cfg, &StateVector::zeros(), 3).unwrap();
        assert!((r[0].xyz() - Vector3::new(1.3, 0.5, 0.3)).norm() < 1e-15);
    }

    #[test]
    fn phase_constraint_counts() {
        let m = model();
        let cfg = CostConfig::default();
        let c = phase_constraints(Phase::Approach, &m, &refs(4), &cfg, 4).unwrap();
        assert_eq!((0..=4).map(|i| c.count(i)).sum::<usize>(), 5);
        assert!(phase_constraints(Phase::PickUp, &m, &refs(4), &cfg, 4).is_none());
        assert!(phase_constraints(Phase::Place, &m, &refs(4), &cfg, 4).is_none());
        assert!(phase_constraints(Phase::Transport, &m, &refs(4), &cfg, 4).is_some());
    }

    #[test]
    fn yaw_unwrapping() {
        assert!((unwrap_near(3.0, -3.0) - (3.0 - 2.0 * PI)).abs() < 1e-15);
        assert_eq!(unwrap_near(0.5, 0.4), 0.5);
    }
}
