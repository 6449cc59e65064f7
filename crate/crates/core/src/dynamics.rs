//! Quadrotor with a passive two-joint pole and a lumped hook/payload mass.
//!
//! Generalized coordinates are `q = [x, y, z, roll, pitch, yaw, alpha, beta]`
//! (world position of the quad center, ZYX Euler angles, pole joint angles
//! about the body x and y axes) and the state is `[q; q_dot]`. The pole is a
//! massless rod pivoting at the quad center; hook mass plus payload mass sit
//! at its tip. Equations of motion come from projecting Newton-Euler terms
//! through the tip and attitude Jacobians (Kane's method), which gives the
//! same result as the Lagrangian without symbolic differentiation.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::phases::Phase;

pub const NQ: usize = 8;
pub const NX: usize = 16;
pub const NU: usize = 4;

pub type StateVector = SVector<f64, NX>;
pub type InputVector = SVector<f64, NU>;
pub type StateMatrix = SMatrix<f64, NX, NX>;
pub type InputMatrix = SMatrix<f64, NX, NU>;
type Coords = SVector<f64, NQ>;

/// Configuration and velocities of the plant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralizedState {
    pub q: Coords,
    pub v: Coords,
}

impl GeneralizedState {
    pub fn zero() -> Self {
        Self {
            q: Coords::zeros(),
            v: Coords::zeros(),
        }
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            q: x.fixed_rows::<NQ>(0).into_owned(),
            v: x.fixed_rows::<NQ>(NQ).into_owned(),
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<NQ>(0).copy_from(&self.q);
        x.fixed_rows_mut::<NQ>(NQ).copy_from(&self.v);
        x
    }

    pub fn at_position(position: Vector3<f64>, yaw: f64) -> Self {
        let mut s = Self::zero();
        s.q.fixed_rows_mut::<3>(0).copy_from(&position);
        s.q[5] = yaw;
        s
    }

    pub fn position(&self) -> Vector3<f64> {
        self.q.fixed_rows::<3>(0).into_owned()
    }

    pub fn yaw(&self) -> f64 {
        self.q[5]
    }
}

/// Collective thrust along the body z axis and body torques.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlInput {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl ControlInput {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }

    pub fn from_vector(u: &InputVector) -> Self {
        Self {
            thrust: u[0],
            torque: Vector3::new(u[1], u[2], u[3]),
        }
    }

    pub fn to_vector(&self) -> InputVector {
        InputVector::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }
}

/// Physical parameters of the quad, pole and payload hook.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Quadrotor mass (kg).
    pub quad_mass: f64,
    /// Diagonal of the body inertia (kg m^2).
    pub inertia: [f64; 3],
    /// Distance from the pivot to the lumped tip mass (m).
    pub pole_length: f64,
    /// Hook point distance beyond the tip mass along the pole (m).
    pub hook_offset: f64,
    /// Mass of hook and pole lumped at the tip (kg).
    pub hook_mass: f64,
    /// Height of the payload hook above the payload center (m).
    pub payload_hook_standoff: f64,
    /// Capture radius of the payload hook (m).
    pub payload_hook_radius: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Viscous damping of both pole joints (N m s).
    pub joint_damping: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            quad_mass: 0.605,
            inertia: [2.5e-3, 2.5e-3, 4.5e-3],
            pole_length: 0.4,
            hook_offset: 0.0,
            hook_mass: 0.05,
            payload_hook_standoff: 0.05,
            payload_hook_radius: 0.03,
            gravity: 9.81,
            joint_damping: 2e-3,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("quad_mass", self.quad_mass),
            ("inertia[0]", self.inertia[0]),
            ("inertia[1]", self.inertia[1]),
            ("inertia[2]", self.inertia[2]),
            ("pole_length", self.pole_length),
            ("hook_mass", self.hook_mass),
            ("payload_hook_radius", self.payload_hook_radius),
            ("gravity", self.gravity),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "model parameter {name} must be positive, got {value}"
                )));
            }
        }
        let non_negative = [
            ("hook_offset", self.hook_offset),
            ("payload_hook_standoff", self.payload_hook_standoff),
            ("joint_damping", self.joint_damping),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "model parameter {name} must be non-negative, got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }
}

/// Uncertain parameter vector. Entry 0 is the payload mass (kg).
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainParams {
    pub theta: nalgebra::DVector<f64>,
}

impl UncertainParams {
    pub fn payload_mass(mass: f64) -> Self {
        Self {
            theta: nalgebra::DVector::from_element(1, mass),
        }
    }

    pub fn new(theta: nalgebra::DVector<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidArgument("uncertain parameter vector is empty".into()));
        }
        if theta[0] < 0.0 {
            return Err(Error::InvalidArgument("payload mass must be non-negative".into()));
        }
        Ok(Self { theta })
    }

    pub fn mass(&self) -> f64 {
        self.theta[0]
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// ZYX rotation `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Maps Euler angle rates to body angular velocity.
fn euler_rate_matrix(sr: f64, cr: f64, sp: f64, cp: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, -sp, 0.0, cr, sr * cp, 0.0, -sr, cr * cp)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Pole direction in the body frame scaled by `length`.
fn pole_vector(alpha: f64, beta: f64, length: f64) -> Vector3<f64> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    length * Vector3::new(-sb, sa * cb, -ca * cb)
}

struct Kinematics {
    rot: Matrix3<f64>,
    e: Matrix3<f64>,
    omega: Vector3<f64>,
    edot_rates: Vector3<f64>,
    /// Columns 3..8 of the tip Jacobian (attitude and pole joints).
    tip_jac: SMatrix<f64, 3, 5>,
    /// Tip acceleration at zero generalized acceleration.
    tip_bias: Vector3<f64>,
    tip_offset: Vector3<f64>,
}

/// The plant and predictive model.
#[derive(Clone, Debug)]
pub struct HookModel {
    pub params: ModelParams,
    inertia: Matrix3<f64>,
}

impl HookModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let inertia = Matrix3::from_diagonal(&Vector3::from(params.inertia));
        Ok(Self { params, inertia })
    }

    pub fn tip_mass(&self, payload_mass: f64) -> f64 {
        self.params.hook_mass + payload_mass
    }

    /// Thrust that balances gravity for the given payload.
    pub fn hover_input(&self, payload_mass: f64) -> InputVector {
        let total = self.params.quad_mass + self.tip_mass(payload_mass);
        InputVector::new(total * self.params.gravity, 0.0, 0.0, 0.0)
    }

    fn kinematics(&self, x: &StateVector) -> Kinematics {
        let (sr, cr) = x[3].sin_cos();
        let (sp, cp) = x[4].sin_cos();
        let rot = rotation(x[3], x[4], x[5]);
        let e = euler_rate_matrix(sr, cr, sp, cp);
        let (rd, pd, yd) = (x[11], x[12], x[13]);
        let omega = e * Vector3::new(rd, pd, yd);
        let edot_rates = Vector3::new(
            -cp * pd * yd,
            -sr * rd * pd + (cr * cp * rd - sr * sp * pd) * yd,
            -cr * rd * pd + (-sr * cp * rd - cr * sp * pd) * yd,
        );

        let l = self.params.pole_length;
        let (sa, ca) = x[6].sin_cos();
        let (sb, cb) = x[7].sin_cos();
        let s = l * Vector3::new(-sb, sa * cb, -ca * cb);
        let s_a = l * Vector3::new(0.0, ca * cb, sa * cb);
        let s_b = l * Vector3::new(-cb, -sa * sb, ca * sb);
        let s_aa = l * Vector3::new(0.0, -sa * cb, ca * cb);
        let s_ab = l * Vector3::new(0.0, -ca * sb, -sa * sb);
        let s_bb = l * Vector3::new(sb, -sa * cb, ca * cb);
        let (ad, bd) = (x[14], x[15]);
        let s_dot = s_a * ad + s_b * bd;
        let s_ddot = s_aa * (ad * ad) + s_ab * (2.0 * ad * bd) + s_bb * (bd * bd);

        let j_rot = -(rot * skew(&s) * e);
        let mut tip_jac = SMatrix::<f64, 3, 5>::zeros();
        tip_jac.fixed_columns_mut::<3>(0).copy_from(&j_rot);
        tip_jac.set_column(3, &(rot * s_a));
        tip_jac.set_column(4, &(rot * s_b));
        let tip_bias = rot
            * (edot_rates.cross(&s)
                + omega.cross(&omega.cross(&s))
                + 2.0 * omega.cross(&s_dot)
                + s_ddot);
        Kinematics {
            rot,
            e,
            omega,
            edot_rates,
            tip_jac,
            tip_bias,
            tip_offset: rot * s,
        }
    }

    fn mass_matrix(&self, kin: &Kinematics, tip_mass: f64) -> SMatrix<f64, NQ, NQ> {
        let mut m = SMatrix::<f64, NQ, NQ>::zeros();
        let total = self.params.quad_mass + tip_mass;
        for i in 0..3 {
            m[(i, i)] = total;
        }
        let coupling = kin.tip_jac * tip_mass;
        m.fixed_view_mut::<3, 5>(0, 3).copy_from(&coupling);
        m.fixed_view_mut::<5, 3>(3, 0).copy_from(&coupling.transpose());
        let lower = kin.tip_jac.transpose() * kin.tip_jac * tip_mass;
        m.fixed_view_mut::<5, 5>(3, 3).copy_from(&lower);
        let rot_inertia = kin.e.transpose() * self.inertia * kin.e;
        let mut block = m.fixed_view_mut::<3, 3>(3, 3);
        block += rot_inertia;
        m
    }

    fn accelerations(&self, x: &StateVector, u: &InputVector, tip_mass: f64) -> Option<Coords> {
        let p = &self.params;
        let kin = self.kinematics(x);
        let m = self.mass_matrix(&kin, tip_mass);
        let e3 = Vector3::z();
        let g = p.gravity;

        let mut rhs = Coords::zeros();
        let translational = kin.rot * e3 * u[0]
            - (p.quad_mass + tip_mass) * g * e3
            - tip_mass * kin.tip_bias;
        rhs.fixed_rows_mut::<3>(0).copy_from(&translational);
        let tip_force = -tip_mass * (g * e3 + kin.tip_bias);
        let mut rest = kin.tip_jac.transpose() * tip_force;
        let torque = Vector3::new(u[1], u[2], u[3]);
        let body = kin.e.transpose()
            * (torque
                - self.inertia * kin.edot_rates
                - kin.omega.cross(&(self.inertia * kin.omega)));
        rest[0] += body.x;
        rest[1] += body.y;
        rest[2] += body.z;
        rest[3] -= p.joint_damping * x[14];
        rest[4] -= p.joint_damping * x[15];
        rhs.fixed_rows_mut::<5>(3).copy_from(&rest);

        m.cholesky().map(|c| c.solve(&rhs))
    }

    /// Time derivative of the state for a given payload mass at the tip.
    pub fn derivative(&self, x: &StateVector, u: &InputVector, payload_mass: f64) -> Result<StateVector> {
        let acc = self
            .accelerations(x, u, self.tip_mass(payload_mass))
            .ok_or(Error::Singular("mass matrix"))?;
        let mut dx = StateVector::zeros();
        dx.fixed_rows_mut::<NQ>(0).copy_from(&x.fixed_rows::<NQ>(NQ));
        dx.fixed_rows_mut::<NQ>(NQ).copy_from(&acc);
        Ok(dx)
    }

    /// One classical RK4 step of length `dt`.
    pub fn rk4(&self, x: &StateVector, u: &InputVector, payload_mass: f64, dt: f64) -> Result<StateVector> {
        let k1 = self.derivative(x, u, payload_mass)?;
        let k2 = self.derivative(&(x + k1 * (0.5 * dt)), u, payload_mass)?;
        let k3 = self.derivative(&(x + k2 * (0.5 * dt)), u, payload_mass)?;
        let k4 = self.derivative(&(x + k3 * dt), u, payload_mass)?;
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        ensure_finite(next.as_slice(), "integration step")?;
        Ok(next)
    }

    pub fn continuous_dynamics(
        &self,
        xi: &GeneralizedState,
        u: &ControlInput,
        theta: &UncertainParams,
    ) -> Result<StateVector> {
        let x = xi.to_vector();
        let uv = u.to_vector();
        ensure_finite(x.as_slice(), "state")?;
        ensure_finite(uv.as_slice(), "input")?;
        if !(theta.mass() >= 0.0) {
            return Err(Error::InvalidArgument("payload mass must be non-negative".into()));
        }
        self.derivative(&x, &uv, theta.mass())
    }

    pub fn step(
        &self,
        xi: &GeneralizedState,
        u: &ControlInput,
        theta: &UncertainParams,
        dt: f64,
    ) -> Result<GeneralizedState> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let x = xi.to_vector();
        let uv = u.to_vector();
        ensure_finite(x.as_slice(), "state")?;
        ensure_finite(uv.as_slice(), "input")?;
        self.rk4(&x, &uv, theta.mass(), dt)
            .map(|n| GeneralizedState::from_vector(&n))
    }

    /// Step of the phase-scheduled predictive model: the payload only loads
    /// the tip during transport and placement.
    pub fn predictive_step(
        &self,
        xi: &GeneralizedState,
        u: &ControlInput,
        theta: &UncertainParams,
        phase: Phase,
        dt: f64,
    ) -> Result<GeneralizedState> {
        let effective = UncertainParams::payload_mass(phase.payload_mass(theta.mass()));
        self.step(xi, u, &effective, dt)
    }

    /// Central finite-difference linearization of one RK4 step.
    ///
    /// Returns `(A, B, dphi/dm)`; the mass column is zero when the payload is
    /// not carried in `phase`.
    pub fn linearize(
        &self,
        x: &StateVector,
        u: &InputVector,
        payload_mass: f64,
        phase: Phase,
        dt: f64,
    ) -> Result<(StateMatrix, InputMatrix, StateVector)> {
        let mass = phase.payload_mass(payload_mass);
        let mut a = StateMatrix::zeros();
        for j in 0..NX {
            let h = fd_step(x[j]);
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += h;
            xm[j] -= h;
            let col = (self.rk4(&xp, u, mass, dt)? - self.rk4(&xm, u, mass, dt)?) / (2.0 * h);
            a.set_column(j, &col);
        }
        let mut b = InputMatrix::zeros();
        for j in 0..NU {
            let h = fd_step(u[j]);
            let mut up = *u;
            let mut um = *u;
            up[j] += h;
            um[j] -= h;
            let col = (self.rk4(x, &up, mass, dt)? - self.rk4(x, &um, mass, dt)?) / (2.0 * h);
            b.set_column(j, &col);
        }
        let dm = if phase.carries_payload() {
            let h = fd_step(payload_mass);
            (self.rk4(x, u, payload_mass + h, dt)? - self.rk4(x, u, payload_mass - h, dt)?)
                / (2.0 * h)
        } else {
            StateVector::zeros()
        };
        ensure_finite(a.as_slice(), "state Jacobian")?;
        ensure_finite(b.as_slice(), "input Jacobian")?;
        Ok((a, b, dm))
    }

    /// Jacobians of the predictive model with respect to the state and to the
    /// stacked uncertainty `[theta; w]`, where the additive disturbance `w`
    /// enters every state.
    pub fn jacobians(
        &self,
        xi: &GeneralizedState,
        u: &ControlInput,
        theta: &UncertainParams,
        phase: Phase,
        dt: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let x = xi.to_vector();
        let uv = u.to_vector();
        ensure_finite(x.as_slice(), "state")?;
        ensure_finite(uv.as_slice(), "input")?;
        let (a, _, dm) = self.linearize(&x, &uv, theta.mass(), phase, dt)?;
        let n_theta = theta.len();
        let mut g = DMatrix::zeros(NX, n_theta + NX);
        g.column_mut(0).copy_from(&dm);
        for i in 0..NX {
            g[(i, n_theta + i)] = 1.0;
        }
        Ok((DMatrix::from_column_slice(NX, NX, a.as_slice()), g))
    }

    /// Position of the hook point at the end of the pole.
    pub fn hook_position(&self, x: &StateVector) -> Vector3<f64> {
        let r = Vector3::new(x[0], x[1], x[2]);
        let rot = rotation(x[3], x[4], x[5]);
        r + rot * pole_vector(x[6], x[7], self.params.pole_length + self.params.hook_offset)
    }

    /// Center of a payload hanging from the hook, assumed upright.
    pub fn carried_payload_position(&self, x: &StateVector) -> Vector3<f64> {
        self.hook_position(x) - Vector3::z() * self.params.payload_hook_standoff
    }

    /// Kinetic plus potential energy for the given payload.
    pub fn mechanical_energy(&self, x: &StateVector, payload_mass: f64) -> f64 {
        let tip = self.tip_mass(payload_mass);
        let kin = self.kinematics(x);
        let m = self.mass_matrix(&kin, tip);
        let v: Coords = x.fixed_rows::<NQ>(NQ).into_owned();
        let kinetic = 0.5 * (v.transpose() * m * v)[(0, 0)];
        let g = self.params.gravity;
        let potential = self.params.quad_mass * g * x[2] + tip * g * (x[2] + kin.tip_offset.z);
        kinetic + potential
    }
}

/// Position of the hook on a payload with center `center` and rotation `rot`.
pub fn payload_hook_position(center: &Vector3<f64>, rot: &Matrix3<f64>, standoff: f64) -> Vector3<f64> {
    center + rot * Vector3::z() * standoff
}

pub(crate) fn fd_step(value: f64) -> f64 {
    (1e-6 * value.abs()).max(1e-6)
}
