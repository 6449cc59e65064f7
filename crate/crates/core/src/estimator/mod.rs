//! Online payload-mass estimation with an extended Kalman filter on a
//! random-walk parameter model, and conversions between ellipsoidal bounds
//! and Gaussian covariances.

mod chi2;

pub use chi2::{chi2_cdf, chi2_inv};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{fd_step, HookModel, InputVector, StateVector, NX};
use crate::error::{Error, Result};
use crate::phases::Phase;
use crate::zoro::UncertaintyConfig;

/// Covariance whose `alpha` confidence region matches the bound `W`.
pub fn bound_to_cov(w: &DMatrix<f64>, dof: usize, alpha: f64) -> Result<DMatrix<f64>> {
    Ok(w / chi2_inv(dof, alpha)?)
}

/// Ellipsoidal bound matching the `alpha` confidence region of `P`.
pub fn cov_to_bound(p: &DMatrix<f64>, dof: usize, alpha: f64) -> Result<DMatrix<f64>> {
    Ok(p * chi2_inv(dof, alpha)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Initial parameter covariance (scalar, payload mass).
    pub p0: f64,
    /// Random-walk variance per step.
    pub q: f64,
    /// Measurement noise variance per state.
    pub r: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            p0: 0.05 * 0.05,
            q: 1e-6,
            r: 1e-4,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 >= 0.0 && self.q >= 0.0 && self.r >= 0.0) {
            return Err(Error::InvalidArgument("EKF variances must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EkfState {
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Covariance of the additive process disturbance seen by the measurement.
    pub sigma_w: DMatrix<f64>,
    /// Whether the last call performed an update.
    pub active: bool,
}

impl EkfState {
    pub fn new(theta0: f64, cfg: &EkfConfig, uncertainty: &UncertaintyConfig) -> Result<Self> {
        cfg.validate()?;
        uncertainty.validate()?;
        let w_w = DMatrix::from_diagonal(&DVector::from_column_slice(&uncertainty.w_w));
        Ok(Self {
            theta: DVector::from_element(1, theta0.max(0.0)),
            p: DMatrix::from_element(1, 1, cfg.p0),
            q: DMatrix::from_element(1, 1, cfg.q),
            r: DMatrix::identity(NX, NX) * cfg.r,
            sigma_w: bound_to_cov(&w_w, NX, uncertainty.alpha)?,
            active: false,
        })
    }

    pub fn mass(&self) -> f64 {
        self.theta[0]
    }

    pub fn mass_std(&self) -> f64 {
        self.p[(0, 0)].max(0.0).sqrt()
    }
}

/// One predict/update cycle. Outside transport and placement the state is
/// returned unchanged.
pub fn ekf_step(
    ekf: &EkfState,
    model: &HookModel,
    x_prev: &StateVector,
    u_prev: &InputVector,
    x_meas: &StateVector,
    phase: Phase,
    dt: f64,
) -> Result<EkfState> {
    if !phase.carries_payload() {
        let mut out = ekf.clone();
        out.active = false;
        return Ok(out);
    }
    let nt = ekf.theta.len();
    let p_pred = &ekf.p + &ekf.q;
    let mass = ekf.theta[0];
    let pred = model.rk4(x_prev, u_prev, mass, dt)?;

    let mut c = DMatrix::zeros(NX, nt);
    let h = fd_step(mass);
    let col = (model.rk4(x_prev, u_prev, mass + h, dt)? - model.rk4(x_prev, u_prev, (mass - h).max(0.0), dt)?)
        / (mass + h - (mass - h).max(0.0));
    c.column_mut(0).copy_from(&col);

    let nu = DVector::from_column_slice((x_meas - pred).as_slice());
    let r_eff = &ekf.sigma_w + &ekf.r;
    let s = &c * &p_pred * c.transpose() + &r_eff;
    let mut out = ekf.clone();
    out.active = true;
    let Some(chol) = s.clone().cholesky() else {
        log::warn!("EKF innovation covariance is singular; skipping update");
        out.p = &p_pred + &ekf.q;
        return Ok(out);
    };
    // K = P C' S^-1, computed as (S^-1 C P)'.
    let k = chol.solve(&(&c * &p_pred)).transpose();
    out.theta = &ekf.theta + &k * &nu;
    out.theta[0] = out.theta[0].max(0.0);
    let i_kc = DMatrix::identity(nt, nt) - &k * &c;
    let p = &i_kc * &p_pred * i_kc.transpose() + &k * &r_eff * k.transpose();
    out.p = (&p + p.transpose()) * 0.5;
    crate::error::ensure_finite(out.theta.as_slice(), "EKF estimate")?;
    Ok(out)
}

/// Uncertainty config with the parameter bound taken from the filter.
pub fn sync_to_zoro(ekf: &EkfState, cfg: &UncertaintyConfig) -> Result<UncertaintyConfig> {
    if !ekf.active {
        return Ok(cfg.clone());
    }
    let n = ekf.theta.len();
    let w = cov_to_bound(&ekf.p, n, cfg.alpha)?;
    let mut out = cfg.clone();
    out.w_theta = w.transpose().as_slice().to_vec();
    Ok(out)
}
