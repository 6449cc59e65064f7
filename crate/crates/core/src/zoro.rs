//! Zero-order robust tightening: ellipsoidal uncertainty propagated along the
//! nominal trajectory, converted into constraint backoffs that stay fixed
//! during the next solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{StateMatrix, StateVector, NX};
use crate::error::{Error, Result};
use crate::solver::{Backoffs, Linearization, PathConstraints, SolverState};

const SYM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;

/// Shape matrix of a zero-centered ellipsoid `{x : x' Sigma^-1 x <= 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    /// Validates symmetry and semidefiniteness; tiny negative eigenvalues are
    /// clamped to zero.
    pub fn new(shape: DMatrix<f64>) -> Result<Self> {
        if !shape.is_square() {
            return Err(Error::Dimension(format!(
                "ellipsoid shape is {}x{}",
                shape.nrows(),
                shape.ncols()
            )));
        }
        crate::error::ensure_finite(shape.as_slice(), "ellipsoid shape")?;
        let scale = 1.0 + shape.amax();
        let asym = (&shape - shape.transpose()).amax();
        if asym > SYM_TOL * scale {
            return Err(Error::InvalidArgument(format!(
                "ellipsoid shape is not symmetric (deviation {asym:e})"
            )));
        }
        let sym = (&shape + shape.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let min = eig.eigenvalues.min();
        if min < -PSD_TOL * scale {
            return Err(Error::NotPositiveSemidefinite(min));
        }
        if min < 0.0 {
            let clamped = eig.eigenvalues.map(|v| v.max(0.0));
            let v = &eig.eigenvectors;
            let rebuilt = v * DMatrix::from_diagonal(&clamped) * v.transpose();
            return Ok(Self {
                shape: (&rebuilt + rebuilt.transpose()) * 0.5,
            });
        }
        Ok(Self { shape: sym })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            shape: DMatrix::zeros(n, n),
        }
    }

    pub fn scaled_identity(n: usize, value: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n) * value)
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    /// Whether `x` lies inside the ellipsoid. Uses a pseudo-inverse so that
    /// degenerate shapes only contain points in their range.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let eig = SymmetricEigen::new(self.shape.clone());
        let tol = 1e-12 * (1.0 + self.shape.amax());
        let mut q = 0.0;
        for k in 0..self.dim() {
            let c = eig.eigenvectors.column(k).dot(x);
            let l = eig.eigenvalues[k];
            if l > tol {
                q += c * c / l;
            } else if c.abs() > 1e-12 {
                return false;
            }
        }
        q <= 1.0
    }
}

/// Uncertainty description used by the tightening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyConfig {
    /// Bound shape on the uncertain parameters (row-major, n_theta x n_theta).
    pub w_theta: Vec<f64>,
    /// Diagonal of the additive disturbance bound.
    pub w_w: Vec<f64>,
    /// Diagonal of the initial-state uncertainty bound.
    pub sigma_bar: Vec<f64>,
    /// Confidence level used for bound/covariance conversions.
    pub alpha: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        // Disturbances act on the velocities only.
        let mut w_w = vec![0.0; NX];
        for v in w_w.iter_mut().skip(8).take(3) {
            *v = 1e-6;
        }
        for v in w_w.iter_mut().skip(11) {
            *v = 1e-5;
        }
        Self {
            w_theta: vec![0.0096],
            w_w,
            sigma_bar: vec![1e-4; NX],
            alpha: 0.95,
        }
    }
}

impl UncertaintyConfig {
    /// All bounds zero: the tightening vanishes.
    pub fn zero() -> Self {
        Self {
            w_theta: vec![0.0],
            w_w: vec![0.0; NX],
            sigma_bar: vec![0.0; NX],
            alpha: 0.95,
        }
    }

    pub fn n_theta(&self) -> usize {
        (self.w_theta.len() as f64).sqrt().round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nt = self.n_theta();
        if nt == 0 || nt * nt != self.w_theta.len() {
            return Err(Error::Dimension("w_theta must be a non-empty square matrix".into()));
        }
        if self.w_w.len() != NX || self.sigma_bar.len() != NX {
            return Err(Error::Dimension(format!("w_w and sigma_bar need {NX} entries")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.w_w.iter().chain(self.sigma_bar.iter()).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveSemidefinite(
                self.w_w.iter().chain(self.sigma_bar.iter()).copied().fold(f64::INFINITY, f64::min),
            ));
        }
        Ellipsoid::new(self.w_theta_matrix())?;
        Ok(())
    }

    pub fn w_theta_matrix(&self) -> DMatrix<f64> {
        let n = self.n_theta();
        DMatrix::from_row_slice(n, n, &self.w_theta)
    }

    /// `blkdiag(W_theta, W_w)`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let nt = self.n_theta();
        let mut w = DMatrix::zeros(nt + NX, nt + NX);
        w.view_mut((0, 0), (nt, nt)).copy_from(&self.w_theta_matrix());
        for i in 0..NX {
            w[(nt + i, nt + i)] = self.w_w[i];
        }
        w
    }

    pub fn is_zero(&self) -> bool {
        self.w_theta.iter().chain(&self.w_w).chain(&self.sigma_bar).all(|v| *v == 0.0)
    }
}

/// `A Sigma A' + G W G'`, symmetrized.
pub fn propagate(sigma: &Ellipsoid, w: &DMatrix<f64>, a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<Ellipsoid> {
    let n = sigma.dim();
    if a.nrows() != a.ncols() || a.ncols() != n || g.nrows() != a.nrows() || w.nrows() != g.ncols() || !w.is_square() {
        return Err(Error::Dimension(format!(
            "propagate: Sigma {n}x{n}, A {}x{}, G {}x{}, W {}x{}",
            a.nrows(),
            a.ncols(),
            g.nrows(),
            g.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let next = a * sigma.shape() * a.transpose() + g * w * g.transpose();
    Ok(Ellipsoid {
        shape: (&next + next.transpose()) * 0.5,
    })
}

/// `sqrt(grad' Sigma grad)`.
pub fn backoff(grad: &DVector<f64>, sigma: &Ellipsoid) -> Result<f64> {
    if grad.len() != sigma.dim() {
        return Err(Error::Dimension("gradient and ellipsoid sizes differ".into()));
    }
    quadratic_root(grad.dot(&(sigma.shape() * grad)), grad.norm_squared() * sigma.shape().amax())
}

fn quadratic_root(q: f64, scale: f64) -> Result<f64> {
    if q >= 0.0 {
        Ok(q.sqrt())
    } else if q >= -PSD_TOL * (1.0 + scale) {
        Ok(0.0)
    } else {
        Err(Error::NotPositiveSemidefinite(q))
    }
}

/// Propagated shape matrices along the trajectory, stages `0..=N`.
pub fn propagate_trajectory(lins: &[Linearization], cfg: &UncertaintyConfig) -> Vec<StateMatrix> {
    let w_theta = cfg.w_theta_matrix()[(0, 0)];
    let w_w = StateMatrix::from_diagonal(&StateVector::from_column_slice(&cfg.w_w));
    let mut sigmas = Vec::with_capacity(lins.len() + 1);
    sigmas.push(StateMatrix::from_diagonal(&StateVector::from_column_slice(&cfg.sigma_bar)));
    for lin in lins {
        let s = sigmas.last().unwrap();
        let mut next = lin.a * s * lin.a.transpose() + w_w;
        next += lin.param * lin.param.transpose() * w_theta;
        sigmas.push((next + next.transpose()) * 0.5);
    }
    sigmas
}

/// Backoffs for every state-bound row and nonlinear constraint along the
/// nominal trajectory stored in `warm`.
///
/// Only the first uncertain parameter has a dynamics sensitivity in the
/// linearizations, so off-diagonal entries of `W_theta` do not contribute.
pub fn compute_backoffs(
    warm: &SolverState,
    lins: &[Linearization],
    constraints: &dyn PathConstraints,
    cfg: &UncertaintyConfig,
) -> Result<Backoffs> {
    let n = lins.len();
    warm.check(n)?;
    let sigmas = propagate_trajectory(lins, cfg);
    let mut out = Backoffs::zeros(n, |i| constraints.count(i));
    for (i, s) in sigmas.iter().enumerate() {
        let scale = s.amax();
        for m in 0..NX {
            let b = quadratic_root(s[(m, m)], scale)?;
            out.state_lower[i][m] = b;
            out.state_upper[i][m] = b;
        }
        if constraints.count(i) > 0 {
            for (j, c) in constraints.evaluate(i, &warm.states[i])?.iter().enumerate() {
                let q = c.grad.dot(&(s * c.grad));
                out.nonlinear[i][j] = quadratic_root(q, c.grad.norm_squared() * scale)?;
            }
        }
    }
    Ok(out)
}
