//! Gaussian-process surrogate with a squared-exponential ARD kernel.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{Error, Result};

const LOG_LENGTH: [f64; 2] = [-4.6, 2.3];
const LOG_SIGNAL: [f64; 2] = [-4.6, 2.3];
const LOG_NOISE: [f64; 2] = [-9.2, 0.0];
const JITTER: f64 = 1e-10;

/// Kernel hyperparameters in standardized output units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn initial(dim: usize) -> Self {
        Self {
            length_scales: vec![0.3; dim],
            signal_var: 1.0,
            noise_var: 1e-4,
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.length_scales.iter().map(|l| l.ln()).collect();
        p.push(0.5 * self.signal_var.ln());
        p.push(0.5 * self.noise_var.ln());
        p
    }

    fn from_log(p: &[f64]) -> Self {
        let d = p.len() - 2;
        let clamp = |v: f64, [lo, hi]: [f64; 2]| v.clamp(lo, hi);
        Self {
            length_scales: p[..d].iter().map(|v| clamp(*v, LOG_LENGTH).exp()).collect(),
            signal_var: (2.0 * clamp(p[d], LOG_SIGNAL)).exp(),
            noise_var: (2.0 * clamp(p[d + 1], LOG_NOISE)).exp(),
        }
    }
}

/// GP regression on inputs scaled to the unit cube. Outputs are
/// standardized internally; predictions are in the original units.
#[derive(Clone, Debug)]
pub struct GpSurrogate {
    x: Vec<DVector<f64>>,
    y_mean: f64,
    y_scale: f64,
    hyper: GpHyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn kernel(a: &DVector<f64>, b: &DVector<f64>, h: &GpHyper) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b.iter())
        .zip(&h.length_scales)
        .map(|((u, v), l)| ((u - v) / l).powi(2))
        .sum();
    h.signal_var * (-0.5 * r2).exp()
}

fn standardize(y: &[f64]) -> (f64, f64, DVector<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (mean, scale, DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale)))
}

fn factor(x: &[DVector<f64>], h: &GpHyper) -> Option<Cholesky<f64, Dyn>> {
    let n = x.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j], h));
    for i in 0..n {
        k[(i, i)] += h.noise_var + JITTER;
    }
    Cholesky::new(k)
}

fn neg_log_likelihood(x: &[DVector<f64>], y: &DVector<f64>, h: &GpHyper) -> f64 {
    let Some(chol) = factor(x, h) else {
        return f64::INFINITY;
    };
    let alpha = chol.solve(y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    0.5 * y.dot(&alpha) + logdet + 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

struct Likelihood<'a> {
    x: &'a [DVector<f64>],
    y: &'a DVector<f64>,
}

impl CostFunction for Likelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let bounds = |i: usize| {
            if i + 2 < p.len() {
                LOG_LENGTH
            } else if i + 2 == p.len() {
                LOG_SIGNAL
            } else {
                LOG_NOISE
            }
        };
        // Quadratic wall outside the box keeps the simplex inside it.
        let wall: f64 = p
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let [lo, hi] = bounds(i);
                (lo - v).max(0.0).powi(2) + (v - hi).max(0.0).powi(2)
            })
            .sum();
        let nll = neg_log_likelihood(self.x, self.y, &GpHyper::from_log(p));
        Ok(if nll.is_finite() { nll + 1e3 * wall } else { 1e12 })
    }
}

impl GpSurrogate {
    /// Fits hyperparameters by maximum likelihood (Nelder-Mead on log
    /// parameters).
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let dim = check_data(x, y)?;
        let xs: Vec<DVector<f64>> = x.iter().map(|v| DVector::from_column_slice(v)).collect();
        let (_, _, ys) = standardize(y);
        let start = GpHyper::initial(dim).to_log();
        let mut simplex = vec![start.clone()];
        for i in 0..start.len() {
            let mut v = start.clone();
            v[i] += 1.0;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-6)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let problem = Likelihood { x: &xs, y: &ys };
        let hyper = match Executor::new(problem, solver)
            .configure(|s| s.max_iters(150 + 50 * dim as u64))
            .run()
        {
            Ok(res) => res
                .state
                .best_param
                .map_or_else(|| GpHyper::initial(dim), |p| GpHyper::from_log(&p)),
            Err(e) => {
                log::warn!("GP hyperparameter fit failed ({e}); using defaults");
                GpHyper::initial(dim)
            }
        };
        Self::with_hyper(x, y, hyper)
    }

    pub fn with_hyper(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<Self> {
        let dim = check_data(x, y)?;
        if hyper.length_scales.len() != dim {
            return Err(Error::Dimension(format!(
                "{} length scales for {dim}-dimensional inputs",
                hyper.length_scales.len()
            )));
        }
        let xs: Vec<DVector<f64>> = x.iter().map(|v| DVector::from_column_slice(v)).collect();
        let (y_mean, y_scale, ys) = standardize(y);
        let chol = factor(&xs, &hyper).ok_or(Error::Singular("GP kernel matrix"))?;
        let alpha = chol.solve(&ys);
        Ok(Self {
            x: xs,
            y_mean,
            y_scale,
            hyper,
            chol,
            alpha,
        })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Observation noise standard deviation in output units.
    pub fn noise_std(&self) -> f64 {
        self.hyper.noise_var.sqrt() * self.y_scale
    }

    /// Posterior mean and variance of the latent function.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let q = DVector::from_column_slice(x);
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, &q, &self.hyper)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).unwrap_or_else(|| k.clone());
        let var = (self.hyper.signal_var - v.norm_squared()).max(0.0);
        (self.y_mean + self.y_scale * mean, var * self.y_scale * self.y_scale)
    }
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Dimension(format!("{} inputs, {} outputs", x.len(), y.len())));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("GP inputs must share a non-zero dimension".into()));
    }
    for v in x {
        crate::error::ensure_finite(v, "GP inputs")?;
    }
    crate::error::ensure_finite(y, "GP outputs")?;
    Ok(dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_training_data() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| (6.0 * v[0]).sin()).collect();
        let gp = GpSurrogate::fit(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (m, v) = gp.predict(xi);
            assert!(v >= 0.0);
            assert!((m - yi).abs() <= 3.0 * gp.noise_std() + 1e-9, "{m} vs {yi}");
        }
    }

    #[test]
    fn variance_grows_away_from_data() {
        let x = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.1]];
        let y = vec![1.0, 2.0, 1.5];
        let gp = GpSurrogate::with_hyper(&x, &y, GpHyper::initial(2)).unwrap();
        assert!(gp.predict(&[1.0, 1.0]).1 > gp.predict(&[0.05, 0.05]).1);
    }

    #[test]
    fn rejects_ragged_inputs() {
        assert!(GpSurrogate::fit(&[vec![0.0], vec![0.0, 1.0]], &[1.0, 2.0]).is_err());
        assert!(GpSurrogate::fit(&[], &[]).is_err());
    }
}
