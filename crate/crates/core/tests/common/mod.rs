//! Independent oracles shared by the integration tests and the acceptance
//! harness. Not every test binary uses every helper.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rampc::dynamics::{HookModel, InputMatrix, InputVector, ModelParams, StateMatrix, StateVector, NU, NX};
use rampc::estimator::chi2_inv;
use rampc::solver::qp::QpData;
use rampc::solver::*;
use rampc::zoro::{propagate, Ellipsoid};
use rampc::Result;

pub struct LinearDynamics {
    pub a: StateMatrix,
    pub b: InputMatrix,
}

impl DiscreteDynamics for LinearDynamics {
    fn step(&self, _stage: usize, x: &StateVector, u: &InputVector) -> Result<StateVector> {
        Ok(self.a * x + self.b * u)
    }

    fn linearize(&self, stage: usize, x: &StateVector, u: &InputVector) -> Result<Linearization> {
        Ok(Linearization {
            next: self.step(stage, x, u)?,
            a: self.a,
            b: self.b,
            param: StateVector::zeros(),
        })
    }
}

pub type InputWeight = SMatrix<f64, NU, NU>;

pub struct Quadratic {
    pub q: StateMatrix,
    pub r: InputWeight,
}

impl StageCost for Quadratic {
    fn model(&self, _stage: usize, x: &StateVector, u: &InputVector) -> Result<CostModel> {
        Ok(CostModel {
            value: 0.5 * (x.dot(&(self.q * x)) + u.dot(&(self.r * u))),
            grad_x: self.q * x,
            grad_u: self.r * u,
            hess_x: self.q,
            hess_u: self.r,
        })
    }
}

pub struct LqInstance {
    pub problem: OcpProblem,
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub q: StateMatrix,
    pub r: InputWeight,
}

/// Random stable-ish linear system with unit state and 0.1 input weights,
/// no bounds and no regularization.
pub fn lq_instance(seed: u64, horizon: usize) -> LqInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = StateMatrix::identity() + StateMatrix::from_fn(|_, _| rng.gen_range(-0.05..0.05));
    let b = InputMatrix::from_fn(|_, _| rng.gen_range(-0.2..0.2));
    let q = StateMatrix::identity();
    let r = InputWeight::identity() * 0.1;
    let problem = OcpProblem {
        horizon,
        dynamics: Arc::new(LinearDynamics { a, b }),
        cost: Arc::new(Quadratic { q, r }),
        constraints: Arc::new(Unconstrained),
        state_lower: StateVector::from_element(f64::NEG_INFINITY),
        state_upper: StateVector::from_element(f64::INFINITY),
        input_lower: InputVector::from_element(f64::NEG_INFINITY),
        input_upper: InputVector::from_element(f64::INFINITY),
        backoffs: None,
        settings: SolverSettings {
            regularization: 0.0,
            ..SolverSettings::default()
        },
    };
    LqInstance { problem, a, b, q, r }
}

/// First LQR input from the backward Riccati recursion with no terminal cost.
pub fn riccati_first_input(lq: &LqInstance, x0: &StateVector) -> InputVector {
    let (a, b, q, r) = (&lq.a, &lq.b, &lq.q, &lq.r);
    let mut p = StateMatrix::zeros();
    let mut k = SMatrix::<f64, NU, NX>::zeros();
    for _ in 0..lq.problem.horizon {
        let s = r + b.transpose() * p * b;
        k = s.try_inverse().unwrap() * b.transpose() * p * a;
        p = q + a.transpose() * p * a - a.transpose() * p * b * k;
        p = (p + p.transpose()) * 0.5;
    }
    -k * x0
}

/// Largest deviation of one RTI step from LQR over `seeds` random instances.
pub fn lqr_error(seeds: u64, horizon: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let lq = lq_instance(seed, horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x0 = StateVector::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let warm = SolverState::hold(&StateVector::zeros(), &InputVector::zeros(), horizon);
        let out = rti_step(&lq.problem, &x0, &warm).unwrap();
        worst = worst.max((out.input - riccati_first_input(&lq, &x0)).amax());
    }
    worst
}

pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpData {
    let mroot = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = mroot.transpose() * &mroot + DMatrix::identity(n, n) * 0.1;
    let g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let lb = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..0.0));
    let ub = DVector::from_fn(n, |i, _| lb[i] + rng.gen_range(0.2..2.0));
    QpData {
        h,
        g,
        lb,
        ub,
        a: DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0)),
        b: DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5)),
        penalty: DVector::from_fn(m, |_, _| rng.gen_range(0.5..5.0)),
    }
}

/// Global minimizer by enumerating every bound/row pattern. Each pattern
/// fixes bound variables, turns rows on their breakpoint into equalities and
/// rows above it into linear terms; the best box-feasible candidate under the
/// true objective is the global minimum of the convex problem.
pub fn enumerate(qp: &QpData) -> (DVector<f64>, f64) {
    let n = qp.n();
    let m = qp.m();
    let mut best: Option<(DVector<f64>, f64)> = None;
    let total = 3usize.pow((n + m) as u32);
    for code in 0..total {
        let mut c = code;
        let mut bstate = vec![0; n];
        let mut rstate = vec![0; m];
        for s in bstate.iter_mut().chain(rstate.iter_mut()) {
            *s = c % 3;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|i| bstate[*i] == 0).collect();
        let mut xfix = DVector::zeros(n);
        for i in 0..n {
            xfix[i] = match bstate[i] {
                1 => qp.lb[i],
                2 => qp.ub[i],
                _ => 0.0,
            };
        }
        let mut lin = qp.g.clone();
        for j in 0..m {
            if rstate[j] == 1 {
                lin += qp.a.row(j).transpose() * qp.penalty[j];
            }
        }
        let eq: Vec<usize> = (0..m).filter(|j| rstate[*j] == 2).collect();
        let nf = free.len();
        if eq.len() > nf {
            continue;
        }
        let dim = nf + eq.len();
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        let hx = &qp.h * &xfix;
        for (r, &i) in free.iter().enumerate() {
            for (s, &k) in free.iter().enumerate() {
                kkt[(r, s)] = qp.h[(i, k)];
            }
            rhs[r] = -(lin[i] + hx[i]);
            for (e, &j) in eq.iter().enumerate() {
                kkt[(r, nf + e)] = qp.a[(j, i)];
                kkt[(nf + e, r)] = qp.a[(j, i)];
            }
        }
        for (e, &j) in eq.iter().enumerate() {
            let fixed: f64 = (0..n).filter(|i| bstate[*i] != 0).map(|i| qp.a[(j, i)] * xfix[i]).sum();
            rhs[nf + e] = qp.b[j] - fixed;
        }
        let x = if dim == 0 {
            xfix.clone()
        } else {
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let mut x = xfix.clone();
            for (r, &i) in free.iter().enumerate() {
                x[i] = sol[r];
            }
            x
        };
        if x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if (0..n).any(|i| x[i] < qp.lb[i] - 1e-12 || x[i] > qp.ub[i] + 1e-12) {
            continue;
        }
        let f = qp.objective(&x);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    best.expect("the box is non-empty")
}

/// Fraction of Gaussian trajectories inside the propagated ellipsoid at each
/// stage of a fixed 3-state linear system. The noise covariances are the
/// bounds scaled by `1 / chi2_inv(n, alpha)`.
pub fn containment_fractions(alpha: f64, samples: usize, stages: usize, seed: u64) -> Vec<f64> {
    let n = 3;
    let c = chi2_inv(n, alpha).unwrap();
    let a = DMatrix::from_row_slice(n, n, &[0.95, 0.2, 0.0, -0.1, 0.9, 0.1, 0.05, 0.0, 0.85]);
    let g = DMatrix::identity(n, n);
    let w = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.02, 0.005]));
    let s0 = Ellipsoid::new(DMatrix::identity(n, n) * 0.05).unwrap();

    let mut shapes = vec![s0.clone()];
    for _ in 0..stages {
        shapes.push(propagate(shapes.last().unwrap(), &w, &a, &g).unwrap());
    }
    let l0 = (s0.shape() / c).cholesky().unwrap().l();
    let lw = (&w / c).cholesky().unwrap().l();
    let inv: Vec<DMatrix<f64>> = shapes.iter().map(|s| s.shape().clone().try_inverse().unwrap()).collect();
    let mut inside = vec![0usize; stages + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |l: &DMatrix<f64>| l * DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    for _ in 0..samples {
        let mut x = gauss(&l0);
        for k in 0..=stages {
            if x.dot(&(&inv[k] * &x)) <= 1.0 {
                inside[k] += 1;
            }
            x = &a * &x + &g * gauss(&lw);
        }
    }
    inside.iter().map(|c| *c as f64 / samples as f64).collect()
}

pub fn undamped_model() -> HookModel {
    HookModel::new(ModelParams {
        joint_damping: 0.0,
        ..ModelParams::default()
    })
    .unwrap()
}

pub fn swinging_state() -> StateVector {
    let mut x = StateVector::zeros();
    x[2] = 1.0;
    x[3] = 0.1;
    x[4] = -0.05;
    x[6] = 0.4;
    x[7] = -0.3;
    x[8] = 0.2;
    x[11] = 0.3;
    x[12] = -0.2;
    x[13] = 0.5;
    x[14] = 1.0;
    x[15] = -0.5;
    x
}

/// Relative energy drift over 1 s, undamped and unforced, at `dt = 1e-4`.
pub fn energy_drift() -> f64 {
    let model = undamped_model();
    let u = InputVector::zeros();
    let mut x = swinging_state();
    let e0 = model.mechanical_energy(&x, 0.1);
    for _ in 0..10_000 {
        x = model.rk4(&x, &u, 0.1, 1e-4).unwrap();
    }
    ((model.mechanical_energy(&x, 0.1) - e0) / e0).abs()
}

fn integrate(model: &HookModel, x0: &StateVector, u: &InputVector, t: f64, steps: usize) -> StateVector {
    let h = t / steps as f64;
    let mut x = *x0;
    for _ in 0..steps {
        x = model.rk4(&x, u, 0.1, h).unwrap();
    }
    x
}

/// Observed convergence orders between successive step halvings against a
/// fine-step reference.
pub fn rk4_orders() -> Vec<f64> {
    let model = undamped_model();
    let x0 = swinging_state();
    let u = InputVector::new(7.0, 0.01, -0.01, 0.005);
    let t = 0.5;
    let reference = integrate(&model, &x0, &u, t, 4096);
    let errors: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|n| (integrate(&model, &x0, &u, t, *n) - reference).norm())
        .collect();
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Five-point central difference.
pub fn stencil(f: &dyn Fn(f64) -> StateVector, h: f64) -> StateVector {
    (f(-2.0 * h) - f(2.0 * h) + (f(h) - f(-h)) * 8.0) / (12.0 * h)
}

/// Largest entry-wise gap between the model's Jacobians and a five-point
/// stencil with a larger step.
pub fn jacobian_gap() -> f64 {
    use rampc::phases::Phase;
    let model = HookModel::new(ModelParams::default()).unwrap();
    let x = swinging_state();
    let u = InputVector::new(7.2, 0.02, -0.01, 0.003);
    let dt = 0.05;
    let (a, b, dm) = model.linearize(&x, &u, 0.1, Phase::Transport, dt).unwrap();
    let mut gap: f64 = 0.0;
    for j in 0..NX {
        let f = |d: f64| {
            let mut xp = x;
            xp[j] += d;
            model.rk4(&xp, &u, 0.1, dt).unwrap()
        };
        gap = gap.max((a.column(j) - stencil(&f, 1e-3)).amax());
    }
    for j in 0..NU {
        let f = |d: f64| {
            let mut up = u;
            up[j] += d;
            model.rk4(&x, &up, 0.1, dt).unwrap()
        };
        gap = gap.max((b.column(j) - stencil(&f, 1e-3)).amax());
    }
    let f = |d: f64| model.rk4(&x, &u, 0.1 + d, dt).unwrap();
    gap.max((dm - stencil(&f, 1e-3)).amax())
}
