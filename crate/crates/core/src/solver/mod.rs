//! Multiple-shooting Gauss-Newton SQP in real-time-iteration mode.
//!
//! Each call to [`rti_step`] linearizes the dynamics along the warm-start
//! trajectory, condenses the QP onto the input increments, solves it with the
//! dense active-set method in [`qp`] and takes the full step.

pub mod condense;
pub mod qp;

use std::sync::Arc;

use nalgebra::{DVector, SMatrix};

use crate::dynamics::{InputMatrix, InputVector, StateMatrix, StateVector, NU, NX};
use crate::error::{Error, Result};
use condense::Condensed;
use qp::{QpData, QpOptions, QpStatus};

pub type InputHessian = SMatrix<f64, NU, NU>;

/// Linearization of one shooting interval.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub next: StateVector,
    pub a: StateMatrix,
    pub b: InputMatrix,
    /// Sensitivity of the next state to the first uncertain parameter.
    pub param: StateVector,
}

pub trait DiscreteDynamics: Send + Sync {
    fn step(&self, stage: usize, x: &StateVector, u: &InputVector) -> Result<StateVector>;
    fn linearize(&self, stage: usize, x: &StateVector, u: &InputVector) -> Result<Linearization>;
}

/// Convex quadratic model of a stage cost around a point.
#[derive(Clone, Debug)]
pub struct CostModel {
    pub value: f64,
    pub grad_x: StateVector,
    pub grad_u: InputVector,
    pub hess_x: StateMatrix,
    pub hess_u: InputHessian,
}

pub trait StageCost: Send + Sync {
    /// Model of stage `stage` in `0..horizon`.
    fn model(&self, stage: usize, x: &StateVector, u: &InputVector) -> Result<CostModel>;
}

/// One nonlinear inequality `g(x) <= 0` evaluated with its state gradient.
#[derive(Clone, Copy, Debug)]
pub struct ConstraintValue {
    pub value: f64,
    pub grad: StateVector,
}

pub trait PathConstraints: Send + Sync {
    fn count(&self, stage: usize) -> usize;
    fn evaluate(&self, stage: usize, x: &StateVector) -> Result<Vec<ConstraintValue>>;
}

/// No nonlinear constraints.
pub struct Unconstrained;

impl PathConstraints for Unconstrained {
    fn count(&self, _stage: usize) -> usize {
        0
    }
    fn evaluate(&self, _stage: usize, _x: &StateVector) -> Result<Vec<ConstraintValue>> {
        Ok(Vec::new())
    }
}

/// Constraint tightening, one entry per stage `0..=horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct Backoffs {
    pub state_lower: Vec<StateVector>,
    pub state_upper: Vec<StateVector>,
    pub nonlinear: Vec<Vec<f64>>,
}

impl Backoffs {
    pub fn zeros(horizon: usize, counts: impl Fn(usize) -> usize) -> Self {
        Self {
            state_lower: vec![StateVector::zeros(); horizon + 1],
            state_upper: vec![StateVector::zeros(); horizon + 1],
            nonlinear: (0..=horizon).map(|i| vec![0.0; counts(i)]).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let s = self
            .state_lower
            .iter()
            .chain(self.state_upper.iter())
            .map(|v| v.amax())
            .fold(0.0, f64::max);
        self.nonlinear
            .iter()
            .flatten()
            .fold(s, |acc, v| acc.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// L1 penalty on state-bound and nonlinear-constraint violations.
    pub penalty: f64,
    /// Diagonal regularization added to the condensed Hessian.
    pub regularization: f64,
    pub qp_max_iterations: usize,
    pub kkt_tolerance: f64,
    /// State-bound rows enter the QP once the linearized value is within
    /// this fraction of the box width from the bound.
    pub screening_margin: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            penalty: 1e4,
            regularization: 1e-8,
            qp_max_iterations: 2000,
            kkt_tolerance: 1e-7,
            screening_margin: 0.1,
        }
    }
}

#[derive(Clone)]
pub struct OcpProblem {
    pub horizon: usize,
    pub dynamics: Arc<dyn DiscreteDynamics>,
    pub cost: Arc<dyn StageCost>,
    pub constraints: Arc<dyn PathConstraints>,
    pub state_lower: StateVector,
    pub state_upper: StateVector,
    pub input_lower: InputVector,
    pub input_upper: InputVector,
    pub backoffs: Option<Backoffs>,
    pub settings: SolverSettings,
}

impl OcpProblem {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        for i in 0..NU {
            if !(self.input_lower[i] <= self.input_upper[i]) {
                return Err(Error::InvalidArgument(format!(
                    "input bound {i} is empty: [{}, {}]",
                    self.input_lower[i], self.input_upper[i]
                )));
            }
        }
        for i in 0..NX {
            if !(self.state_lower[i] <= self.state_upper[i]) {
                return Err(Error::InvalidArgument(format!(
                    "state bound {i} is empty: [{}, {}]",
                    self.state_lower[i], self.state_upper[i]
                )));
            }
        }
        if let Some(b) = &self.backoffs {
            let n = self.horizon + 1;
            if b.state_lower.len() != n || b.state_upper.len() != n || b.nonlinear.len() != n {
                return Err(Error::Dimension(format!("backoffs must cover {n} stages")));
            }
            for (i, v) in b.nonlinear.iter().enumerate() {
                if v.len() != self.constraints.count(i) {
                    return Err(Error::Dimension(format!("nonlinear backoffs at stage {i}")));
                }
            }
            if b.state_lower.iter().chain(b.state_upper.iter()).any(|v| v.iter().any(|x| !(*x >= 0.0)))
                || b.nonlinear.iter().flatten().any(|x| !(*x >= 0.0))
            {
                return Err(Error::InvalidArgument("backoffs must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn clamp_input(&self, u: &InputVector) -> InputVector {
        u.zip_zip_map(&self.input_lower, &self.input_upper, |v, lo, hi| v.clamp(lo, hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum SolveStatus {
    Success,
    Failed,
}

/// Identifies a soft QP row so its activity can seed the next screening.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowKey {
    Upper { stage: usize, coord: usize },
    Lower { stage: usize, coord: usize },
    Nonlinear { stage: usize, index: usize },
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub states: Vec<StateVector>,
    pub inputs: Vec<InputVector>,
    /// Soft rows active or violated at the last QP solution.
    pub active_rows: Vec<RowKey>,
    pub status: SolveStatus,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    pub step_norm: f64,
}

impl SolverState {
    /// Constant trajectory at `x0` with a constant input.
    pub fn hold(x0: &StateVector, u: &InputVector, horizon: usize) -> Self {
        Self {
            states: vec![*x0; horizon + 1],
            inputs: vec![*u; horizon],
            active_rows: Vec::new(),
            status: SolveStatus::Success,
            qp_iterations: 0,
            kkt_residual: 0.0,
            step_norm: 0.0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn check(&self, horizon: usize) -> Result<()> {
        if self.inputs.len() != horizon || self.states.len() != horizon + 1 {
            return Err(Error::Dimension(format!(
                "warm start has {} states and {} inputs for horizon {horizon}",
                self.states.len(),
                self.inputs.len()
            )));
        }
        Ok(())
    }
}

/// Shifts the trajectories one stage forward, duplicating the last stage.
pub fn shift_warmstart(state: &SolverState) -> SolverState {
    let mut next = state.clone();
    next.states.remove(0);
    next.states.push(*state.states.last().expect("non-empty trajectory"));
    next.inputs.remove(0);
    next.inputs.push(*state.inputs.last().expect("non-empty trajectory"));
    next.active_rows = state
        .active_rows
        .iter()
        .filter_map(|k| match *k {
            RowKey::Upper { stage, coord } if stage > 1 => Some(RowKey::Upper { stage: stage - 1, coord }),
            RowKey::Lower { stage, coord } if stage > 1 => Some(RowKey::Lower { stage: stage - 1, coord }),
            RowKey::Nonlinear { stage, index } if stage > 1 => Some(RowKey::Nonlinear { stage: stage - 1, index }),
            _ => None,
        })
        .collect();
    next
}

/// Linearizes every shooting interval around the warm-start trajectory.
pub fn linearize_trajectory(problem: &OcpProblem, warm: &SolverState) -> Result<Vec<Linearization>> {
    (0..problem.horizon)
        .map(|i| {
            let u = problem.clamp_input(&warm.inputs[i]);
            problem.dynamics.linearize(i, &warm.states[i], &u)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub input: InputVector,
    pub state: SolverState,
}

/// One real-time iteration from the measured state `x0`.
pub fn rti_step(problem: &OcpProblem, x0: &StateVector, warm: &SolverState) -> Result<StepOutput> {
    problem.validate()?;
    warm.check(problem.horizon)?;
    let lins = linearize_trajectory(problem, warm)?;
    rti_step_with(problem, x0, warm, &lins)
}

/// As [`rti_step`] with linearizations computed by the caller, so that they
/// can be shared with the uncertainty propagation.
pub fn rti_step_with(
    problem: &OcpProblem,
    x0: &StateVector,
    warm: &SolverState,
    lins: &[Linearization],
) -> Result<StepOutput> {
    problem.validate()?;
    warm.check(problem.horizon)?;
    if lins.len() != problem.horizon {
        return Err(Error::Dimension("one linearization per stage is required".into()));
    }
    crate::error::ensure_finite(x0.as_slice(), "initial state")?;
    let n = problem.horizon;

    let mut xbar = warm.states.clone();
    let ubar: Vec<InputVector> = warm.inputs.iter().map(|u| problem.clamp_input(u)).collect();
    let costs = (0..n)
        .map(|i| problem.cost.model(i, &xbar[i], &ubar[i]))
        .collect::<Result<Vec<_>>>()?;
    let constraints = (0..=n)
        .map(|i| {
            if i == 0 {
                Ok(Vec::new())
            } else {
                problem.constraints.evaluate(i, &xbar[i])
            }
        })
        .collect::<Result<Vec<_>>>()?;

    xbar[0] = warm.states[0];
    let cond = Condensed::build(x0, &xbar, lins, &costs, problem.settings.regularization);

    let rows = condense::RowSet::new(problem, &xbar, &cond, &constraints, &warm.active_rows);
    let (sol, rows) = solve_with_screening(problem, &xbar, &ubar, &cond, &constraints, rows)?;

    if sol.status != QpStatus::Optimal {
        log::warn!("QP failed with status {:?}; holding previous input", sol.status);
        let mut state = warm.clone();
        state.status = SolveStatus::Failed;
        state.qp_iterations = sol.iterations;
        state.kkt_residual = sol.kkt_residual;
        state.step_norm = 0.0;
        return Ok(StepOutput {
            input: ubar[0],
            state,
        });
    }

    let du = &sol.x;
    let dx = cond.state_increments(du);
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    for i in 0..=n {
        states.push(xbar[i] + dx[i]);
    }
    states[0] = *x0;
    for i in 0..n {
        let step = InputVector::from_iterator(du.rows(i * NU, NU).iter().copied());
        inputs.push(problem.clamp_input(&(ubar[i] + step)));
    }
    let active_rows = rows.active_keys(&sol);
    let state = SolverState {
        states,
        inputs,
        active_rows,
        status: SolveStatus::Success,
        qp_iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        step_norm: du.amax(),
    };
    Ok(StepOutput {
        input: state.inputs[0],
        state,
    })
}

fn solve_with_screening(
    problem: &OcpProblem,
    xbar: &[StateVector],
    ubar: &[InputVector],
    cond: &Condensed,
    constraints: &[Vec<ConstraintValue>],
    mut rows: condense::RowSet,
) -> Result<(qp::QpSolution, condense::RowSet)> {
    let (lb, ub) = input_box(problem, ubar);
    let opts = QpOptions {
        max_iterations: problem.settings.qp_max_iterations,
        kkt_tolerance: problem.settings.kkt_tolerance,
    };
    let mut total_iterations = 0;
    let mut x0: Option<DVector<f64>> = None;
    for _ in 0..20 {
        let data = QpData {
            h: cond.hessian.clone(),
            g: cond.gradient.clone(),
            lb: lb.clone(),
            ub: ub.clone(),
            a: rows.matrix(cond),
            b: rows.rhs.clone(),
            penalty: DVector::from_element(rows.len(), problem.settings.penalty),
        };
        let mut sol = qp::solve(&data, x0.as_ref(), &opts);
        total_iterations += sol.iterations;
        sol.iterations = total_iterations;
        if sol.status != QpStatus::Optimal {
            return Ok((sol, rows));
        }
        let added = rows.add_violated(problem, xbar, cond, constraints, &sol.x);
        if added == 0 {
            return Ok((sol, rows));
        }
        x0 = Some(sol.x.clone());
    }
    Err(Error::InvalidArgument("row screening did not converge".into()))
}

fn input_box(problem: &OcpProblem, ubar: &[InputVector]) -> (DVector<f64>, DVector<f64>) {
    let n = ubar.len() * NU;
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    for (i, u) in ubar.iter().enumerate() {
        for j in 0..NU {
            lb[i * NU + j] = problem.input_lower[j] - u[j];
            ub[i * NU + j] = problem.input_upper[j] - u[j];
        }
    }
    (lb, ub)
}
