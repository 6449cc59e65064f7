//! Closed-loop simulation: the plant with latch-on grasping and bounded
//! disturbances, the two moving platforms, and the controller in the loop.

pub mod output;
pub mod platform;
pub mod scenario;
pub mod study;

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ControllerConfig;
use crate::dynamics::{payload_hook_position, GeneralizedState, HookModel, InputVector, StateVector, NX};
use crate::error::{Error, Result};
use crate::estimator::{ekf_step, sync_to_zoro, EkfState};
use crate::ocp::{self, HorizonReferences, OcpInputs, PlatformPose};
use crate::phases::{advance, Phase, PhaseState, TransitionInputs};
use crate::solver::{self, shift_warmstart, SolveStatus, SolverState};
use crate::zoro::compute_backoffs;
pub use platform::{PaperclipPath, PlatformTrajectory};
pub use scenario::{initial_position, scenario_from_params, Scenario, ScenarioBounds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Nominal,
    /// Constraint tightening plus online mass estimation.
    RobustAdaptive,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::Nominal => "nominal",
            Controller::RobustAdaptive => "ramp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Success,
    DeadlineMiss,
    SolverFail,
    ConstraintViolation,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Success => "SUCCESS",
            Status::DeadlineMiss => "DEADLINE_MISS",
            Status::SolverFail => "SOLVER_FAIL",
            Status::ConstraintViolation => "CONSTRAINT_VIOLATION",
        }
    }
}

/// Where a run ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopAt {
    /// As soon as the payload is hooked.
    Grasp,
    /// As soon as the payload is put down.
    Dropoff,
    /// After the unhook phase has settled.
    Complete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub stop: StopAt,
    /// Hard limit on the number of control steps.
    pub max_steps: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stop: StopAt::Complete,
            max_steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub state: StateVector,
    pub input: InputVector,
    pub phase: Phase,
    /// Value of the phase's nonlinear constraint, if the phase has one.
    pub g_nonlinear: Option<f64>,
    /// Largest state-box violation (non-positive when inside).
    pub g_box: f64,
    /// Largest backoff applied in the solve.
    pub backoff: f64,
    pub mass_estimate: f64,
    pub mass_variance: f64,
    pub stage_cost: f64,
    pub solver_ok: bool,
    pub qp_iterations: usize,
    /// Wall time of the controller (s); not reproducible.
    pub solve_time: f64,
}

impl StepRecord {
    pub fn max_violation(&self) -> f64 {
        self.g_nonlinear.map_or(self.g_box, |g| g.max(self.g_box))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub controller: Controller,
    pub status: Status,
    pub t_grasp: Option<f64>,
    pub t_place: Option<f64>,
    /// `max_k max_j g_j` over the run.
    pub max_violation: f64,
    /// Sum of the realized stage costs.
    pub cost: f64,
    pub solver_failures: usize,
    pub deadline_missed: bool,
    pub true_mass: f64,
    pub steps: Vec<StepRecord>,
}

impl SimResult {
    pub fn success(&self) -> bool {
        self.status == Status::Success
    }

    pub fn final_mass_estimate(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.mass_estimate)
    }
}

/// Disturbance uniform on the boundary of `{w : w' W^-1 w <= 1}` with
/// probability `p_boundary`, uniform inside otherwise. `W` is diagonal.
pub fn sample_disturbance<R: Rng>(rng: &mut R, w_diag: &[f64], level: f64, p_boundary: f64) -> StateVector {
    let active: Vec<usize> = (0..w_diag.len()).filter(|&i| w_diag[i] > 0.0).collect();
    let mut w = StateVector::zeros();
    let boundary = rng.gen_bool(p_boundary.clamp(0.0, 1.0));
    let u: f64 = rng.gen();
    if active.is_empty() {
        return w;
    }
    let z: Vec<f64> = active.iter().map(|_| rng.sample(StandardNormal)).collect();
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return w;
    }
    let radius = if boundary { 1.0 } else { u.powf(1.0 / active.len() as f64) };
    for (j, &i) in active.iter().enumerate() {
        w[i] = level * radius * z[j] / norm * w_diag[i].sqrt();
    }
    w
}

/// References for stages `k..=k+n`.
fn references(pick: &PlatformTrajectory, drop: &PlatformTrajectory, t: f64, dt: f64, n: usize) -> HorizonReferences {
    let poses = |traj: &PlatformTrajectory| (0..=n).map(|i| traj.pose(t + i as f64 * dt)).collect::<Vec<PlatformPose>>();
    HorizonReferences {
        pickup: poses(pick),
        dropoff: poses(drop),
    }
}

/// Simulates one scenario with the given controller.
pub fn run_closed_loop(scn: &Scenario, controller: Controller, cfg: &ControllerConfig) -> Result<SimResult> {
    run_with(scn, controller, cfg, RunOptions::default())
}

pub fn run_with(scn: &Scenario, controller: Controller, cfg: &ControllerConfig, opts: RunOptions) -> Result<SimResult> {
    cfg.validate()?;
    scn.validate()?;
    let sim = &cfg.sim;
    let model = Arc::new(HookModel::new(cfg.model.clone())?);
    let dt = sim.dt;
    let n = sim.horizon;
    let pick = PlatformTrajectory::new(sim.path, scn.s_g, scn.v_g)?;
    let drop = PlatformTrajectory::new(sim.path, scn.drop_phase(), scn.drop_speed())?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);

    let robust = controller == Controller::RobustAdaptive;
    // With no parameter uncertainty there is nothing to adapt.
    let adaptive = robust && cfg.uncertainty.w_theta.iter().any(|v| *v != 0.0);
    let mut ekf = EkfState::new(scn.initial_estimate(), &cfg.ekf, &cfg.uncertainty)?;

    let true_mass = scn.true_mass();
    let mut x = GeneralizedState::at_position(scn.start_position()?, 0.0).to_vector();
    let mut phase = if scn.start_attached {
        PhaseState::new(Phase::Transport)
    } else {
        PhaseState::new(Phase::Approach)
    };
    let mut plant_mass = if scn.start_attached { true_mass } else { 0.0 };
    let mut t_grasp = scn.start_attached.then_some(0.0);
    let mut t_place = None;
    let mut deadline_missed = false;

    let predictive_mass = |ekf: &EkfState| if adaptive { ekf.mass() } else { scn.payload_mass };

    let mut warm = SolverState::hold(&x, &model.hover_input(phase.phase.payload_mass(predictive_mass(&ekf))), n);
    let mut prev: Option<(StateVector, InputVector, Phase)> = None;
    let mut steps = Vec::new();
    let max_steps = opts
        .max_steps
        .unwrap_or(usize::MAX)
        .min((sim.t_max / dt).round() as usize + 1);

    for k in 0..max_steps {
        let t = k as f64 * dt;
        crate::error::ensure_finite(x.as_slice(), "plant state")?;
        let x_meas = x;

        // Phase machine on the true state.
        let pick_now = pick.pose(t);
        let drop_now = drop.pose(t);
        let inputs = TransitionInputs {
            hook: model.hook_position(&x_meas),
            payload_hook: payload_hook_position(&pick_now.position, &pick_now.rotation(), cfg.model.payload_hook_standoff),
            payload: model.carried_payload_position(&x_meas),
            drop_platform: drop_now.position,
            rho_h: cfg.model.payload_hook_radius,
            eps_p: sim.eps_p,
        };
        let tr = advance(phase, k as u64, dt, &inputs, &scn.windows);
        if tr.state.phase != phase.phase {
            match tr.state.phase {
                Phase::Transport => {
                    plant_mass = true_mass;
                    t_grasp = Some(t);
                }
                Phase::Unhook => {
                    plant_mass = 0.0;
                    t_place = Some(t);
                }
                _ => {}
            }
        }
        phase = tr.state;
        if tr.deadline_missed {
            deadline_missed = true;
            break;
        }
        let done = match opts.stop {
            StopAt::Grasp => t_grasp.is_some(),
            StopAt::Dropoff => t_place.is_some(),
            StopAt::Complete => t_place.is_some_and(|tp| t >= tp + sim.settle_time - 1e-9),
        };

        let started = Instant::now();
        if adaptive {
            if let Some((xp, up, pp)) = &prev {
                ekf = ekf_step(&ekf, &model, xp, up, &x_meas, *pp, dt)?;
            }
        }
        let mass_hat = predictive_mass(&ekf);
        let refs = references(&pick, &drop, t, dt, n);
        let mut problem = ocp::assemble(
            &model,
            &OcpInputs {
                phase: phase.phase,
                x0: &x_meas,
                refs: &refs,
                payload_mass: mass_hat,
                horizon: n,
                dt,
            },
            &cfg.cost,
            &cfg.bounds,
            &cfg.solver,
        )?;
        let lins = solver::linearize_trajectory(&problem, &warm)?;
        let mut backoff = 0.0;
        if robust {
            let unc = if adaptive { sync_to_zoro(&ekf, &cfg.uncertainty)? } else { cfg.uncertainty.clone() };
            let b = compute_backoffs(&warm, &lins, problem.constraints.as_ref(), &unc)?;
            backoff = b.max_abs();
            problem.backoffs = Some(b);
        }
        let out = solver::rti_step_with(&problem, &x_meas, &warm, &lins)?;
        let solve_time = started.elapsed().as_secs_f64();

        let u = out.input;
        let stage_cost = problem.cost.model(0, &x_meas, &u)?.value;
        let g_nonlinear = (problem.constraints.count(0) > 0)
            .then(|| problem.constraints.evaluate(0, &x_meas).map(|v| v[0].value))
            .transpose()?;
        steps.push(StepRecord {
            t,
            state: x_meas,
            input: u,
            phase: phase.phase,
            g_nonlinear,
            g_box: cfg.bounds.state_violation(&x_meas),
            backoff,
            mass_estimate: mass_hat,
            mass_variance: if adaptive { ekf.p[(0, 0)] } else { 0.0 },
            stage_cost,
            solver_ok: out.state.status == SolveStatus::Success,
            qp_iterations: out.state.qp_iterations,
            solve_time,
        });
        if done {
            break;
        }

        // Plant step with the true mass and a bounded disturbance.
        let h = dt / sim.plant_substeps as f64;
        let mut next = x;
        for _ in 0..sim.plant_substeps {
            next = model.rk4(&next, &u, plant_mass, h)?;
        }
        next += sample_disturbance(&mut rng, &cfg.uncertainty.w_w, sim.disturbance_level, sim.boundary_probability);
        prev = Some((x_meas, u, phase.phase));
        x = next;
        warm = shift_warmstart(&out.state);
    }

    let reached = match opts.stop {
        StopAt::Grasp => t_grasp.is_some(),
        StopAt::Dropoff | StopAt::Complete => t_grasp.is_some() && t_place.is_some(),
    };
    let max_violation = steps.iter().map(StepRecord::max_violation).fold(f64::NEG_INFINITY, f64::max);
    let solver_failures = steps.iter().filter(|s| !s.solver_ok).count();
    let status = if max_violation > 0.0 {
        Status::ConstraintViolation
    } else if solver_failures > 0 {
        Status::SolverFail
    } else if deadline_missed || (!reached && opts.max_steps.is_none()) {
        Status::DeadlineMiss
    } else {
        Status::Success
    };
    Ok(SimResult {
        controller,
        status,
        t_grasp,
        t_place,
        max_violation,
        cost: steps.iter().map(|s| s.stage_cost).sum(),
        solver_failures,
        deadline_missed: deadline_missed || !reached,
        true_mass,
        steps,
    })
}

/// Runs the scenarios on `jobs` worker threads; results keep the input order.
pub fn batch_run(
    scenarios: &[Scenario],
    controller: Controller,
    cfg: &ControllerConfig,
    jobs: usize,
) -> Result<Vec<Result<SimResult>>> {
    if scenarios.is_empty() {
        return Err(Error::InvalidArgument("empty scenario set".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| run_closed_loop(s, controller, cfg))
            .collect()
    }))
}

/// `w' W^-1 w` for a diagonal `W`, infinite if `w` leaves its range.
pub fn disturbance_norm(w: &StateVector, w_diag: &[f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..NX {
        if w_diag[i] > 0.0 {
            q += w[i] * w[i] / w_diag[i];
        } else if w[i] != 0.0 {
            return f64::INFINITY;
        }
    }
    q
}
