//! Grasp and placement window searches.
//!
//! Feasibility over a scenario set is certified approximately: a BO search
//! for the worst case that stops at the first infeasible scenario, followed
//! by a random validation sample.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bo::{bo_maximize, BoConfig, BoOutcome, Evaluation};
use crate::config::ControllerConfig;
use crate::error::{Error, Result};
use crate::phases::TimeWindows;
use crate::sim::scenario::{scenario_from_params, Scenario, ScenarioBounds};
use crate::sim::{run_with, Controller, RunOptions, SimResult, Status, StopAt};

pub const GRASP_ADVICE: &str = "increase the latest grasp time or restrict the scenario set";
pub const PLACE_ADVICE: &str = "increase the latest drop-off time or restrict the scenario set";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSearchConfig {
    pub bounds: ScenarioBounds,
    /// Latest admissible grasp time `T_g^max` (s).
    pub grasp_hi_max: f64,
    /// Latest admissible drop-off time `T_p^max` (s), measured from the
    /// start of a pre-attached run.
    pub place_hi_max: f64,
    /// Bisection tolerance (s).
    pub eps_t: f64,
    /// Random scenarios checked after each BO certification.
    pub validation: usize,
    /// Disturbance seed shared by every simulated scenario.
    pub scenario_seed: u64,
    pub bo: BoConfig,
}

impl Default for WindowSearchConfig {
    fn default() -> Self {
        Self {
            bounds: ScenarioBounds::default(),
            grasp_hi_max: 10.0,
            place_hi_max: 20.0,
            eps_t: 0.1,
            validation: 20,
            scenario_seed: 0,
            bo: BoConfig::default(),
        }
    }
}

impl WindowSearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.eps_t > 0.0 && self.grasp_hi_max > self.eps_t) {
            return Err(Error::InvalidArgument(format!(
                "need grasp_hi_max > eps_t > 0, got {} and {}",
                self.grasp_hi_max, self.eps_t
            )));
        }
        if !(self.place_hi_max > 0.0) || !self.place_hi_max.is_finite() {
            return Err(Error::InvalidArgument(format!("place_hi_max must be positive, got {}", self.place_hi_max)));
        }
        Ok(())
    }

    /// Payload mass used before the grasp, where it has no effect.
    pub fn grasp_mass(&self) -> f64 {
        0.5 * (self.bounds.mass[0] + self.bounds.mass[1])
    }

    /// `[p_xy, s_g, v_g]` box.
    pub fn grasp_box(&self) -> Vec<[f64; 2]> {
        vec![self.bounds.p_xy, self.bounds.s, self.bounds.v]
    }

    /// `[p_xy, s_g, v_g, m_L]` box.
    pub fn place_box(&self) -> Vec<[f64; 2]> {
        vec![self.bounds.p_xy, self.bounds.s, self.bounds.v, self.bounds.mass]
    }

    /// Grasp-phase scenario for `eta = [p_xy, s_g, v_g]`.
    pub fn grasp_scenario(&self, eta: &[f64], lo: f64, hi: f64) -> Result<Scenario> {
        if eta.len() != 3 {
            return Err(Error::Dimension(format!("grasp scenario has 3 entries, got {}", eta.len())));
        }
        let windows = TimeWindows::new(lo, hi, hi, hi + self.place_hi_max)?;
        Ok(scenario_from_params(
            [eta[0], eta[1], eta[2], self.grasp_mass()],
            windows,
            self.scenario_seed,
        ))
    }

    /// Pre-attached scenario for `mu = [p_xy, s_g, v_g, m_L]`.
    pub fn place_scenario(&self, mu: &[f64], hi: f64) -> Result<Scenario> {
        let [p, s, v, m] = <[f64; 4]>::try_from(mu)
            .map_err(|_| Error::Dimension(format!("placement scenario has 4 entries, got {}", mu.len())))?;
        let windows = TimeWindows::new(0.0, hi, 0.0, hi)?;
        let mut scn = scenario_from_params([p, s, v, m], windows, self.scenario_seed);
        scn.start_attached = true;
        Ok(scn)
    }
}

/// One simulated scenario in a search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationRecord {
    pub stage: String,
    pub window: [f64; 2],
    pub scenario: Vec<f64>,
    pub status: Status,
    /// Grasp or drop-off time, when reached.
    pub event_time: Option<f64>,
    pub max_violation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WindowSearchResult {
    pub feasible: bool,
    pub advice: Option<String>,
    pub grasp_hi_max: Option<f64>,
    /// Smallest certified grasp-window start.
    pub grasp_lo_star: Option<f64>,
    /// Worst-case grasp time with the window `[grasp_lo_star, grasp_hi_max]`.
    pub grasp_hi_star: Option<f64>,
    pub worst_grasp_scenario: Option<Vec<f64>>,
    /// Scenario that fails with the window starting one tolerance earlier.
    pub grasp_lower_witness: Option<Vec<f64>>,
    pub nu_grasp_star: Option<f64>,
    pub worst_grasp_violation_scenario: Option<Vec<f64>>,
    pub place_hi_max: Option<f64>,
    /// Worst-case drop-off time with the window `[0, place_hi_max]`.
    pub place_hi_star: Option<f64>,
    pub worst_place_scenario: Option<Vec<f64>>,
    pub nu_place_star: Option<f64>,
    pub worst_place_violation_scenario: Option<Vec<f64>>,
    pub evaluations: usize,
    pub trace: Vec<EvaluationRecord>,
}

impl WindowSearchResult {
    /// Combines a grasp and a placement search.
    pub fn merge(grasp: WindowSearchResult, place: WindowSearchResult) -> Self {
        let mut trace = grasp.trace;
        trace.extend(place.trace);
        let advice = match (grasp.advice, place.advice) {
            (Some(a), Some(b)) => Some(format!("{a}; {b}")),
            (a, b) => a.or(b),
        };
        Self {
            feasible: grasp.feasible && place.feasible,
            advice,
            place_hi_max: place.place_hi_max,
            place_hi_star: place.place_hi_star,
            worst_place_scenario: place.worst_place_scenario,
            nu_place_star: place.nu_place_star,
            worst_place_violation_scenario: place.worst_place_violation_scenario,
            evaluations: grasp.evaluations + place.evaluations,
            trace,
            ..Self {
                advice: None,
                trace: Vec::new(),
                ..grasp
            }
        }
    }
}

/// Result of a worst-case violation search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViolationResult {
    /// `max_k max_j g_j` at the worst scenario found.
    pub nu_star: f64,
    pub scenario: Vec<f64>,
    pub admissible: bool,
    pub outcome: BoOutcome,
}

/// Maximizes the per-run constraint value over steps `0..=n_bar`.
pub fn violation_search<M>(
    cfg: &ControllerConfig,
    make: M,
    bounds: &[[f64; 2]],
    n_bar: usize,
    bo: &BoConfig,
) -> Result<ViolationResult>
where
    M: Fn(&[f64]) -> Result<Scenario> + Sync,
{
    let opts = RunOptions {
        stop: StopAt::Complete,
        max_steps: Some(n_bar + 1),
    };
    let bo = BoConfig {
        stop_on_infeasible: false,
        ..bo.clone()
    };
    let outcome = bo_maximize(
        |x| {
            let r = run_with(&make(x)?, Controller::RobustAdaptive, cfg, opts)?;
            Ok(Evaluation::Feasible(r.max_violation))
        },
        bounds,
        &bo,
    )?;
    let (Some(scenario), Some(nu_star)) = (outcome.best_x.clone(), outcome.best_value) else {
        return Err(Error::InvalidArgument("violation search produced no evaluation".into()));
    };
    Ok(ViolationResult {
        nu_star,
        admissible: nu_star <= 0.0,
        scenario,
        outcome,
    })
}

struct Certificate {
    feasible: bool,
    worst: Option<(Vec<f64>, f64)>,
    witness: Option<Vec<f64>>,
}

type CacheKey = (u64, Vec<u64>);

/// Simulation bookkeeping shared by the certifications of one search.
struct Searcher<'a> {
    cfg: &'a ControllerConfig,
    search: &'a WindowSearchConfig,
    stage: &'static str,
    cache: Mutex<HashMap<CacheKey, EvaluationRecord>>,
    trace: Vec<EvaluationRecord>,
    evaluations: usize,
    certifications: u64,
}

fn key(window: f64, x: &[f64]) -> CacheKey {
    (window.to_bits(), x.iter().map(|v| v.to_bits()).collect())
}

impl<'a> Searcher<'a> {
    fn new(cfg: &'a ControllerConfig, search: &'a WindowSearchConfig, stage: &'static str) -> Self {
        Self {
            cfg,
            search,
            stage,
            cache: Mutex::new(HashMap::new()),
            trace: Vec::new(),
            evaluations: 0,
            certifications: 0,
        }
    }

    /// Window parameter: the grasp-window start or the drop-off deadline.
    fn simulate(&self, window: f64, x: &[f64]) -> Result<EvaluationRecord> {
        if let Some(r) = self.cache.lock().expect("cache lock").get(&key(window, x)) {
            return Ok(r.clone());
        }
        let (res, w): (SimResult, [f64; 2]) = if self.stage == "grasp" {
            let hi = self.search.grasp_hi_max;
            let scn = self.search.grasp_scenario(x, window, hi)?;
            let r = run_with(
                &scn,
                Controller::RobustAdaptive,
                self.cfg,
                RunOptions {
                    stop: StopAt::Grasp,
                    max_steps: None,
                },
            )?;
            (r, [window, hi])
        } else {
            let scn = self.search.place_scenario(x, window)?;
            let r = run_with(
                &scn,
                Controller::RobustAdaptive,
                self.cfg,
                RunOptions {
                    stop: StopAt::Dropoff,
                    max_steps: None,
                },
            )?;
            (r, [0.0, window])
        };
        let rec = EvaluationRecord {
            stage: self.stage.to_string(),
            window: w,
            scenario: x.to_vec(),
            status: res.status,
            event_time: if self.stage == "grasp" { res.t_grasp } else { res.t_place },
            max_violation: res.max_violation,
        };
        self.cache.lock().expect("cache lock").insert(key(window, x), rec.clone());
        Ok(rec)
    }

    fn evaluation(rec: &EvaluationRecord) -> Evaluation {
        match (rec.status, rec.event_time) {
            (Status::Success, Some(t)) => Evaluation::Feasible(t),
            _ => Evaluation::Infeasible,
        }
    }

    fn bounds(&self) -> Vec<[f64; 2]> {
        if self.stage == "grasp" {
            self.search.grasp_box()
        } else {
            self.search.place_box()
        }
    }

    /// BO worst case plus random validation for one window.
    fn certify(&mut self, window: f64) -> Result<Certificate> {
        self.certifications += 1;
        let bounds = self.bounds();
        let bo = BoConfig {
            stop_on_infeasible: true,
            ..self.search.bo.clone()
        };
        let outcome = {
            let this = &*self;
            bo_maximize(|x| Ok(Self::evaluation(&this.simulate(window, x)?)), &bounds, &bo)?
        };
        for entry in &outcome.trace {
            let rec = self.simulate(window, &entry.x)?;
            self.push(rec);
        }
        let mut worst = outcome.best_x.clone().zip(outcome.best_value);
        if let Some(w) = outcome.infeasible.first() {
            return Ok(Certificate {
                feasible: false,
                worst,
                witness: Some(w.clone()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.search.bo.seed ^ 0x9e37_79b9_7f4a_7c15);
        for _ in 0..self.search.validation {
            let x: Vec<f64> = bounds
                .iter()
                .map(|[lo, hi]| if hi > lo { rng.gen_range(*lo..=*hi) } else { *lo })
                .collect();
            let rec = self.simulate(window, &x)?;
            let eval = Self::evaluation(&rec);
            self.push(EvaluationRecord {
                stage: format!("{}-validation", self.stage),
                ..rec
            });
            match eval {
                Evaluation::Infeasible => {
                    return Ok(Certificate {
                        feasible: false,
                        worst,
                        witness: Some(x),
                    })
                }
                Evaluation::Feasible(v) => {
                    if worst.as_ref().is_none_or(|(_, b)| v > *b) {
                        worst = Some((x, v));
                    }
                }
            }
        }
        Ok(Certificate {
            feasible: true,
            worst,
            witness: None,
        })
    }

    fn push(&mut self, rec: EvaluationRecord) {
        self.evaluations += 1;
        self.trace.push(rec);
    }
}

/// Searches the smallest certified grasp-window start for the latest grasp
/// time `grasp_hi_max`, then the worst-case grasp time and violation.
pub fn grasp_window_search(cfg: &ControllerConfig, search: &WindowSearchConfig) -> Result<WindowSearchResult> {
    cfg.validate()?;
    search.validate()?;
    let hi = search.grasp_hi_max;
    let eps = search.eps_t;
    let mut s = Searcher::new(cfg, search, "grasp");
    let mut result = WindowSearchResult {
        grasp_hi_max: Some(hi),
        ..WindowSearchResult::default()
    };

    // Enlarge the window until every scenario is feasible.
    let mut width = eps;
    let (mut lo, mut cert) = loop {
        let lo = (hi - width).max(0.0);
        let c = s.certify(lo)?;
        if c.feasible {
            break (lo, c);
        }
        if lo == 0.0 {
            result.advice = Some(GRASP_ADVICE.to_string());
            result.grasp_lower_witness = c.witness;
            result.evaluations = s.evaluations;
            result.trace = s.trace;
            return Ok(result);
        }
        width *= 2.0;
    };

    // Bisection between an infeasible start below and the feasible one.
    let mut witness = None;
    if lo > 0.0 {
        let c0 = s.certify(0.0)?;
        if c0.feasible {
            lo = 0.0;
            cert = c0;
        } else {
            let mut bad = 0.0;
            witness = c0.witness;
            while lo - bad > eps {
                let mid = 0.5 * (lo + bad);
                let c = s.certify(mid)?;
                if c.feasible {
                    lo = mid;
                    cert = c;
                } else {
                    bad = mid;
                    witness = c.witness;
                }
            }
        }
    }
    // Confirm one tolerance below; step down while that is still feasible.
    while lo - eps >= 0.0 {
        let c = s.certify(lo - eps)?;
        if c.feasible {
            lo -= eps;
            cert = c;
        } else {
            witness = c.witness;
            break;
        }
    }
    if lo < eps {
        witness = None;
    }

    let (worst_x, worst_t) = cert
        .worst
        .ok_or_else(|| Error::InvalidArgument("feasible certification without evaluations".into()))?;
    let dt = cfg.sim.dt;
    let n_bar = (worst_t / dt).round() as usize;
    let viol = violation_search(cfg, |x| search.grasp_scenario(x, lo, hi), &search.grasp_box(), n_bar, &search.bo)?;

    result.feasible = viol.admissible;
    if !viol.admissible {
        result.advice = Some(GRASP_ADVICE.to_string());
    }
    result.grasp_lo_star = Some(lo);
    result.grasp_hi_star = Some(worst_t);
    result.worst_grasp_scenario = Some(worst_x);
    result.grasp_lower_witness = witness;
    result.nu_grasp_star = Some(viol.nu_star);
    result.worst_grasp_violation_scenario = Some(viol.scenario);
    result.evaluations = s.evaluations + viol.outcome.trace.len();
    result.trace = s.trace;
    Ok(result)
}

/// Worst-case drop-off time over pre-attached scenarios with the window
/// `[0, place_hi_max]`, and the worst-case violation up to that time.
pub fn placement_window_search(cfg: &ControllerConfig, search: &WindowSearchConfig) -> Result<WindowSearchResult> {
    cfg.validate()?;
    search.validate()?;
    let hi = search.place_hi_max;
    let mut s = Searcher::new(cfg, search, "place");
    let cert = s.certify(hi)?;
    let mut result = WindowSearchResult {
        place_hi_max: Some(hi),
        ..WindowSearchResult::default()
    };
    if !cert.feasible {
        result.advice = Some(PLACE_ADVICE.to_string());
        result.worst_place_scenario = cert.witness;
        result.evaluations = s.evaluations;
        result.trace = s.trace;
        return Ok(result);
    }
    let (worst_x, worst_t) = cert
        .worst
        .ok_or_else(|| Error::InvalidArgument("feasible certification without evaluations".into()))?;
    let n_bar = (worst_t / cfg.sim.dt).round() as usize;
    let viol = violation_search(cfg, |x| search.place_scenario(x, hi), &search.place_box(), n_bar, &search.bo)?;

    result.feasible = viol.admissible;
    if !viol.admissible {
        result.advice = Some(PLACE_ADVICE.to_string());
    }
    result.place_hi_star = Some(worst_t);
    result.worst_place_scenario = Some(worst_x);
    result.nu_place_star = Some(viol.nu_star);
    result.worst_place_violation_scenario = Some(viol.scenario);
    result.evaluations = s.evaluations + viol.outcome.trace.len();
    result.trace = s.trace;
    Ok(result)
}

/// Both searches; the placement deadline is relative to the grasp.
pub fn window_search(cfg: &ControllerConfig, search: &WindowSearchConfig) -> Result<WindowSearchResult> {
    let grasp = grasp_window_search(cfg, search)?;
    let place = placement_window_search(cfg, search)?;
    Ok(WindowSearchResult::merge(grasp, place))
}
