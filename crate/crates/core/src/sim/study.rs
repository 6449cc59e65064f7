//! Nominal-versus-robust comparison over seeded scenario sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scenario::{scenario_from_params, Scenario, ScenarioBounds};
use super::{batch_run, Controller, Status};
use crate::config::ControllerConfig;
use crate::error::Result;
use crate::phases::TimeWindows;

/// Mass deviation magnitudes of the comparison table.
pub const DEVIATIONS: [f64; 4] = [0.0, 0.1, 0.2, 0.5];

/// Grasp within 10 s, drop-off within 30 s.
pub fn study_windows() -> TimeWindows {
    TimeWindows::new(0.0, 10.0, 0.0, 30.0).expect("static windows")
}

/// `n` draws from the default scenario box. Scenario `i` uses disturbance seed `i`.
pub fn study_scenarios(n: usize, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = ScenarioBounds::default();
    (0..n)
        .map(|i| scenario_from_params(b.sample(&mut rng), study_windows(), i as u64))
        .collect()
}

/// Applies `+d` to even and `-d` to odd scenarios.
pub fn with_deviation(set: &[Scenario], d: f64) -> Vec<Scenario> {
    set.iter()
        .enumerate()
        .map(|(i, s)| Scenario {
            mass_deviation: if i % 2 == 0 { d } else { -d },
            ..s.clone()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub deviation: f64,
    pub scenario: usize,
    pub controller: Controller,
    pub status: Status,
    pub cost: f64,
    pub t_grasp: Option<f64>,
    pub t_place: Option<f64>,
}

/// One deviation level. Costs are averaged over scenarios both controllers solve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyCell {
    pub deviation: f64,
    pub runs: usize,
    pub nominal_successes: usize,
    pub robust_successes: usize,
    pub common_successes: usize,
    pub nominal_cost: Option<f64>,
    pub robust_cost: Option<f64>,
}

impl StudyCell {
    pub fn nominal_rate(&self) -> f64 {
        self.nominal_successes as f64 / self.runs as f64
    }

    pub fn robust_rate(&self) -> f64 {
        self.robust_successes as f64 / self.runs as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Study {
    pub cells: Vec<StudyCell>,
    pub rows: Vec<StudyRow>,
}

pub fn compare(set: &[Scenario], cfg: &ControllerConfig, deviations: &[f64], jobs: usize) -> Result<Study> {
    let mut study = Study::default();
    for &d in deviations {
        let shifted = with_deviation(set, d);
        let mut outcome = |c: Controller| -> Result<Vec<Option<f64>>> {
            let mut costs = Vec::with_capacity(shifted.len());
            for (i, r) in batch_run(&shifted, c, cfg, jobs)?.into_iter().enumerate() {
                let r = r?;
                study.rows.push(StudyRow {
                    deviation: d,
                    scenario: i,
                    controller: c,
                    status: r.status,
                    cost: r.cost,
                    t_grasp: r.t_grasp,
                    t_place: r.t_place,
                });
                costs.push(r.success().then_some(r.cost));
            }
            Ok(costs)
        };
        let nominal = outcome(Controller::Nominal)?;
        let robust = outcome(Controller::RobustAdaptive)?;
        let both: Vec<(f64, f64)> = nominal
            .iter()
            .zip(&robust)
            .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
            .collect();
        let mean = |f: fn(&(f64, f64)) -> f64| {
            (!both.is_empty()).then(|| both.iter().map(f).sum::<f64>() / both.len() as f64)
        };
        study.cells.push(StudyCell {
            deviation: d,
            runs: set.len(),
            nominal_successes: nominal.iter().flatten().count(),
            robust_successes: robust.iter().flatten().count(),
            common_successes: both.len(),
            nominal_cost: mean(|p| p.0),
            robust_cost: mean(|p| p.1),
        });
    }
    Ok(study)
}
