//! Bayesian optimization: Latin-hypercube start, then expected improvement
//! maximized by multi-start pattern search. Batches use the constant-liar
//! heuristic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::gp::GpSurrogate;
use crate::error::{Error, Result};

/// Outcome of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Evaluation {
    Feasible(f64),
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub budget: usize,
    /// Size of the Latin-hypercube design; `None` means `5 * dim`.
    pub initial: Option<usize>,
    /// Points proposed per acquisition round.
    pub batch: usize,
    /// Random starts of the acquisition search.
    pub restarts: usize,
    /// Exploration offset in standardized units.
    pub xi: f64,
    pub seed: u64,
    /// End the search at the first infeasible evaluation.
    pub stop_on_infeasible: bool,
    pub jobs: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 40,
            initial: None,
            batch: 1,
            restarts: 8,
            xi: 0.01,
            seed: 0,
            stop_on_infeasible: false,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub x: Vec<f64>,
    /// `None` for infeasible evaluations.
    pub value: Option<f64>,
    pub round: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BoOutcome {
    pub best_x: Option<Vec<f64>>,
    pub best_value: Option<f64>,
    pub trace: Vec<TraceEntry>,
    /// Infeasible scenarios, kept out of the GP.
    pub infeasible: Vec<Vec<f64>>,
}

impl BoOutcome {
    /// Every evaluation was infeasible.
    pub fn all_infeasible(&self) -> bool {
        self.best_value.is_none()
    }
}

/// Latin-hypercube sample of `n` points in the unit cube.
pub fn latin_hypercube<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, p) in perm.into_iter().enumerate() {
            pts[i][d] = (p as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    pts
}

/// EI for maximization with predictive mean `mu` and std `sigma`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let gain = mu - best - xi;
    if sigma <= 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (gain * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

fn to_box(u: &[f64], bounds: &[[f64; 2]]) -> Vec<f64> {
    u.iter().zip(bounds).map(|(v, [lo, hi])| lo + v * (hi - lo)).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Compass search on the unit cube.
fn pattern_search<F: Fn(&[f64]) -> f64>(f: &F, start: Vec<f64>) -> (Vec<f64>, f64) {
    let mut x = start;
    let mut fx = f(&x);
    let mut step = 0.1;
    while step > 1e-3 {
        let mut improved = false;
        for d in 0..x.len() {
            for s in [step, -step] {
                let mut y = x.clone();
                y[d] = (y[d] + s).clamp(0.0, 1.0);
                let fy = f(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

struct Proposer<'a> {
    xi: f64,
    restarts: usize,
    infeasible: &'a [Vec<f64>],
}

impl Proposer<'_> {
    fn propose<R: Rng>(&self, xs: &[Vec<f64>], ys: &[f64], gp: &GpSurrogate, rng: &mut R) -> Vec<f64> {
        let dim = xs[0].len();
        let best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = {
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64;
            v.sqrt().max(1e-12)
        };
        let near_infeasible = |u: &[f64]| self.infeasible.iter().any(|b| dist2(u, b) < 4e-4);
        let acq = |u: &[f64]| {
            if near_infeasible(u) {
                return 0.0;
            }
            let (m, v) = gp.predict(u);
            expected_improvement(m, v.sqrt(), best, self.xi * scale)
        };
        let mut order: Vec<usize> = (0..ys.len()).collect();
        order.sort_by(|a, b| ys[*b].total_cmp(&ys[*a]));
        let mut starts: Vec<Vec<f64>> = order.iter().take(3).map(|i| xs[*i].clone()).collect();
        starts.extend((0..self.restarts).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect::<Vec<_>>()));
        let mut best_u = starts[starts.len() - 1].clone();
        let mut best_a = f64::NEG_INFINITY;
        for s in starts {
            let (u, a) = pattern_search(&acq, s);
            let fresh = xs.iter().all(|x| dist2(x, &u) > 1e-10);
            if a > best_a && fresh {
                best_a = a;
                best_u = u;
            }
        }
        if best_a <= 0.0 {
            // Flat acquisition: fall back to a random point.
            best_u = (0..dim).map(|_| rng.gen::<f64>()).collect();
        }
        best_u
    }
}

#[derive(Default)]
struct SearchState {
    out: BoOutcome,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    infeasible_u: Vec<Vec<f64>>,
}

impl SearchState {
    /// Stores one evaluation; returns whether it was infeasible.
    fn record(&mut self, u: Vec<f64>, p: Vec<f64>, e: Evaluation, round: usize) -> Result<bool> {
        match e {
            Evaluation::Feasible(v) => {
                if !v.is_finite() {
                    return Err(Error::NonFinite("objective value"));
                }
                if self.out.best_value.is_none_or(|b| v > b) {
                    self.out.best_value = Some(v);
                    self.out.best_x = Some(p.clone());
                }
                self.out.trace.push(TraceEntry {
                    x: p,
                    value: Some(v),
                    round,
                });
                self.xs.push(u);
                self.ys.push(v);
                Ok(false)
            }
            Evaluation::Infeasible => {
                self.out.trace.push(TraceEntry {
                    x: p.clone(),
                    value: None,
                    round,
                });
                self.out.infeasible.push(p);
                self.infeasible_u.push(u);
                Ok(true)
            }
        }
    }
}

/// Maximizes `objective` over the box `bounds`.
///
/// Infeasible evaluations are excluded from the surrogate and returned
/// separately. Deterministic for a fixed seed and batch size.
pub fn bo_maximize<F>(objective: F, bounds: &[[f64; 2]], cfg: &BoConfig) -> Result<BoOutcome>
where
    F: Fn(&[f64]) -> Result<Evaluation> + Sync,
{
    let dim = bounds.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("empty search box".into()));
    }
    for [lo, hi] in bounds {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::InvalidArgument(format!("bad search bounds [{lo}, {hi}]")));
        }
    }
    if cfg.budget < dim + 2 {
        return Err(Error::InvalidArgument(format!(
            "budget {} is below dim + 2 = {}",
            cfg.budget,
            dim + 2
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut st = SearchState::default();
    let run = |batch: Vec<Vec<f64>>, round: usize, st: &mut SearchState| -> Result<bool> {
        let points: Vec<Vec<f64>> = batch.iter().map(|u| to_box(u, bounds)).collect();
        let evals: Vec<Result<Evaluation>> = pool.install(|| points.par_iter().map(|p| objective(p)).collect());
        let mut stop = false;
        for ((u, p), e) in batch.into_iter().zip(points).zip(evals) {
            stop |= st.record(u, p, e?, round)? && cfg.stop_on_infeasible;
        }
        Ok(stop)
    };

    let n_init = cfg.initial.unwrap_or(5 * dim).clamp(1, cfg.budget);
    let design = latin_hypercube(n_init, dim, &mut rng);
    let mut stop = false;
    for chunk in design.chunks(cfg.batch.max(1)) {
        if run(chunk.to_vec(), 0, &mut st)? {
            stop = true;
            break;
        }
    }

    let mut round = 0;
    while !stop && st.out.trace.len() < cfg.budget {
        round += 1;
        let q = cfg.batch.max(1).min(cfg.budget - st.out.trace.len());
        let mut batch = Vec::with_capacity(q);
        if st.xs.len() < 2 {
            for _ in 0..q {
                batch.push((0..dim).map(|_| rng.gen::<f64>()).collect());
            }
        } else {
            let gp = GpSurrogate::fit(&st.xs, &st.ys)?;
            let mut lx = st.xs.clone();
            let mut ly = st.ys.clone();
            let lie = ly.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut model = gp.clone();
            for j in 0..q {
                let prop = Proposer {
                    xi: cfg.xi,
                    restarts: cfg.restarts,
                    infeasible: &st.infeasible_u,
                };
                let u = prop.propose(&lx, &ly, &model, &mut rng);
                if j + 1 < q {
                    lx.push(u.clone());
                    ly.push(lie);
                    model = GpSurrogate::with_hyper(&lx, &ly, gp.hyper().clone())?;
                }
                batch.push(u);
            }
        }
        stop = run(batch, round, &mut st)?;
    }
    Ok(st.out)
}

/// Uniform random search with the same interface, used as a baseline.
pub fn random_search<F>(objective: F, bounds: &[[f64; 2]], budget: usize, seed: u64) -> Result<BoOutcome>
where
    F: Fn(&[f64]) -> Result<Evaluation>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = SearchState::default();
    for _ in 0..budget {
        let u: Vec<f64> = (0..bounds.len()).map(|_| rng.gen::<f64>()).collect();
        let p = to_box(&u, bounds);
        let e = objective(&p)?;
        st.record(u, p, e, 0)?;
    }
    Ok(st.out)
}
