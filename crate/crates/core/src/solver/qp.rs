//! Dense primal active-set solver for box-constrained QPs with L1-penalized
//! linear rows:
//!
//! ```text
//! min  0.5 x'Hx + g'x + sum_j rho_j * max(0, a_j'x - b_j)
//! s.t. lb <= x <= ub
//! ```
//!
//! Each soft row is tracked as below, above or on its breakpoint. Rows on the
//! breakpoint act as equalities whose multipliers must lie in `[0, rho_j]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Position of a soft row relative to its breakpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowState {
    Below,
    Above,
    Equal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BoundState {
    Free,
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    /// Some `lb > ub` or a non-finite datum.
    InvalidData,
    /// A factorization failed or the final KKT check did not pass.
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct QpData {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// Soft rows, one per matrix row.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub penalty: DVector<f64>,
}

impl QpData {
    pub fn box_only(h: DMatrix<f64>, g: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            lb,
            ub,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            penalty: DVector::zeros(0),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Objective including the active penalty terms.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut f = 0.5 * x.dot(&(&self.h * x)) + self.g.dot(x);
        for j in 0..self.m() {
            let v = self.a.row(j).transpose().dot(x) - self.b[j];
            f += self.penalty[j] * v.max(0.0);
        }
        f
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Signed bound multipliers: positive for an active upper bound,
    /// negative for an active lower bound.
    pub bound_multipliers: DVector<f64>,
    pub row_multipliers: DVector<f64>,
    pub row_states: Vec<RowState>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Clone, Debug)]
pub struct QpOptions {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            kkt_tolerance: 1e-7,
        }
    }
}

const STEP_EPS: f64 = 1e-14;

struct Workspace<'a> {
    qp: &'a QpData,
    bounds: Vec<BoundState>,
    rows: Vec<RowState>,
    chol: Option<(Vec<usize>, Cholesky<f64, Dyn>)>,
}

impl<'a> Workspace<'a> {
    fn free_indices(&self) -> Vec<usize> {
        (0..self.qp.n())
            .filter(|&i| self.bounds[i] == BoundState::Free)
            .collect()
    }

    fn factor(&mut self, free: &[usize]) -> Option<&Cholesky<f64, Dyn>> {
        let stale = match &self.chol {
            Some((f, _)) => f.as_slice() != free,
            None => true,
        };
        if stale {
            let nf = free.len();
            let hff = DMatrix::from_fn(nf, nf, |r, c| self.qp.h[(free[r], free[c])]);
            let chol = Cholesky::new(hff)?;
            self.chol = Some((free.to_vec(), chol));
        }
        self.chol.as_ref().map(|(_, c)| c)
    }

    fn linear_term(&self) -> DVector<f64> {
        let mut g = self.qp.g.clone();
        for (j, s) in self.rows.iter().enumerate() {
            if *s == RowState::Above {
                g.axpy(self.qp.penalty[j], &self.qp.a.row(j).transpose(), 1.0);
            }
        }
        g
    }

    /// Minimizer over the current working set, plus the multipliers of the
    /// rows on their breakpoints (in working-set order).
    fn solve_eqp(&mut self, x: &DVector<f64>) -> Option<(DVector<f64>, Vec<usize>, DVector<f64>)> {
        let qp = self.qp;
        let n = qp.n();
        let free = self.free_indices();
        let fixed: Vec<usize> = (0..n).filter(|&i| self.bounds[i] != BoundState::Free).collect();
        let eq: Vec<usize> = (0..qp.m()).filter(|&j| self.rows[j] == RowState::Equal).collect();
        let g = self.linear_term();

        let mut out = x.clone();
        for &i in &fixed {
            out[i] = match self.bounds[i] {
                BoundState::Lower => qp.lb[i],
                BoundState::Upper => qp.ub[i],
                BoundState::Free => unreachable!(),
            };
        }
        if free.is_empty() {
            return if eq.is_empty() {
                Some((out, eq, DVector::zeros(0)))
            } else {
                None
            };
        }
        let nf = free.len();
        let mut rhs = DVector::from_fn(nf, |r, _| -g[free[r]]);
        for (r, &i) in free.iter().enumerate() {
            for &j in &fixed {
                rhs[r] -= qp.h[(i, j)] * out[j];
            }
        }
        let chol = self.factor(&free)?.clone();
        let base = chol.solve(&rhs);
        let mut mu = DVector::zeros(eq.len());
        let mut xf = base.clone();
        if !eq.is_empty() {
            let w = eq.len();
            let aef = DMatrix::from_fn(w, nf, |r, c| qp.a[(eq[r], free[c])]);
            let y = chol.solve(&aef.transpose());
            let s = &aef * &y;
            let mut d = &aef * &base;
            for (r, &j) in eq.iter().enumerate() {
                let mut fixed_part = 0.0;
                for &i in &fixed {
                    fixed_part += qp.a[(j, i)] * out[i];
                }
                d[r] -= qp.b[j] - fixed_part;
            }
            mu = Cholesky::new(s)?.solve(&d);
            xf -= &y * &mu;
        }
        for (r, &i) in free.iter().enumerate() {
            out[i] = xf[r];
        }
        Some((out, eq, mu))
    }
}

pub fn solve(qp: &QpData, x0: Option<&DVector<f64>>, opts: &QpOptions) -> QpSolution {
    let n = qp.n();
    let m = qp.m();
    let invalid = |x: DVector<f64>| QpSolution {
        x,
        bound_multipliers: DVector::zeros(n),
        row_multipliers: DVector::zeros(m),
        row_states: vec![RowState::Below; m],
        status: QpStatus::InvalidData,
        iterations: 0,
        kkt_residual: f64::INFINITY,
    };
    let finite = qp.h.iter().chain(qp.g.iter()).chain(qp.a.iter()).chain(qp.b.iter()).all(|v| v.is_finite())
        && qp.penalty.iter().all(|p| p.is_finite() && *p >= 0.0)
        && qp.lb.iter().zip(qp.ub.iter()).all(|(l, u)| l <= u && !l.is_nan() && !u.is_nan());
    if !finite || qp.h.nrows() != n || qp.h.ncols() != n || qp.a.nrows() != m || qp.a.ncols() != n {
        return invalid(DVector::zeros(n));
    }

    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.clone(),
        _ => DVector::zeros(n),
    };
    let mut bounds = vec![BoundState::Free; n];
    for i in 0..n {
        if qp.lb[i] == qp.ub[i] {
            x[i] = qp.lb[i];
            bounds[i] = BoundState::Lower;
        } else if x[i] <= qp.lb[i] {
            x[i] = qp.lb[i];
            bounds[i] = BoundState::Lower;
        } else if x[i] >= qp.ub[i] {
            x[i] = qp.ub[i];
            bounds[i] = BoundState::Upper;
        }
    }
    let rows = (0..m)
        .map(|j| {
            if qp.a.row(j).transpose().dot(&x) > qp.b[j] {
                RowState::Above
            } else {
                RowState::Below
            }
        })
        .collect();
    let mut ws = Workspace {
        qp,
        bounds,
        rows,
        chol: None,
    };

    let mut iterations = 0;
    loop {
        if iterations >= opts.max_iterations {
            return finish(&ws, x, DVector::zeros(0), &[], QpStatus::MaxIterations, iterations, opts);
        }
        iterations += 1;
        let Some((target, eq, mu)) = ws.solve_eqp(&x) else {
            return finish(&ws, x, DVector::zeros(0), &[], QpStatus::NumericalFailure, iterations, opts);
        };
        let p = &target - &x;

        let mut alpha = 1.0;
        let mut blocking: Option<Blocking> = None;
        for i in 0..n {
            if ws.bounds[i] != BoundState::Free {
                continue;
            }
            if p[i] > STEP_EPS {
                let a = ((qp.ub[i] - x[i]) / p[i]).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some(Blocking::Bound(i, BoundState::Upper));
                }
            } else if p[i] < -STEP_EPS {
                let a = ((qp.lb[i] - x[i]) / p[i]).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some(Blocking::Bound(i, BoundState::Lower));
                }
            }
        }
        for j in 0..m {
            let state = ws.rows[j];
            if state == RowState::Equal {
                continue;
            }
            let row = qp.a.row(j);
            let slope = row.transpose().dot(&p);
            let gap = qp.b[j] - row.transpose().dot(&x);
            let crossing = match state {
                RowState::Below => slope > STEP_EPS,
                RowState::Above => slope < -STEP_EPS,
                RowState::Equal => false,
            };
            if crossing {
                let a = (gap / slope).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some(Blocking::Row(j));
                }
            }
        }

        match blocking {
            Some(block) if alpha < 1.0 => {
                x.axpy(alpha, &p, 1.0);
                match block {
                    Blocking::Bound(i, side) => {
                        x[i] = if side == BoundState::Upper { qp.ub[i] } else { qp.lb[i] };
                        ws.bounds[i] = side;
                    }
                    Blocking::Row(j) => ws.rows[j] = RowState::Equal,
                    Blocking::ReleaseRow(..) => unreachable!(),
                }
            }
            _ => {
                x = target;
                let (nu, _) = bound_multipliers(&ws, &x, &eq, &mu);
                // Most violated multiplier sign condition, scaled per row.
                let mut worst = 0.0;
                let mut release: Option<Blocking> = None;
                for i in 0..n {
                    let v = match ws.bounds[i] {
                        BoundState::Upper => -nu[i],
                        BoundState::Lower => nu[i],
                        BoundState::Free => continue,
                    };
                    if v > worst {
                        worst = v;
                        release = Some(Blocking::Bound(i, BoundState::Free));
                    }
                }
                for (r, &j) in eq.iter().enumerate() {
                    let scale = qp.a.row(j).amax().max(1e-300);
                    let low = -mu[r] * scale;
                    let high = (mu[r] - qp.penalty[j]) * scale;
                    if low > worst {
                        worst = low;
                        release = Some(Blocking::ReleaseRow(j, RowState::Below));
                    }
                    if high > worst {
                        worst = high;
                        release = Some(Blocking::ReleaseRow(j, RowState::Above));
                    }
                }
                let dual_tol = 1e-11 * (1.0 + qp.g.amax());
                match release {
                    Some(action) if worst > dual_tol => match action {
                        Blocking::Bound(i, _) => ws.bounds[i] = BoundState::Free,
                        Blocking::ReleaseRow(j, s) => ws.rows[j] = s,
                        Blocking::Row(_) => unreachable!(),
                    },
                    _ => {
                        return finish(&ws, x, mu, &eq, QpStatus::Optimal, iterations, opts);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Blocking {
    Bound(usize, BoundState),
    Row(usize),
    ReleaseRow(usize, RowState),
}

/// Full row multiplier vector and signed bound multipliers at `x`.
fn bound_multipliers(ws: &Workspace, x: &DVector<f64>, eq: &[usize], mu: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let qp = ws.qp;
    let mut rm = DVector::zeros(qp.m());
    for (j, s) in ws.rows.iter().enumerate() {
        if *s == RowState::Above {
            rm[j] = qp.penalty[j];
        }
    }
    for (r, &j) in eq.iter().enumerate() {
        rm[j] = mu[r];
    }
    let grad = &qp.h * x + &qp.g + qp.a.tr_mul(&rm);
    let mut nu = DVector::zeros(qp.n());
    for i in 0..qp.n() {
        if ws.bounds[i] != BoundState::Free {
            nu[i] = -grad[i];
        }
    }
    (nu, rm)
}

fn finish(
    ws: &Workspace,
    x: DVector<f64>,
    mu: DVector<f64>,
    eq: &[usize],
    status: QpStatus,
    iterations: usize,
    opts: &QpOptions,
) -> QpSolution {
    let qp = ws.qp;
    let mu = if mu.len() == eq.len() { mu } else { DVector::zeros(eq.len()) };
    let (nu, rm) = bound_multipliers(ws, &x, eq, &mu);
    let kkt = kkt_residual(qp, &x, &nu, &rm);
    let status = if status == QpStatus::Optimal && !(kkt < opts.kkt_tolerance) {
        log::debug!("QP KKT check failed: residual {kkt:e}");
        QpStatus::NumericalFailure
    } else {
        status
    };
    QpSolution {
        x,
        bound_multipliers: nu,
        row_multipliers: rm,
        row_states: ws.rows.clone(),
        status,
        iterations,
        kkt_residual: kkt,
    }
}

/// Scaled KKT residual of a candidate primal-dual point.
///
/// `nu` holds signed bound multipliers and `rm` the row multipliers, which
/// must be subgradients of the penalty terms at `x`.
pub fn kkt_residual(qp: &QpData, x: &DVector<f64>, nu: &DVector<f64>, rm: &DVector<f64>) -> f64 {
    let n = qp.n();
    let grad_scale = 1.0
        + qp.g.amax()
        + (0..qp.m()).map(|j| qp.penalty[j] * qp.a.row(j).amax()).fold(0.0, f64::max)
        + (&qp.h * x).amax();
    let stationarity = (&qp.h * x + &qp.g + qp.a.tr_mul(rm) + nu).amax() / grad_scale;

    let x_scale = 1.0 + x.amax();
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..n {
        primal = primal.max(qp.lb[i] - x[i]).max(x[i] - qp.ub[i]);
        let upper_gap = (qp.ub[i] - x[i]) / x_scale;
        let lower_gap = (x[i] - qp.lb[i]) / x_scale;
        if nu[i] > 0.0 {
            comp = comp.max(nu[i].min(upper_gap.abs() * grad_scale) / grad_scale);
        } else if nu[i] < 0.0 {
            comp = comp.max((-nu[i]).min(lower_gap.abs() * grad_scale) / grad_scale);
        }
    }
    for j in 0..qp.m() {
        let row = qp.a.row(j);
        let v = row.transpose().dot(x) - qp.b[j];
        let scale = 1.0 + qp.b[j].abs() + row.amax() * x.amax();
        let rho = qp.penalty[j];
        dual = dual.max(-rm[j]).max(rm[j] - rho);
        // Subgradient consistency: rm = 0 below, rm = rho above.
        if v < 0.0 {
            comp = comp.max(rm[j].min(-v / scale * grad_scale) / grad_scale);
        } else if v > 0.0 {
            comp = comp.max((rho - rm[j]).min(v / scale * grad_scale) / grad_scale);
        }
    }
    stationarity
        .max(primal / x_scale)
        .max(dual / grad_scale)
        .max(comp)
}
