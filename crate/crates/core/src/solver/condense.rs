//! Condensing of the multiple-shooting QP onto the input increments.
//!
//! With `dx_0 = x0 - xbar_0` and `dx_{i+1} = A_i dx_i + B_i du_i + d_i`, every
//! state increment is affine in the stacked inputs: `dx_i = c_i + Gamma_i du`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::{ConstraintValue, CostModel, Linearization, OcpProblem, RowKey};
use crate::dynamics::{StateVector, NU, NX};

pub struct Condensed {
    pub horizon: usize,
    /// Free response `c_i`, stages `0..=N`.
    pub offsets: Vec<StateVector>,
    /// Block lower-triangular sensitivity; block row `i - 1` belongs to stage `i`.
    pub gamma: DMatrix<f64>,
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
}

impl Condensed {
    pub fn build(
        x0: &StateVector,
        xbar: &[StateVector],
        lins: &[Linearization],
        costs: &[CostModel],
        regularization: f64,
    ) -> Self {
        let n = lins.len();
        let nv = n * NU;
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(x0 - xbar[0]);
        for i in 0..n {
            let d = lins[i].next - xbar[i + 1];
            offsets.push(lins[i].a * offsets[i] + d);
        }

        let mut gamma = DMatrix::zeros(n * NX, nv);
        for r in 0..n {
            gamma
                .view_mut((r * NX, r * NU), (NX, NU))
                .copy_from(&lins[r].b);
            if r > 0 {
                let a = &lins[r].a;
                for j in 0..r {
                    let prev = gamma.fixed_view::<NX, NU>((r - 1) * NX, j * NU).into_owned();
                    gamma
                        .fixed_view_mut::<NX, NU>(r * NX, j * NU)
                        .copy_from(&(a * prev));
                }
            }
        }

        let mut hessian = DMatrix::zeros(nv, nv);
        let mut gradient = DVector::zeros(nv);
        for (i, c) in costs.iter().enumerate() {
            hessian
                .view_mut((i * NU, i * NU), (NU, NU))
                .copy_from(&c.hess_u);
            gradient.rows_mut(i * NU, NU).copy_from(&c.grad_u);
        }
        // Stage 0 state is fixed; stage N carries no cost.
        for i in 1..n {
            let cols = i * NU;
            let gi = gamma.view(((i - 1) * NX, 0), (NX, cols));
            let hx = DMatrix::from_column_slice(NX, NX, costs[i].hess_x.as_slice());
            let weighted = &hx * gi;
            hessian
                .view_mut((0, 0), (cols, cols))
                .gemm_tr(1.0, &gi, &weighted, 1.0);
            let q = costs[i].hess_x * offsets[i] + costs[i].grad_x;
            let q = DVector::from_column_slice(q.as_slice());
            gradient.rows_mut(0, cols).gemv_tr(1.0, &gi, &q, 1.0);
        }
        for k in 0..nv {
            hessian[(k, k)] += regularization;
        }
        // Remove the round-off asymmetry of the products.
        let sym = (&hessian + hessian.transpose()) * 0.5;

        Self {
            horizon: n,
            offsets,
            gamma,
            hessian: sym,
            gradient,
        }
    }

    /// `dx_i = c_i + Gamma_i du` for all stages.
    pub fn state_increments(&self, du: &DVector<f64>) -> Vec<StateVector> {
        let mut out = Vec::with_capacity(self.horizon + 1);
        out.push(self.offsets[0]);
        for i in 1..=self.horizon {
            let cols = i * NU;
            let gi = self.gamma.view(((i - 1) * NX, 0), (NX, cols));
            let v = gi * du.rows(0, cols);
            out.push(self.offsets[i] + StateVector::from_column_slice(v.as_slice()));
        }
        out
    }

    /// `Gamma_i' dir` padded to the full input dimension.
    fn row(&self, stage: usize, dir: &StateVector) -> DVector<f64> {
        let mut out = DVector::zeros(self.horizon * NU);
        let cols = stage * NU;
        let gi = self.gamma.view(((stage - 1) * NX, 0), (NX, cols));
        let d = DVector::from_column_slice(dir.as_slice());
        out.rows_mut(0, cols).gemv_tr(1.0, &gi, &d, 0.0);
        out
    }
}

struct Row {
    key: RowKey,
    stage: usize,
    dir: StateVector,
}

/// Soft rows currently in the QP. Row `j` reads `dir' dx_stage <= rhs_j`.
pub struct RowSet {
    rows: Vec<Row>,
    keys: BTreeSet<RowKey>,
    pub rhs: DVector<f64>,
}

impl RowSet {
    pub fn new(
        problem: &OcpProblem,
        xbar: &[StateVector],
        cond: &Condensed,
        constraints: &[Vec<ConstraintValue>],
        hint: &[RowKey],
    ) -> Self {
        let mut set = Self {
            rows: Vec::new(),
            keys: BTreeSet::new(),
            rhs: DVector::zeros(0),
        };
        let hint: BTreeSet<RowKey> = hint.iter().copied().collect();
        let margin = problem.settings.screening_margin;
        let mut rhs = Vec::new();
        for i in 1..=problem.horizon {
            let x = xbar[i] + cond.offsets[i];
            for m in 0..NX {
                let (lo, hi) = tightened(problem, i, m);
                let width = problem.state_upper[m] - problem.state_lower[m];
                let near = |gap: f64| gap.is_finite() && gap <= margin * width;
                let upper = RowKey::Upper { stage: i, coord: m };
                if hi.is_finite() && (hint.contains(&upper) || near(hi - x[m])) {
                    rhs.push(set.push_bound(upper, i, m, hi, xbar, cond));
                }
                let lower = RowKey::Lower { stage: i, coord: m };
                if lo.is_finite() && (hint.contains(&lower) || near(x[m] - lo)) {
                    rhs.push(set.push_bound(lower, i, m, lo, xbar, cond));
                }
            }
            for (j, c) in constraints[i].iter().enumerate() {
                let beta = problem.backoffs.as_ref().map_or(0.0, |b| b.nonlinear[i][j]);
                set.keys.insert(RowKey::Nonlinear { stage: i, index: j });
                set.rows.push(Row {
                    key: RowKey::Nonlinear { stage: i, index: j },
                    stage: i,
                    dir: c.grad,
                });
                rhs.push(-c.value - c.grad.dot(&cond.offsets[i]) - beta);
            }
        }
        set.rhs = DVector::from_vec(rhs);
        set
    }

    fn push_bound(
        &mut self,
        key: RowKey,
        stage: usize,
        coord: usize,
        bound: f64,
        xbar: &[StateVector],
        cond: &Condensed,
    ) -> f64 {
        let base = xbar[stage][coord] + cond.offsets[stage][coord];
        let (dir, rhs) = match key {
            RowKey::Upper { .. } => (StateVector::ith(coord, 1.0), bound - base),
            _ => (StateVector::ith(coord, -1.0), base - bound),
        };
        self.keys.insert(key);
        self.rows.push(Row { key, stage, dir });
        rhs
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn matrix(&self, cond: &Condensed) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), cond.horizon * NU);
        for (j, r) in self.rows.iter().enumerate() {
            a.row_mut(j).copy_from(&cond.row(r.stage, &r.dir).transpose());
        }
        a
    }

    /// Adds every screened-out state-bound row violated at `du`.
    pub fn add_violated(
        &mut self,
        problem: &OcpProblem,
        xbar: &[StateVector],
        cond: &Condensed,
        _constraints: &[Vec<ConstraintValue>],
        du: &DVector<f64>,
    ) -> usize {
        let dx = cond.state_increments(du);
        let mut added = 0;
        let mut rhs: Vec<f64> = self.rhs.iter().copied().collect();
        for i in 1..=problem.horizon {
            let x = xbar[i] + dx[i];
            for m in 0..NX {
                let (lo, hi) = tightened(problem, i, m);
                let tol = 1e-9 * (1.0 + hi.abs().min(lo.abs()));
                let upper = RowKey::Upper { stage: i, coord: m };
                if hi.is_finite() && x[m] > hi + tol && !self.keys.contains(&upper) {
                    rhs.push(self.push_bound(upper, i, m, hi, xbar, cond));
                    added += 1;
                }
                let lower = RowKey::Lower { stage: i, coord: m };
                if lo.is_finite() && x[m] < lo - tol && !self.keys.contains(&lower) {
                    rhs.push(self.push_bound(lower, i, m, lo, xbar, cond));
                    added += 1;
                }
            }
        }
        self.rhs = DVector::from_vec(rhs);
        added
    }

    pub fn active_keys(&self, sol: &super::qp::QpSolution) -> Vec<RowKey> {
        self.rows
            .iter()
            .zip(sol.row_states.iter())
            .filter(|(_, s)| **s != super::qp::RowState::Below)
            .map(|(r, _)| r.key)
            .collect()
    }
}

/// Tightened state bounds at `stage` for coordinate `m`.
fn tightened(problem: &OcpProblem, stage: usize, m: usize) -> (f64, f64) {
    match &problem.backoffs {
        Some(b) => (
            problem.state_lower[m] + b.state_lower[stage][m],
            problem.state_upper[m] - b.state_upper[stage][m],
        ),
        None => (problem.state_lower[m], problem.state_upper[m]),
    }
}
