//! Small dense linear programs over `{x >= 0 : A x = b}`.
//!
//! Two-phase tableau simplex with Bland's anti-cycling rule. The instances in
//! this crate have at most a few dozen variables, so the tableau is dense and
//! every witness is re-checked by substitution before it is returned.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Residual allowed on `A w = b` for a returned witness (scaled by `max(1, |b|_inf)`).
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Most negative witness entry accepted (then clamped to zero).
pub const NONNEG_TOL: f64 = 1e-12;

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub coefficients: Vec<f64>,
    pub sense: Sense,
}

impl Objective {
    pub fn minimize(coefficients: Vec<f64>) -> Self {
        Self {
            coefficients,
            sense: Sense::Minimize,
        }
    }

    pub fn maximize(coefficients: Vec<f64>) -> Self {
        Self {
            coefficients,
            sense: Sense::Maximize,
        }
    }
}

/// Equality-constrained nonnegative program. Without an objective it is a
/// pure feasibility question.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub objective: Option<Objective>,
}

impl LpProblem {
    pub fn feasibility(a: DMatrix<f64>, b: Vec<f64>) -> Self {
        Self { a, b, objective: None }
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = Some(objective);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpSolution {
    /// Feasible, and optimal when an objective was given. `value` is the
    /// objective at the witness (zero for pure feasibility problems).
    Feasible {
        witness: Vec<f64>,
        value: f64,
    },
    Infeasible,
    Unbounded,
}

impl LpSolution {
    pub fn witness(&self) -> Option<&[f64]> {
        match self {
            LpSolution::Feasible { witness, .. } => Some(witness),
            _ => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            LpSolution::Feasible { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, LpSolution::Feasible { .. })
    }
}

struct Tableau {
    /// `m` constraint rows plus the reduced-cost row last; last column is the rhs.
    t: DMatrix<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.t.nrows() - 1
    }

    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        let mut pivot_row = self.t.row(row).clone_owned();
        pivot_row.unscale_mut(p);
        pivot_row[col] = 1.0;
        for r in 0..self.t.nrows() {
            if r == row {
                continue;
            }
            let factor = self.t[(r, col)];
            if factor != 0.0 {
                let mut target = self.t.row_mut(r);
                target -= &pivot_row * factor;
                target[col] = 0.0;
            }
        }
        self.t.set_row(row, &pivot_row);
        self.basis[row] = col;
    }

    /// Runs Bland's-rule simplex on the columns `< allowed`. Returns `false`
    /// when the objective is unbounded below.
    fn optimize(&mut self, allowed: usize) -> Result<bool> {
        let cost_row = self.rows();
        let rhs = self.rhs_col();
        for _ in 0..MAX_PIVOTS {
            let Some(enter) = (0..allowed).find(|&j| self.t[(cost_row, j)] < -COST_EPS) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows() {
                let coef = self.t[(i, enter)];
                if coef > PIVOT_EPS {
                    let ratio = self.t[(i, rhs)].max(0.0) / coef;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((best, best_ratio)) => {
                            let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio.abs());
                            if ratio < best_ratio && !tie || tie && self.basis[i] < self.basis[best] {
                                Some((i, ratio))
                            } else {
                                Some((best, best_ratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((row, _)) => self.pivot(row, enter),
                None => return Ok(false),
            }
        }
        Err(Error::Numerical(format!("simplex exceeded {MAX_PIVOTS} pivots")))
    }

    fn load_costs(&mut self, costs: &[f64]) {
        let cost_row = self.rows();
        let ncols = self.t.ncols();
        for j in 0..ncols {
            let mut r = if j < costs.len() { costs[j] } else { 0.0 };
            for i in 0..self.rows() {
                let cb = costs.get(self.basis[i]).copied().unwrap_or(0.0);
                r -= cb * self.t[(i, j)];
            }
            self.t[(cost_row, j)] = r;
        }
    }

    fn remove_row(&mut self, row: usize) {
        self.t = self.t.clone().remove_row(row);
        self.basis.remove(row);
    }
}

/// Solve `prob`, returning a verified witness when feasible.
pub fn lp_solve(prob: &LpProblem) -> Result<LpSolution> {
    let (m, n) = prob.a.shape();
    if prob.b.len() != m {
        return Err(Error::validation("b", format!("{} entries for {m} rows", prob.b.len())));
    }
    if prob.a.iter().chain(&prob.b).any(|v| !v.is_finite()) {
        return Err(Error::validation("a", "non-finite coefficient"));
    }
    if let Some(obj) = &prob.objective {
        if obj.coefficients.len() != n {
            return Err(Error::validation("objective", "length does not match columns"));
        }
    }

    // Phase 1: artificials on every row, rhs made nonnegative.
    let mut t = DMatrix::zeros(m + 1, n + m + 1);
    for i in 0..m {
        let sign = if prob.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * prob.a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, n + m)] = sign * prob.b[i];
    }
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
    };
    let mut phase1_costs = vec![0.0; n + m];
    phase1_costs[n..].iter_mut().for_each(|c| *c = 1.0);
    tab.load_costs(&phase1_costs);
    tab.optimize(n + m)?;

    let artificial_sum: f64 = (0..tab.rows())
        .filter(|&i| tab.basis[i] >= n)
        .map(|i| tab.t[(i, tab.rhs_col())])
        .sum();
    let scale = prob.b.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if artificial_sum > FEASIBILITY_TOL * scale {
        return Ok(LpSolution::Infeasible);
    }

    // Drive remaining artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < tab.rows() {
        if tab.basis[i] >= n {
            let col = (0..n)
                .filter(|&j| tab.t[(i, j)].abs() > 1e-9)
                .max_by(|&a, &b| tab.t[(i, a)].abs().total_cmp(&tab.t[(i, b)].abs()));
            match col {
                Some(j) => tab.pivot(i, j),
                None => {
                    tab.remove_row(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    let (costs, sign) = match &prob.objective {
        Some(obj) => {
            let sign = if obj.sense == Sense::Maximize { -1.0 } else { 1.0 };
            (obj.coefficients.iter().map(|c| sign * c).collect::<Vec<_>>(), sign)
        }
        None => (vec![0.0; n], 1.0),
    };
    tab.load_costs(&costs);
    if !tab.optimize(n)? {
        return Ok(LpSolution::Unbounded);
    }

    let mut witness = vec![0.0; n];
    for (row, &var) in tab.basis.iter().enumerate() {
        if var < n {
            witness[var] = tab.t[(row, tab.rhs_col())];
        }
    }
    let basic: Vec<usize> = tab.basis.iter().copied().filter(|&v| v < n).collect();
    if let Some(refined) = refine(prob, &basic) {
        if residual(prob, &refined) <= residual(prob, &witness) {
            witness = refined;
        }
    }
    let witness = verify(prob, witness)?;
    let value = costs.iter().zip(&witness).map(|(c, w)| c * w).sum::<f64>() * sign;
    Ok(LpSolution::Feasible { witness, value })
}

/// Re-solve the basic variables directly from the original system.
fn refine(prob: &LpProblem, basic: &[usize]) -> Option<Vec<f64>> {
    if basic.is_empty() {
        return None;
    }
    let a_b = DMatrix::from_fn(prob.a.nrows(), basic.len(), |r, k| prob.a[(r, basic[k])]);
    let svd = a_b.svd(true, true);
    let x_b = svd.solve(&DVector::from_column_slice(&prob.b), 1e-13).ok()?;
    let mut w = vec![0.0; prob.a.ncols()];
    for (k, &var) in basic.iter().enumerate() {
        if x_b[k] < -NONNEG_TOL {
            return None;
        }
        w[var] = x_b[k];
    }
    Some(w)
}

fn residual(prob: &LpProblem, w: &[f64]) -> f64 {
    let ax = &prob.a * DVector::from_column_slice(w);
    ax.iter().zip(&prob.b).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max)
}

/// Clamp small negatives to zero, then require the clamped point to satisfy
/// the equalities to tolerance.
fn verify(prob: &LpProblem, mut w: Vec<f64>) -> Result<Vec<f64>> {
    let scale = prob.b.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if let Some(v) = w.iter().copied().find(|&v| v < -FEASIBILITY_TOL * scale) {
        return Err(Error::Numerical(format!("LP witness has negative entry {v}")));
    }
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let res = residual(prob, &w);
    if res > FEASIBILITY_TOL * scale {
        return Err(Error::Numerical(format!("LP witness residual {res:e}")));
    }
    Ok(w)
}
