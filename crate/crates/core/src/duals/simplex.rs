//! Dense bounded-variable revised simplex for `max c.w  s.t.  A w <= b, 0 <= w <= u`
//! with `b >= 0`, so the all-slack basis is feasible and no phase one is needed.
//!
//! Columns are sparse and may be appended between solves (column generation);
//! appended columns enter as non-basic at their lower bound, which keeps the
//! current basis primal feasible.

use crate::error::{Error, Result};

const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_SWITCH: usize = 40;

#[derive(Debug, Clone)]
pub struct Column {
    pub entries: Vec<(usize, f64)>,
    pub cost: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic(usize),
    Lower,
    Upper,
}

/// Variables `0..m` are row slacks; structural columns follow.
pub struct Simplex {
    m: usize,
    rhs: Vec<f64>,
    columns: Vec<Column>,
    state: Vec<State>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    x_basic: Vec<f64>,
    pub iterations: usize,
    max_iterations: usize,
    since_refactor: usize,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Value of every structural column, in insertion order.
    pub primal: Vec<f64>,
    /// Row duals; non-negative at optimality.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Largest violation of `A w <= b` or of the bounds.
    pub primal_residual: f64,
    /// Largest positive reduced cost left at termination.
    pub dual_residual: f64,
}

impl Simplex {
    pub fn new(rhs: Vec<f64>, max_iterations: usize) -> Self {
        assert!(rhs.iter().all(|b| *b >= 0.0), "right-hand sides must be non-negative");
        let m = rhs.len();
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = 1.0;
        }
        Self {
            m,
            x_basic: rhs.clone(),
            rhs,
            columns: Vec::new(),
            state: (0..m).map(State::Basic).collect(),
            basis: (0..m).collect(),
            binv,
            iterations: 0,
            max_iterations,
            since_refactor: 0,
        }
    }

    pub fn add_column(&mut self, col: Column) -> usize {
        debug_assert!(col.entries.iter().all(|(r, _)| *r < self.m));
        debug_assert!(col.upper >= 0.0);
        self.columns.push(col);
        self.state.push(State::Lower);
        self.columns.len() - 1
    }

    fn cost(&self, var: usize) -> f64 {
        if var < self.m {
            0.0
        } else {
            self.columns[var - self.m].cost
        }
    }

    fn upper(&self, var: usize) -> f64 {
        if var < self.m {
            f64::INFINITY
        } else {
            self.columns[var - self.m].upper
        }
    }

    fn for_each_entry(&self, var: usize, mut f: impl FnMut(usize, f64)) {
        if var < self.m {
            f(var, 1.0);
        } else {
            for &(r, a) in &self.columns[var - self.m].entries {
                f(r, a);
            }
        }
    }

    /// `y = c_B^T B^{-1}`.
    pub fn row_duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (pos, &var) in self.basis.iter().enumerate() {
            let c = self.cost(var);
            if c != 0.0 {
                let row = &self.binv[pos * m..(pos + 1) * m];
                for (yr, b) in y.iter_mut().zip(row) {
                    *yr += c * b;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, var: usize, y: &[f64]) -> f64 {
        let mut d = self.cost(var);
        self.for_each_entry(var, |r, a| d -= y[r] * a);
        d
    }

    fn entering_candidate(&self, var: usize, y: &[f64]) -> Option<f64> {
        match self.state[var] {
            State::Basic(_) => None,
            State::Lower => {
                let d = self.reduced_cost(var, y);
                (d > OPT_TOL && self.upper(var) > 0.0).then_some(d)
            }
            State::Upper => {
                let d = self.reduced_cost(var, y);
                (d < -OPT_TOL).then_some(d)
            }
        }
    }

    fn pick_entering(&self, y: &[f64], bland: bool) -> Option<(usize, f64)> {
        let total = self.m + self.columns.len();
        if bland {
            return (0..total).find_map(|v| self.entering_candidate(v, y).map(|d| (v, d)));
        }
        let mut best: Option<(usize, f64)> = None;
        for v in 0..total {
            if let Some(d) = self.entering_candidate(v, y) {
                if best.is_none_or(|(_, bd)| d.abs() > bd.abs()) {
                    best = Some((v, d));
                }
            }
        }
        best
    }

    fn ftran(&self, var: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        self.for_each_entry(var, |r, a| {
            for (pos, al) in alpha.iter_mut().enumerate() {
                *al += self.binv[pos * m + r] * a;
            }
        });
        alpha
    }

    /// Runs primal simplex iterations from the current basis to optimality.
    pub fn solve(&mut self) -> Result<LpSolution> {
        let mut degenerate_run = 0usize;
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let y = self.row_duals();
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            let Some((q, d)) = self.pick_entering(&y, bland) else {
                break;
            };
            if self.iterations >= self.max_iterations {
                let sol = self.solution();
                return Err(Error::SolverNonConvergence {
                    iterations: self.iterations,
                    primal_residual: sol.primal_residual,
                    dual_residual: sol.dual_residual,
                });
            }
            self.iterations += 1;
            self.since_refactor += 1;

            let increasing = d > 0.0;
            let s = if increasing { 1.0 } else { -1.0 };
            let alpha = self.ftran(q);
            let mut theta = self.upper(q);
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_pivot = 0.0_f64;
            for (pos, &a) in alpha.iter().enumerate() {
                let sa = s * a;
                let (limit, to_upper) = if sa > PIVOT_TOL {
                    (self.x_basic[pos].max(0.0) / sa, false)
                } else if sa < -PIVOT_TOL {
                    let u = self.upper(self.basis[pos]);
                    if u.is_infinite() {
                        continue;
                    }
                    ((u - self.x_basic[pos]).max(0.0) / -sa, true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit <= theta,
                    Some((lp, _)) => {
                        limit < theta - 1e-12
                            || (limit <= theta + 1e-12
                                && if bland {
                                    self.basis[pos] < self.basis[lp]
                                } else {
                                    a.abs() > leave_pivot
                                })
                    }
                };
                if better {
                    theta = limit.min(theta);
                    leave = Some((pos, to_upper));
                    leave_pivot = a.abs();
                }
            }
            if theta.is_infinite() {
                return Err(Error::SolverNonConvergence {
                    iterations: self.iterations,
                    primal_residual: f64::INFINITY,
                    dual_residual: d.abs(),
                });
            }
            if theta <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            for (xb, a) in self.x_basic.iter_mut().zip(&alpha) {
                *xb -= s * theta * a;
            }
            match leave {
                None => {
                    // bound flip
                    self.state[q] = if increasing { State::Upper } else { State::Lower };
                }
                Some((p, to_upper)) => {
                    let out = self.basis[p];
                    self.state[out] = if to_upper { State::Upper } else { State::Lower };
                    let entering_value = if increasing { theta } else { self.upper(q) - theta };
                    self.basis[p] = q;
                    self.state[q] = State::Basic(p);
                    self.x_basic[p] = entering_value;
                    self.pivot(p, &alpha);
                }
            }
        }
        Ok(self.solution())
    }

    fn pivot(&mut self, p: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[p];
        let (before, rest) = self.binv.split_at_mut(p * m);
        let (prow, after) = rest.split_at_mut(m);
        prow.iter_mut().for_each(|b| *b /= piv);
        for (i, row) in before.chunks_mut(m).enumerate() {
            let f = alpha[i];
            if f != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(b, pb)| *b -= f * pb);
            }
        }
        for (k, row) in after.chunks_mut(m).enumerate() {
            let f = alpha[p + 1 + k];
            if f != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(b, pb)| *b -= f * pb);
            }
        }
    }

    /// Recomputes `B^{-1}` by Gauss-Jordan elimination and the basic values from scratch.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (pos, &var) in self.basis.iter().enumerate() {
            self.for_each_entry(var, |r, v| a[r * m + pos] = v);
        }
        let mut inv = vec![0.0; m * m];
        for r in 0..m {
            inv[r * m + r] = 1.0;
        }
        for col in 0..m {
            let (pr, pv) = (col..m)
                .map(|r| (r, a[r * m + col].abs()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .expect("non-empty");
            if pv < 1e-13 {
                return Err(Error::SingularBasis);
            }
            if pr != col {
                for k in 0..m {
                    a.swap(pr * m + k, col * m + k);
                    inv.swap(pr * m + k, col * m + k);
                }
            }
            let piv = a[col * m + col];
            for k in 0..m {
                a[col * m + k] /= piv;
                inv[col * m + k] /= piv;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = a[r * m + col];
                if f != 0.0 {
                    for k in 0..m {
                        a[r * m + k] -= f * a[col * m + k];
                        inv[r * m + k] -= f * inv[col * m + k];
                    }
                }
            }
        }
        // inv is B^{-1} with rows indexed by basis position
        self.binv = inv;
        let mut b = self.rhs.clone();
        for v in 0..self.state.len() {
            if self.state[v] == State::Upper {
                let u = self.upper(v);
                self.for_each_entry(v, |r, a| b[r] -= a * u);
            }
        }
        for pos in 0..m {
            let row = &self.binv[pos * m..(pos + 1) * m];
            self.x_basic[pos] = row.iter().zip(&b).map(|(x, y)| x * y).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    pub fn solution(&self) -> LpSolution {
        let m = self.m;
        let mut primal = vec![0.0; self.columns.len()];
        let mut slack = vec![0.0; m];
        for v in 0..self.state.len() {
            let val = match self.state[v] {
                State::Basic(pos) => self.x_basic[pos],
                State::Lower => 0.0,
                State::Upper => self.upper(v),
            };
            if v < m {
                slack[v] = val;
            } else {
                primal[v - m] = val;
            }
        }
        let mut activity = vec![0.0; m];
        let mut primal_residual = 0.0_f64;
        let mut objective = 0.0;
        for (col, &w) in self.columns.iter().zip(&primal) {
            objective += col.cost * w;
            for &(r, a) in &col.entries {
                activity[r] += a * w;
            }
            primal_residual = primal_residual.max(-w).max(w - col.upper);
        }
        for (act, b) in activity.iter().zip(&self.rhs) {
            primal_residual = primal_residual.max(act - b);
        }
        let y = self.row_duals();
        let mut dual_objective: f64 = self.rhs.iter().zip(&y).map(|(b, y)| b * y).sum();
        let mut dual_residual = 0.0_f64;
        for yr in &y {
            dual_residual = dual_residual.max(-yr);
        }
        for (k, col) in self.columns.iter().enumerate() {
            let d = self.reduced_cost(m + k, &y);
            if d > 0.0 {
                if col.upper.is_finite() {
                    dual_objective += col.upper * d;
                } else {
                    dual_residual = dual_residual.max(d);
                }
            }
        }
        LpSolution {
            primal,
            duals: y,
            objective,
            dual_objective,
            iterations: self.iterations,
            primal_residual,
            dual_residual,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn col(entries: &[(usize, f64)], cost: f64, upper: f64) -> Column {
        Column {
            entries: entries.to_vec(),
            cost,
            upper,
        }
    }

    #[test]
    fn textbook_lp() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  -> (2, 6), 36
        let mut s = Simplex::new(vec![4.0, 12.0, 18.0], 1000);
        s.add_column(col(&[(0, 1.0), (2, 3.0)], 3.0, f64::INFINITY));
        s.add_column(col(&[(1, 2.0), (2, 2.0)], 5.0, f64::INFINITY));
        let sol = s.solve().unwrap();
        assert_abs_diff_eq!(sol.objective, 36.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.primal[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.primal[1], 6.0, epsilon = 1e-9);
        // duals (0, 1.5, 1)
        assert_abs_diff_eq!(sol.duals[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.duals[1], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.duals[2], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.dual_objective, 36.0, epsilon = 1e-9);
    }

    #[test]
    fn bound_flips_and_upper_duals() {
        // max x + y s.t. x + y <= 5, x <= 1 (bound), y <= 1 (bound) -> 2, duals via bounds
        let mut s = Simplex::new(vec![5.0], 100);
        s.add_column(col(&[(0, 1.0)], 1.0, 1.0));
        s.add_column(col(&[(0, 1.0)], 1.0, 1.0));
        let sol = s.solve().unwrap();
        assert_abs_diff_eq!(sol.objective, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.duals[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.dual_objective, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn warm_start_after_adding_columns() {
        let mut s = Simplex::new(vec![1.0], 100);
        s.add_column(col(&[(0, 1.0)], 1.0, f64::INFINITY));
        assert_abs_diff_eq!(s.solve().unwrap().objective, 1.0, epsilon = 1e-12);
        s.add_column(col(&[(0, 0.5)], 1.0, f64::INFINITY));
        let sol = s.solve().unwrap();
        assert_abs_diff_eq!(sol.objective, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.primal[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut s = Simplex::new(vec![4.0, 12.0, 18.0], 0);
        s.add_column(col(&[(0, 1.0), (2, 3.0)], 3.0, f64::INFINITY));
        assert!(matches!(s.solve(), Err(Error::SolverNonConvergence { .. })));
    }

    #[test]
    fn degenerate_problem_terminates() {
        // many ties at zero right-hand side
        let mut s = Simplex::new(vec![0.0, 0.0, 1.0], 1000);
        s.add_column(col(&[(0, 1.0), (2, 1.0)], 1.0, 1.0));
        s.add_column(col(&[(1, 1.0), (2, 1.0)], 1.0, 1.0));
        s.add_column(col(&[(0, -1.0), (1, 1.0)], 0.5, 1.0));
        s.add_column(col(&[(2, 1.0)], 0.2, 1.0));
        let sol = s.solve().unwrap();
        assert!(sol.primal_residual <= 1e-9);
        assert!((sol.objective - sol.dual_objective).abs() <= 1e-9);
    }
}
