//! Revised simplex with an explicit basis inverse.
//!
//! Minimizes `c·x` subject to rows `a·x {<=,=,>=} b` and `x >= 0`. Columns
//! are stored sparse. The inverse is updated by rank-one pivots and rebuilt
//! by Gauss-Jordan elimination every [`REFACTOR_EVERY`] pivots. The entering variable has the most negative
//! reduced cost; after [`DEGENERATE_RUN`] degenerate pivots in a row both
//! choices follow Bland's smallest-index rule until the objective moves.
//! Duals are reported so that `duals·rhs` equals the optimal objective.

use std::fmt::Write as _;

use thiserror::Error;

pub const FEAS_TOL: f64 = 1e-9;
pub const OPT_TOL: f64 = 1e-9;
pub const DUALITY_TOL: f64 = 1e-7;
pub const ITERATION_CAP: usize = 1_000_000;
pub const REFACTOR_EVERY: usize = 50;
pub const DEGENERATE_RUN: usize = 50;
const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: Status,
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("row {row} has {got} coefficients, expected {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite coefficient in the program")]
    NonFinite,
    #[error("iteration cap of {0} pivots reached")]
    CycleGuardTripped(usize),
    #[error("basis matrix became singular")]
    SingularBasis,
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    Simplex::new(lp)?.solve()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarKind {
    Structural,
    Slack,
    Artificial,
}

/// Solver state that survives between solves so columns can be appended and
/// the program re-optimized from the previous basis.
#[derive(Debug, Clone)]
pub struct Simplex {
    m: usize,
    /// Row sign flips applied so every rhs is non-negative.
    sign: Vec<f64>,
    rhs: Vec<f64>,
    /// Nonzeros `(row, value)` of every column, in internal row signs.
    columns: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    kind: Vec<VarKind>,
    /// Column index of each structural variable, in insertion order.
    structural: Vec<usize>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// Artificial column of each row, `usize::MAX` until one exists.
    artificial: Vec<usize>,
    binv: Vec<Vec<f64>>,
    xb: Vec<f64>,
    pivots_since_refactor: usize,
    total_iterations: usize,
}

impl Simplex {
    pub fn new(lp: &LinearProgram) -> Result<Self, LpError> {
        let nvars = lp.objective.len();
        let m = lp.rows.len();
        for (r, row) in lp.rows.iter().enumerate() {
            if row.coeffs.len() != nvars {
                return Err(LpError::DimensionMismatch {
                    row: r,
                    expected: nvars,
                    got: row.coeffs.len(),
                });
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(LpError::NonFinite);
            }
        }
        if lp.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite);
        }

        let mut sign = vec![1.0; m];
        let mut rhs = vec![0.0; m];
        let mut rel = Vec::with_capacity(m);
        for (r, row) in lp.rows.iter().enumerate() {
            let mut relation = row.relation;
            if row.rhs < 0.0 {
                sign[r] = -1.0;
                relation = match relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            rhs[r] = sign[r] * row.rhs;
            rel.push(relation);
        }

        let mut s = Simplex {
            m,
            sign,
            rhs,
            columns: Vec::new(),
            cost: Vec::new(),
            kind: Vec::new(),
            structural: Vec::new(),
            basis: vec![usize::MAX; m],
            in_basis: Vec::new(),
            artificial: vec![usize::MAX; m],
            binv: identity(m),
            xb: Vec::new(),
            pivots_since_refactor: 0,
            total_iterations: 0,
        };
        for j in 0..nvars {
            let col = (0..m)
                .filter(|&r| lp.rows[r].coeffs[j] != 0.0)
                .map(|r| (r, lp.rows[r].coeffs[j] * s.sign[r]))
                .collect();
            s.push_column(lp.objective[j], col, VarKind::Structural);
        }
        for r in 0..m {
            let coef = match rel[r] {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => continue,
            };
            let j = s.push_column(0.0, vec![(r, coef)], VarKind::Slack);
            if coef > 0.0 {
                s.set_basic(r, j);
            }
        }
        // Crash: a structural singleton with a positive entry covers its row
        // without an artificial.
        let mut crashed = false;
        for j in 0..nvars {
            if let [(r, v)] = s.columns[j][..] {
                if v > 0.0 && s.basis[r] == usize::MAX {
                    s.set_basic(r, j);
                    crashed = true;
                }
            }
        }
        for r in 0..m {
            if s.basis[r] == usize::MAX {
                let j = s.artificial_for(r);
                s.set_basic(r, j);
            }
        }
        s.xb = s.rhs.clone();
        if crashed {
            s.refactor()?;
        }
        Ok(s)
    }

    fn push_column(&mut self, cost: f64, col: Vec<(usize, f64)>, kind: VarKind) -> usize {
        let j = self.columns.len();
        self.columns.push(col);
        self.cost.push(cost);
        self.kind.push(kind);
        self.in_basis.push(false);
        if kind == VarKind::Structural {
            self.structural.push(j);
        }
        j
    }

    fn set_basic(&mut self, r: usize, j: usize) {
        self.basis[r] = j;
        self.in_basis[j] = true;
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    pub fn num_structural(&self) -> usize {
        self.structural.len()
    }

    /// Appends a structural column (coefficients in the caller's row signs).
    /// Returns its structural index. The new variable starts non-basic.
    pub fn add_column(&mut self, cost: f64, coeffs: &[f64]) -> Result<usize, LpError> {
        if coeffs.len() != self.m {
            return Err(LpError::DimensionMismatch {
                row: usize::MAX,
                expected: self.m,
                got: coeffs.len(),
            });
        }
        if !cost.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite);
        }
        let col = coeffs
            .iter()
            .zip(&self.sign)
            .enumerate()
            .filter(|(_, (c, _))| **c != 0.0)
            .map(|(r, (c, s))| (r, c * s))
            .collect();
        self.push_column(cost, col, VarKind::Structural);
        Ok(self.structural.len() - 1)
    }

    /// Optimizes from the current basis.
    pub fn solve(&mut self) -> Result<LpSolution, LpError> {
        let start = self.total_iterations;
        if self.artificial_infeasibility() > FEAS_TOL {
            let phase1: Vec<f64> = self
                .kind
                .iter()
                .map(|k| if *k == VarKind::Artificial { 1.0 } else { 0.0 })
                .collect();
            if self.optimize(&phase1, start)? == Status::Unbounded {
                unreachable!("phase one is bounded below by zero");
            }
            let scale = self.rhs.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            if self.artificial_infeasibility() > FEAS_TOL * scale {
                return Ok(self.solution(Status::Infeasible, start));
            }
        }
        self.drive_out_artificials()?;
        let cost = self.cost.clone();
        let status = self.optimize(&cost, start)?;
        Ok(self.solution(status, start))
    }

    fn artificial_infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .zip(&self.xb)
            .filter(|(&j, _)| self.kind[j] == VarKind::Artificial)
            .map(|(_, &x)| x.max(0.0))
            .sum()
    }

    /// Primal simplex under `cost`. Artificials never enter.
    fn optimize(&mut self, cost: &[f64], start: usize) -> Result<Status, LpError> {
        let mut degenerate = 0usize;
        let mut y = self.duals_for(cost);
        loop {
            if self.total_iterations - start >= ITERATION_CAP {
                return Err(LpError::CycleGuardTripped(ITERATION_CAP));
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering: Option<(f64, usize)> = None;
            for j in 0..self.columns.len() {
                if self.in_basis[j] || self.kind[j] == VarKind::Artificial {
                    continue;
                }
                let d = cost[j] - sparse_dot(&y, &self.columns[j]);
                if d < -OPT_TOL && entering.is_none_or(|(best, _)| d < best) {
                    entering = Some((d, j));
                    if bland {
                        break;
                    }
                }
            }
            let Some((dj, j)) = entering else {
                return Ok(Status::Optimal);
            };
            let u = self.ftran(&self.columns[j]);
            let Some((step, r)) = self.ratio_test(&u, bland) else {
                return Ok(Status::Unbounded);
            };
            if step <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, j, &u)?;
            if self.pivots_since_refactor == 0 {
                y = self.duals_for(cost);
            } else {
                // The entering column's reduced cost drops to zero.
                for (yk, bk) in y.iter_mut().zip(&self.binv[r]) {
                    *yk += dj * bk;
                }
            }
        }
    }

    /// Leaving row for direction `u`. Two passes: the smallest ratio with
    /// values relaxed by `FEAS_TOL`, then among rows within that bound the
    /// largest pivot (smallest basis index under Bland).
    fn ratio_test(&self, u: &[f64], bland: bool) -> Option<(f64, usize)> {
        let rows = || (0..self.m).filter(|&r| u[r] > PIVOT_TOL);
        let bound = rows()
            .map(|r| (self.xb[r].max(0.0) + FEAS_TOL) / u[r])
            .min_by(f64::total_cmp)?;
        let r = rows()
            .filter(|&r| self.xb[r].max(0.0) / u[r] <= bound)
            .max_by(|&a, &b| {
                if bland {
                    self.basis[b].cmp(&self.basis[a])
                } else {
                    u[a].total_cmp(&u[b])
                }
            })?;
        Some((self.xb[r].max(0.0) / u[r], r))
    }

    fn duals_for(&self, cost: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for (r, &j) in self.basis.iter().enumerate() {
            let cb = cost[j];
            if cb != 0.0 {
                for (yk, bk) in y.iter_mut().zip(&self.binv[r]) {
                    *yk += cb * bk;
                }
            }
        }
        y
    }

    fn ftran(&self, col: &[(usize, f64)]) -> Vec<f64> {
        self.binv.iter().map(|row| sparse_dot(row, col)).collect()
    }

    fn pivot(&mut self, r: usize, j: usize, u: &[f64]) -> Result<(), LpError> {
        let pr = u[r];
        for v in self.binv[r].iter_mut() {
            *v /= pr;
        }
        self.xb[r] /= pr;
        let pivot_row = self.binv[r].clone();
        let xr = self.xb[r];
        for i in 0..self.m {
            if i != r && u[i] != 0.0 {
                let f = u[i];
                for (v, p) in self.binv[i].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                self.xb[i] -= f * xr;
            }
        }
        let leaving = self.basis[r];
        self.in_basis[leaving] = false;
        self.set_basic(r, j);
        self.total_iterations += 1;
        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY.max(self.m / 8) {
            self.refactor()?;
        }
        Ok(())
    }

    /// Rebuilds the basis inverse by Gauss-Jordan elimination with partial
    /// pivoting and recomputes the basic values. Zero multipliers are
    /// skipped, which keeps sparse bases cheap.
    fn refactor(&mut self) -> Result<(), LpError> {
        self.factor(false)
    }

    /// Gauss-Jordan rebuild of the basis inverse. With `repair`, a position
    /// without an acceptable pivot (or holding `usize::MAX`) is given the
    /// artificial of a row the pivoted columns leave uncovered.
    fn factor(&mut self, repair: bool) -> Result<(), LpError> {
        let m = self.m;
        let mut a = vec![vec![0.0; m]; m];
        for (c, &j) in self.basis.iter().enumerate() {
            if j == usize::MAX {
                continue;
            }
            for &(r, v) in &self.columns[j] {
                a[r][c] = v;
            }
        }
        let mut inv = identity(m);
        for k in 0..m {
            let mut p = (k..m)
                .max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs()))
                .expect("non-empty range");
            if a[p][k].abs() < 1e-12 {
                if !repair {
                    return Err(LpError::SingularBasis);
                }
                // `inv` maps unit columns into the eliminated frame; the
                // largest entry of its row k names a row whose unit column
                // pivots here.
                let orig = (0..m)
                    .max_by(|&x, &y| inv[k][x].abs().total_cmp(&inv[k][y].abs()))
                    .expect("non-empty range");
                self.basis[k] = self.artificial_for(orig);
                for (row, inv_row) in a.iter_mut().zip(&inv) {
                    row[k] = inv_row[orig];
                }
                p = k;
            }
            a.swap(k, p);
            inv.swap(k, p);
            let d = a[k][k];
            for v in a[k][k..].iter_mut() {
                *v /= d;
            }
            for v in inv[k].iter_mut() {
                *v /= d;
            }
            let pivot_a = a[k].clone();
            let pivot_inv = inv[k].clone();
            for i in 0..m {
                let f = a[i][k];
                if i == k || f == 0.0 {
                    continue;
                }
                for (x, q) in a[i][k..].iter_mut().zip(&pivot_a[k..]) {
                    *x -= f * q;
                }
                for (x, q) in inv[i].iter_mut().zip(&pivot_inv) {
                    if *q != 0.0 {
                        *x -= f * q;
                    }
                }
            }
        }
        self.binv = inv;
        self.xb = self.binv.iter().map(|row| dot(row, &self.rhs)).collect();
        self.pivots_since_refactor = 0;
        if repair {
            self.in_basis.iter_mut().for_each(|b| *b = false);
            for &j in &self.basis {
                self.in_basis[j] = true;
            }
        }
        Ok(())
    }

    /// Artificial column of row `r`, created on first use.
    fn artificial_for(&mut self, r: usize) -> usize {
        if self.artificial[r] == usize::MAX {
            self.artificial[r] = self.push_column(0.0, vec![(r, 1.0)], VarKind::Artificial);
        }
        self.artificial[r]
    }

    /// Installs the structural columns `indices` (as returned by
    /// [`Simplex::add_column`]) as the basis, completed by artificials. Kept
    /// when the basic solution is feasible with every artificial at zero,
    /// so the next solve skips phase one; otherwise the previous basis is
    /// restored. Returns whether the basis was kept.
    pub fn warm_start(&mut self, indices: &[usize]) -> Result<bool, LpError> {
        if indices.len() > self.m {
            return Ok(false);
        }
        if let Some(&bad) = indices.iter().find(|&&s| s >= self.structural.len()) {
            return Err(LpError::DimensionMismatch {
                row: usize::MAX,
                expected: self.structural.len(),
                got: bad,
            });
        }
        let saved = (
            self.basis.clone(),
            self.in_basis.clone(),
            self.binv.clone(),
            self.xb.clone(),
            self.pivots_since_refactor,
        );
        self.basis = vec![usize::MAX; self.m];
        for (pos, &s) in indices.iter().enumerate() {
            self.basis[pos] = self.structural[s];
        }
        self.factor(true)?;
        let tol = FEAS_TOL * self.rhs.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        if self.xb.iter().all(|&x| x >= -tol) && self.artificial_infeasibility() <= tol {
            return Ok(true);
        }
        (
            self.basis,
            self.in_basis,
            self.binv,
            self.xb,
            self.pivots_since_refactor,
        ) = saved;
        Ok(false)
    }

    /// Pivots zero-valued artificials out of the basis where a non-artificial
    /// column can replace them. Rows where none can are redundant.
    fn drive_out_artificials(&mut self) -> Result<(), LpError> {
        for r in 0..self.m {
            if self.kind[self.basis[r]] != VarKind::Artificial {
                continue;
            }
            let row = self.binv[r].clone();
            let candidate = (0..self.columns.len()).find(|&j| {
                !self.in_basis[j]
                    && self.kind[j] != VarKind::Artificial
                    && sparse_dot(&row, &self.columns[j]).abs() > 1e-7
            });
            if let Some(j) = candidate {
                let u = self.ftran(&self.columns[j]);
                self.pivot(r, j, &u)?;
            }
        }
        Ok(())
    }

    fn solution(&self, status: Status, start: usize) -> LpSolution {
        let mut x = vec![0.0; self.columns.len()];
        for (r, &j) in self.basis.iter().enumerate() {
            x[j] = self.xb[r].max(0.0);
        }
        let primal: Vec<f64> = self.structural.iter().map(|&j| x[j]).collect();
        let objective = self
            .structural
            .iter()
            .zip(&primal)
            .map(|(&j, v)| self.cost[j] * v)
            .sum();
        let y = self.duals_for(&self.cost);
        let duals = y.iter().zip(&self.sign).map(|(v, s)| v * s).collect();
        LpSolution {
            status,
            primal,
            duals,
            objective,
            iterations: self.total_iterations - start,
        }
    }

    /// Text dump of the current basis.
    pub fn basis_dump(&self) -> String {
        let mut out = String::new();
        for (r, &j) in self.basis.iter().enumerate() {
            let _ = writeln!(
                out,
                "row {r}: var {j} ({:?}) = {:.12}",
                self.kind[j], self.xb[r]
            );
        }
        out
    }
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|r| (0..m).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sparse_dot(dense: &[f64], col: &[(usize, f64)]) -> f64 {
    col.iter().map(|&(r, v)| dense[r] * v).sum()
}
