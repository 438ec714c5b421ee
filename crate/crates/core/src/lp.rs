//! Dense two-phase primal simplex with Bland's rule.
//!
//! Problems here are small (a few hundred rows and columns), so the solver keeps
//! a full tableau. Variables carry finite lower bounds (default 0) and are shifted
//! to zero before solving. Once the final basis is known, the basic solution is
//! recomputed from the original data by Gaussian elimination to shed the round-off
//! accumulated over the pivots.

use serde::{Deserialize, Serialize};

/// Pivot, feasibility and optimality tolerance.
pub const LP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Primal point; empty unless optimal.
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LpError {
    #[error("simplex exceeded {0} iterations")]
    IterationLimit(usize),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("variable index {index} out of range ({num_vars} variables)")]
    BadIndex { index: usize, num_vars: usize },
}

#[derive(Clone, Debug)]
pub struct LinearProgram {
    sense: Sense,
    objective: Vec<f64>,
    lower: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            sense,
            objective,
            lower: vec![0.0; n],
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn set_lower(&mut self, var: usize, bound: f64) {
        self.lower[var] = bound;
    }

    pub fn add(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        if self.lower.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("lower bounds"));
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(LpError::NonFinite("right-hand side"));
            }
            for &(j, v) in &c.coeffs {
                if j >= n {
                    return Err(LpError::BadIndex {
                        index: j,
                        num_vars: n,
                    });
                }
                if !v.is_finite() {
                    return Err(LpError::NonFinite("constraint"));
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpOutcome, LpError> {
        self.validate()?;
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    width: usize,
    // rows x (cols + 1), last column is the right-hand side
    data: Vec<f64>,
    // original (shifted, sign-normalised) rows for the final refinement
    original: Vec<f64>,
    basis: Vec<usize>,
    first_artificial: usize,
    active_row: Vec<bool>,
    iterations: usize,
    max_iterations: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let n = lp.num_vars();
        let m = lp.constraints.len();
        let mut dense = vec![vec![0.0; n]; m];
        let mut rhs = vec![0.0; m];
        let mut slack_sign = vec![0.0f64; m];
        for (i, c) in lp.constraints.iter().enumerate() {
            let mut shift = 0.0;
            for &(j, v) in &c.coeffs {
                dense[i][j] += v;
                shift += v * lp.lower[j];
            }
            rhs[i] = c.rhs - shift;
            slack_sign[i] = match c.relation {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => 0.0,
            };
            if rhs[i] < 0.0 {
                rhs[i] = -rhs[i];
                dense[i].iter_mut().for_each(|v| *v = -*v);
                slack_sign[i] = -slack_sign[i];
            }
        }
        let slack_rows: Vec<usize> = (0..m).filter(|&i| slack_sign[i] != 0.0).collect();
        let num_slack = slack_rows.len();
        let art_rows: Vec<usize> = (0..m).filter(|&i| slack_sign[i] <= 0.0).collect();
        let first_artificial = n + num_slack;
        let cols = first_artificial + art_rows.len();
        let width = cols + 1;
        let mut data = vec![0.0; m * width];
        let mut basis = vec![usize::MAX; m];
        for i in 0..m {
            data[i * width..i * width + n].copy_from_slice(&dense[i]);
            data[i * width + cols] = rhs[i];
        }
        for (k, &i) in slack_rows.iter().enumerate() {
            data[i * width + n + k] = slack_sign[i];
            if slack_sign[i] > 0.0 {
                basis[i] = n + k;
            }
        }
        for (k, &i) in art_rows.iter().enumerate() {
            data[i * width + first_artificial + k] = 1.0;
            basis[i] = first_artificial + k;
        }
        Tableau {
            rows: m,
            cols,
            width,
            original: data.clone(),
            data,
            basis,
            first_artificial,
            active_row: vec![true; m],
            iterations: 0,
            max_iterations: 50_000 + 200 * (m + cols),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn pivot(&mut self, row: usize, col: usize, obj: &mut [f64]) {
        let w = self.width;
        let p = self.data[row * w + col];
        {
            let r = &mut self.data[row * w..(row + 1) * w];
            r.iter_mut().for_each(|v| *v /= p);
            r[col] = 1.0;
        }
        let pivot_row: Vec<f64> = self.data[row * w..(row + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == row || !self.active_row[i] {
                continue;
            }
            let f = self.data[i * w + col];
            if f == 0.0 {
                continue;
            }
            let r = &mut self.data[i * w..(i + 1) * w];
            for (v, pv) in r.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            r[col] = 0.0;
        }
        let f = obj[col];
        if f != 0.0 {
            for (v, pv) in obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            obj[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Reduced-cost row for `cost` given the current basis; last entry is `-z`.
    fn objective_row(&self, cost: &[f64]) -> Vec<f64> {
        let mut obj = vec![0.0; self.width];
        obj[..self.cols].copy_from_slice(&cost[..self.cols]);
        for i in 0..self.rows {
            if !self.active_row[i] {
                continue;
            }
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for j in 0..self.width {
                obj[j] -= cb * self.at(i, j);
            }
        }
        obj
    }

    /// Runs Bland's rule until optimal; `Ok(false)` means unbounded.
    fn iterate(&mut self, obj: &mut [f64], allowed_cols: usize) -> Result<bool, LpError> {
        loop {
            let Some(enter) = (0..allowed_cols).find(|&j| obj[j] < -LP_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                if !self.active_row[i] {
                    continue;
                }
                let a = self.at(i, enter);
                if a <= LP_TOL {
                    continue;
                }
                let ratio = self.at(i, self.cols) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((row, _)) = leave else {
                return Ok(false);
            };
            self.iterations += 1;
            if self.iterations > self.max_iterations {
                return Err(LpError::IterationLimit(self.max_iterations));
            }
            self.pivot(row, enter, obj);
        }
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpOutcome, LpError> {
        let n = lp.num_vars();
        let scale = 1.0
            + (0..self.rows)
                .map(|i| self.at(i, self.cols).abs())
                .fold(0.0, f64::max);

        if self.cols > self.first_artificial {
            let cost: Vec<f64> = (0..self.cols)
                .map(|j| if j >= self.first_artificial { 1.0 } else { 0.0 })
                .collect();
            let mut obj = self.objective_row(&cost);
            self.iterate(&mut obj, self.cols)?;
            let infeasibility = -obj[self.cols];
            if infeasibility > LP_TOL * scale {
                return Ok(self.outcome(LpStatus::Infeasible));
            }
            // drive zero-level artificials out of the basis, dropping redundant rows
            for i in 0..self.rows {
                if self.basis[i] < self.first_artificial {
                    continue;
                }
                let col = (0..self.first_artificial).find(|&j| self.at(i, j).abs() > LP_TOL);
                match col {
                    Some(j) => {
                        let mut dummy = vec![0.0; self.width];
                        self.pivot(i, j, &mut dummy);
                    }
                    None => self.active_row[i] = false,
                }
            }
        }

        let sign = match lp.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; self.cols];
        for (c, &o) in cost.iter_mut().zip(&lp.objective) {
            *c = sign * o;
        }
        let mut obj = self.objective_row(&cost);
        if !self.iterate(&mut obj, self.first_artificial)? {
            return Ok(self.outcome(LpStatus::Unbounded));
        }

        let mut shifted = self.basic_solution();
        if let Some(refined) = self.refine() {
            shifted = refined;
        }
        let x: Vec<f64> = (0..n).map(|j| shifted[j].max(0.0) + lp.lower[j]).collect();
        let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome {
            status: LpStatus::Optimal,
            x,
            value,
            iterations: self.iterations,
        })
    }

    fn outcome(&self, status: LpStatus) -> LpOutcome {
        LpOutcome {
            status,
            x: Vec::new(),
            value: f64::NAN,
            iterations: self.iterations,
        }
    }

    fn basic_solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for i in 0..self.rows {
            if self.active_row[i] {
                x[self.basis[i]] = self.at(i, self.cols);
            }
        }
        x
    }

    /// Re-solves `B x_B = b` on the original rows with partial pivoting.
    fn refine(&self) -> Option<Vec<f64>> {
        let rows: Vec<usize> = (0..self.rows).filter(|&i| self.active_row[i]).collect();
        let m = rows.len();
        let w = self.width;
        let mut a = vec![0.0; m * (m + 1)];
        for (r, &i) in rows.iter().enumerate() {
            for (c, &bi) in rows.iter().map(|&k| &self.basis[k]).enumerate() {
                a[r * (m + 1) + c] = self.original[i * w + bi];
            }
            a[r * (m + 1) + m] = self.original[i * w + self.cols];
        }
        for col in 0..m {
            let piv = (col..m).max_by(|&p, &q| {
                a[p * (m + 1) + col]
                    .abs()
                    .total_cmp(&a[q * (m + 1) + col].abs())
            })?;
            if a[piv * (m + 1) + col].abs() < 1e-12 {
                return None;
            }
            if piv != col {
                for c in 0..=m {
                    a.swap(piv * (m + 1) + c, col * (m + 1) + c);
                }
            }
            let p = a[col * (m + 1) + col];
            for r in col + 1..m {
                let f = a[r * (m + 1) + col] / p;
                if f == 0.0 {
                    continue;
                }
                for c in col..=m {
                    a[r * (m + 1) + c] -= f * a[col * (m + 1) + c];
                }
            }
        }
        let mut xb = vec![0.0; m];
        for r in (0..m).rev() {
            let mut v = a[r * (m + 1) + m];
            for c in r + 1..m {
                v -= a[r * (m + 1) + c] * xb[c];
            }
            xb[r] = v / a[r * (m + 1) + r];
        }
        if xb.iter().any(|v| !v.is_finite() || *v < -1e-7) {
            return None;
        }
        let mut x = vec![0.0; self.cols];
        for (r, &i) in rows.iter().enumerate() {
            x[self.basis[i]] = xb[r];
        }
        Some(x)
    }
}
