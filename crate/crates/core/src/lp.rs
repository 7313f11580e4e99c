//! Dense two-phase simplex for small linear programs of the form
//!
//! ```text
//! maximize c'z  subject to  G z <= h,  z >= 0
//! ```
//!
//! Phase I starts from slacks where `h_i >= 0` and from artificial variables
//! elsewhere; Bland's rule is used in both phases, so the method terminates
//! without cycling. The final basic solution is recomputed from the original
//! data with a partial-pivoting solve to wash out accumulated tableau error.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, SINGULAR_PIVOT_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl LpProblem {
    pub fn new(c: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self, LpError> {
        let p = LpProblem { c, g, h };
        p.check()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.h.len()
    }

    fn check(&self) -> Result<(), LpError> {
        if self.g.nrows() != self.h.len() || self.g.ncols() != self.c.len() {
            return Err(LpError::Shape {
                constraints: self.h.len(),
                vars: self.c.len(),
                g_shape: self.g.shape(),
            });
        }
        let finite = self.c.iter().chain(self.g.iter()).chain(self.h.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(LpError::NonFinite);
        }
        Ok(())
    }

    /// `max_i (G z - h)_i`, or `-inf` without constraints.
    pub fn feasibility_residual(&self, z: &DVector<f64>) -> f64 {
        linalg::max_entry((&self.g * z - &self.h).iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    /// Entries smaller than this are never used as pivots; reduced costs
    /// must exceed it to enter the basis.
    pub pivot_tol: f64,
    pub feas_tol: f64,
    /// Defaults to `10_000 * (vars + constraints)`.
    pub max_pivots: Option<usize>,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            pivot_tol: 1e-9,
            feas_tol: 1e-8,
            max_pivots: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Present iff `Optimal`.
    pub z: Option<DVector<f64>>,
    /// Present iff `Optimal`; always equal to `c'z` for the returned `z`.
    pub objective: Option<f64>,
    /// Pivots over both phases.
    pub iterations: usize,
    /// Present iff `Unbounded`: `d >= 0`, `G d <= 0`, `c'd > 0`.
    pub ray: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("constraint matrix is {g_shape:?}, expected {constraints}x{vars}")]
    Shape {
        constraints: usize,
        vars: usize,
        g_shape: (usize, usize),
    },
    #[error("problem data contains NaN or infinite entries")]
    NonFinite,
    #[error("simplex exceeded {limit} pivots")]
    MaxPivotsExceeded { limit: usize },
}

pub fn solve(problem: &LpProblem, opts: &LpOptions) -> Result<LpSolution, LpError> {
    problem.check()?;
    let nv = problem.num_vars();
    let nc = problem.num_constraints();
    let limit = opts.max_pivots.unwrap_or(10_000 * (nv + nc).max(1));

    let mut tab = Tableau::new(problem);
    let mut iterations = 0;

    if tab.num_art > 0 {
        let mut cost = vec![0.0; tab.num_cols];
        cost[tab.art_start..].fill(1.0);
        tab.set_cost(&cost);
        match tab.run(opts, true, limit, &mut iterations)? {
            Outcome::Optimal => {}
            // phase I is bounded below by zero
            Outcome::Unbounded(_) => unreachable!("phase I objective is bounded"),
        }
        let infeasibility: f64 = (0..nc)
            .filter(|&i| tab.basis[i] >= tab.art_start)
            .map(|i| tab.rhs(i))
            .sum();
        let scale = 1.0 + if nc > 0 { problem.h.amax() } else { 0.0 };
        if infeasibility > opts.feas_tol * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                z: None,
                objective: None,
                iterations,
                ray: None,
            });
        }
        tab.drive_out_artificials(opts.pivot_tol, &mut iterations);
    }

    let mut cost = vec![0.0; tab.num_cols];
    for (slot, c) in cost.iter_mut().zip(problem.c.iter()) {
        *slot = -c;
    }
    tab.set_cost(&cost);
    match tab.run(opts, false, limit, &mut iterations)? {
        Outcome::Unbounded(entering) => {
            let mut ray = DVector::zeros(nv);
            if entering < nv {
                ray[entering] = 1.0;
            }
            for i in 0..nc {
                let var = tab.basis[i];
                if var < nv {
                    ray[var] = -tab.at(i, entering);
                }
            }
            Ok(LpSolution {
                status: LpStatus::Unbounded,
                z: None,
                objective: None,
                iterations,
                ray: Some(ray),
            })
        }
        Outcome::Optimal => {
            let z = tab.refined_solution(problem, opts.feas_tol);
            let objective = problem.c.dot(&z);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                z: Some(z),
                objective: Some(objective),
                iterations,
                ray: None,
            })
        }
    }
}

enum Outcome {
    Optimal,
    /// Carries the entering column with no blocking row.
    Unbounded(usize),
}

/// Row-major tableau: `num_rows` constraint rows plus one reduced-cost row,
/// each `num_cols + 1` wide (last entry is the right-hand side).
struct Tableau {
    data: Vec<f64>,
    width: usize,
    num_rows: usize,
    num_cols: usize,
    num_vars: usize,
    art_start: usize,
    num_art: usize,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(p: &LpProblem) -> Self {
        let nv = p.num_vars();
        let nc = p.num_constraints();
        let num_art = p.h.iter().filter(|&&v| v < 0.0).count();
        let art_start = nv + nc;
        let num_cols = art_start + num_art;
        let width = num_cols + 1;
        let mut data = vec![0.0; (nc + 1) * width];
        let mut basis = Vec::with_capacity(nc);
        let mut next_art = art_start;
        for i in 0..nc {
            let sgn = if p.h[i] < 0.0 { -1.0 } else { 1.0 };
            let row = &mut data[i * width..(i + 1) * width];
            for (j, slot) in row[..nv].iter_mut().enumerate() {
                *slot = sgn * p.g[(i, j)];
            }
            row[nv + i] = sgn;
            row[num_cols] = sgn * p.h[i];
            if sgn < 0.0 {
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            } else {
                basis.push(nv + i);
            }
        }
        Tableau {
            data,
            width,
            num_rows: nc,
            num_cols,
            num_vars: nv,
            art_start,
            num_art,
            basis,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.num_cols)
    }

    fn cost_row(&self) -> usize {
        self.num_rows
    }

    /// Installs reduced costs `d_j - d_B' T_j` for a minimization cost `d`.
    fn set_cost(&mut self, cost: &[f64]) {
        let w = self.width;
        let obj = self.cost_row() * w;
        self.data[obj..obj + self.num_cols].copy_from_slice(&cost[..self.num_cols]);
        self.data[obj + self.num_cols] = 0.0;
        for i in 0..self.num_rows {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for j in 0..w {
                self.data[obj + j] -= cb * self.data[i * w + j];
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let piv = self.data[row * w + col];
        for j in 0..w {
            self.data[row * w + j] /= piv;
        }
        self.data[row * w + col] = 1.0;
        for i in 0..=self.num_rows {
            if i == row {
                continue;
            }
            let factor = self.data[i * w + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..w {
                self.data[i * w + j] -= factor * self.data[row * w + j];
            }
            self.data[i * w + col] = 0.0;
        }
        self.basis[row] = col;
    }

    fn run(
        &mut self,
        opts: &LpOptions,
        allow_artificial: bool,
        limit: usize,
        iterations: &mut usize,
    ) -> Result<Outcome, LpError> {
        let cols = if allow_artificial {
            self.num_cols
        } else {
            self.art_start
        };
        let obj = self.cost_row();
        loop {
            // Bland: lowest-index improving column
            let Some(enter) = (0..cols).find(|&j| self.at(obj, j) < -opts.pivot_tol) else {
                return Ok(Outcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.num_rows {
                let a = self.at(i, enter);
                if a <= opts.pivot_tol {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if (!tie && ratio < br) || (tie && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((row, _)) = leave else {
                return Ok(Outcome::Unbounded(enter));
            };
            if *iterations >= limit {
                return Err(LpError::MaxPivotsExceeded { limit });
            }
            self.pivot(row, enter);
            *iterations += 1;
        }
    }

    /// Pivots zero-level artificials out of the basis. Rows where no
    /// structural or slack column has a usable entry are redundant and keep
    /// their artificial at level zero; phase II never lets it re-enter.
    fn drive_out_artificials(&mut self, pivot_tol: f64, iterations: &mut usize) {
        for i in 0..self.num_rows {
            if self.basis[i] < self.art_start {
                continue;
            }
            let col = (0..self.art_start)
                .filter(|&j| self.at(i, j).abs() > pivot_tol)
                .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
            if let Some(col) = col {
                let rhs = i * self.width + self.num_cols;
                self.data[rhs] = 0.0;
                self.pivot(i, col);
                *iterations += 1;
            }
        }
    }

    fn tableau_solution(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.num_vars);
        for i in 0..self.num_rows {
            if self.basis[i] < self.num_vars {
                z[self.basis[i]] = self.rhs(i);
            }
        }
        z
    }

    /// Re-solves `[G | I]_B x_B = h` for the final basis.
    fn refined_solution(&self, p: &LpProblem, feas_tol: f64) -> DVector<f64> {
        let fallback = self.tableau_solution();
        let clamp = |mut z: DVector<f64>| {
            z.iter_mut().for_each(|v| {
                if *v < 0.0 && *v > -feas_tol {
                    *v = 0.0
                }
            });
            z
        };
        if self.basis.iter().any(|&b| b >= self.art_start) || self.num_rows == 0 {
            return clamp(fallback);
        }
        let nc = self.num_rows;
        let nv = self.num_vars;
        let mut basis_mat = DMatrix::zeros(nc, nc);
        for (k, &var) in self.basis.iter().enumerate() {
            if var < nv {
                basis_mat.set_column(k, &p.g.column(var));
            } else {
                basis_mat[(var - nv, k)] = 1.0;
            }
        }
        match linalg::solve(&basis_mat, &p.h, SINGULAR_PIVOT_TOL) {
            Ok(xb) if xb.iter().all(|&v| v >= -feas_tol) => {
                let mut z = DVector::zeros(nv);
                for (k, &var) in self.basis.iter().enumerate() {
                    if var < nv {
                        z[var] = xb[k];
                    }
                }
                if p.feasibility_residual(&z) <= p.feasibility_residual(&fallback).max(feas_tol) {
                    clamp(z)
                } else {
                    clamp(fallback)
                }
            }
            _ => clamp(fallback),
        }
    }
}
