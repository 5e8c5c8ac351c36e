//! Convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀ G x + cᵀ x
//! subject to  lb <= M x <= ub
//! ```
//!
//! solved by an operator-splitting (ADMM) iteration on an equilibrated copy
//! of the data, with an active-set polishing step. Dual variables follow the
//! stationarity convention `G x + c + Mᵀ y = 0`, so rows active at their
//! lower bound carry `y <= 0` and rows at their upper bound `y >= 0`.

mod admm;
mod sparse;

use std::io::{self, Write};

use nalgebra::{Cholesky, DMatrix};
use serde::Serialize;
use thiserror::Error;

pub use sparse::SparseMatrix;

/// Bounds at or beyond this magnitude are treated as infinite.
pub const INF: f64 = 1e30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("row {row} ({name}) has lb > ub ({lb} > {ub})")]
    BoundsOrder { row: usize, name: String, lb: f64, ub: f64 },
    #[error("objective matrix is not symmetric")]
    NotSymmetric,
    #[error("objective matrix is not positive semi-definite")]
    NotPsd,
    #[error("non-finite problem data: {0}")]
    NonFinite(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("infeasibility test inconclusive: solver ended with status {0:?}")]
    Inconclusive(QpStatus),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub g: SparseMatrix,
    pub c: Vec<f64>,
    pub m: SparseMatrix,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub var_names: Vec<String>,
    pub row_names: Vec<String>,
}

impl QpProblem {
    /// Validates dimensions, bound order, symmetry and semi-definiteness of
    /// `g`. Infinite bounds may be given as `±f64::INFINITY` or `±INF`.
    pub fn new(
        g: SparseMatrix,
        c: Vec<f64>,
        m: SparseMatrix,
        lb: Vec<f64>,
        ub: Vec<f64>,
    ) -> Result<Self, QpError> {
        let n = c.len();
        let rows = m.nrows();
        let var_names = (0..n).map(|i| format!("x{i}")).collect();
        let row_names = (0..rows).map(|i| format!("r{i}")).collect();
        Self::with_names(g, c, m, lb, ub, var_names, row_names)
    }

    pub fn with_names(
        g: SparseMatrix,
        c: Vec<f64>,
        m: SparseMatrix,
        lb: Vec<f64>,
        ub: Vec<f64>,
        var_names: Vec<String>,
        row_names: Vec<String>,
    ) -> Result<Self, QpError> {
        let n = c.len();
        let rows = m.nrows();
        if g.nrows() != n || g.ncols() != n {
            return Err(QpError::Dimension(format!(
                "G is {}x{}, expected {n}x{n}",
                g.nrows(),
                g.ncols()
            )));
        }
        if m.ncols() != n {
            return Err(QpError::Dimension(format!("M has {} columns, expected {n}", m.ncols())));
        }
        if lb.len() != rows || ub.len() != rows {
            return Err(QpError::Dimension(format!(
                "bounds have lengths {}/{}, M has {rows} rows",
                lb.len(),
                ub.len()
            )));
        }
        if var_names.len() != n || row_names.len() != rows {
            return Err(QpError::Dimension("name lists do not match problem size".into()));
        }
        if c.iter().any(|v| !v.is_finite())
            || g.triplets().any(|(_, _, v)| !v.is_finite())
            || m.triplets().any(|(_, _, v)| !v.is_finite())
        {
            return Err(QpError::NonFinite("objective or constraint matrix".into()));
        }
        let lb: Vec<f64> = lb.into_iter().map(|v| if v <= -INF { -INF } else { v }).collect();
        let ub: Vec<f64> = ub.into_iter().map(|v| if v >= INF { INF } else { v }).collect();
        for i in 0..rows {
            if lb[i].is_nan() || ub[i].is_nan() {
                return Err(QpError::NonFinite(format!("bounds of row {}", row_names[i])));
            }
            if lb[i] > ub[i] {
                return Err(QpError::BoundsOrder {
                    row: i,
                    name: row_names[i].clone(),
                    lb: lb[i],
                    ub: ub[i],
                });
            }
        }
        let scale = g.triplets().fold(1.0f64, |s, (_, _, v)| s.max(v.abs()));
        if !g.is_symmetric(1e-12 * scale) {
            return Err(QpError::NotSymmetric);
        }
        if g.nnz() > 0 {
            let shifted = g.to_dense() + DMatrix::identity(n, n) * (1e-10 * scale);
            if Cholesky::new(shifted).is_none() {
                return Err(QpError::NotPsd);
            }
        }
        Ok(Self {
            g,
            c,
            m,
            lb,
            ub,
            var_names,
            row_names,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut gx = vec![0.0; x.len()];
        self.g.mul_vec(x, &mut gx);
        x.iter()
            .zip(&gx)
            .zip(&self.c)
            .map(|((xi, gi), ci)| 0.5 * xi * gi + ci * xi)
            .sum()
    }

    /// `‖M x - Π_[lb,ub](M x)‖∞`.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mut mx = vec![0.0; self.num_rows()];
        self.m.mul_vec(x, &mut mx);
        mx.iter()
            .enumerate()
            .map(|(i, &v)| (v - v.clamp(self.lb[i], self.ub[i])).abs())
            .fold(0.0, f64::max)
    }

    /// `‖G x + c + Mᵀ y‖∞`.
    pub fn dual_residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.num_vars();
        let mut gx = vec![0.0; n];
        let mut mty = vec![0.0; n];
        self.g.mul_vec(x, &mut gx);
        self.m.mul_t_vec(y, &mut mty);
        (0..n)
            .map(|j| (gx[j] + self.c[j] + mty[j]).abs())
            .fold(0.0, f64::max)
    }

    /// Writes a plain-text dump: header, objective triplets, linear cost,
    /// constraint triplets, then one bound line per row.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "qp {} vars {} rows", self.num_vars(), self.num_rows())?;
        writeln!(w, "G {}", self.g.nnz())?;
        for (i, j, v) in self.g.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        writeln!(w, "c")?;
        for (j, v) in self.c.iter().enumerate() {
            writeln!(w, "{j} {} {v:e}", self.var_names[j])?;
        }
        writeln!(w, "M {}", self.m.nnz())?;
        for (i, j, v) in self.m.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        writeln!(w, "bounds")?;
        for i in 0..self.num_rows() {
            writeln!(w, "{i} {} {:e} {:e}", self.row_names[i], self.lb[i], self.ub[i])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_p: f64,
    pub eps_d: f64,
    pub max_iter: usize,
    /// Tolerance of the infeasibility certificate tests.
    pub eps_inf: f64,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Residual checks and penalty updates happen every this many iterations.
    pub check_every: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    pub warm_start: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_p: 1e-7,
            eps_d: 1e-7,
            max_iter: 100_000,
            eps_inf: 1e-6,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            check_every: 25,
            scaling_iters: 15,
            polish: true,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub status: QpStatus,
    pub primal_res: f64,
    pub dual_res: f64,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
    /// For [`QpStatus::PrimalInfeasible`]: `y` with `Mᵀ y ≈ 0` and
    /// `lbᵀ y⁺ - ubᵀ y⁻ > 0`, normalised to unit infinity norm.
    /// For [`QpStatus::DualInfeasible`]: a recession direction `d` with
    /// `G d ≈ 0`, `cᵀ d < 0`.
    pub certificate: Option<Vec<f64>>,
}

pub fn solve_qp(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    admm::Solver::new(prob, settings)?.run()
}

/// Returns a Farkas certificate when the constraints are infeasible, `None`
/// when the problem solves, and an error when neither could be established.
pub fn detect_infeasible(prob: &QpProblem, settings: &QpSettings) -> Result<Option<Vec<f64>>, QpError> {
    let sol = solve_qp(prob, settings)?;
    match sol.status {
        QpStatus::PrimalInfeasible => Ok(sol.certificate),
        QpStatus::Optimal | QpStatus::DualInfeasible => Ok(None),
        QpStatus::MaxIter => Err(QpError::Inconclusive(sol.status)),
    }
}

/// Checks a primal infeasibility certificate; returns `(‖Mᵀy‖∞, support)`
/// where `support = lbᵀ y⁺ - ubᵀ y⁻` (infinite bounds with nonzero weight
/// give `-inf`).
pub fn certificate_quality(prob: &QpProblem, y: &[f64]) -> (f64, f64) {
    let mut mty = vec![0.0; prob.num_vars()];
    prob.m.mul_t_vec(y, &mut mty);
    let stat = mty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut support = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        if yi > 0.0 {
            if prob.lb[i] <= -INF {
                return (stat, f64::NEG_INFINITY);
            }
            support += prob.lb[i] * yi;
        } else if yi < 0.0 {
            if prob.ub[i] >= INF {
                return (stat, f64::NEG_INFINITY);
            }
            support += prob.ub[i] * yi;
        }
    }
    (stat, support)
}
