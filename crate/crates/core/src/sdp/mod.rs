//! Small dense semidefinite programs in trace form and their certification.
//!
//! A [`TraceSdp`] is
//!
//! ```text
//!   max/min  ⟨C, X⟩ + offset
//!   s.t.     ⟨A_k, X⟩ = b_k    (k ∈ eq)
//!            ⟨A_k, X⟩ ≤ b_k    (k ∈ le)
//!            X ⪰ 0,  Tr X ≤ trace_bound on the feasible set
//! ```
//!
//! [`solve`] runs an infeasible-start primal–dual interior-point method and
//! [`certify`] turns whatever dual point it returns into a bound that holds for
//! the exact optimum.

mod certify;
mod ipm;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hermitian::{LinalgError, SymmetricMatrix};

pub use certify::{certify, certify_dual, dual_correction, BoundDirection, CertifiedBound};
pub use ipm::{solve, IterateRecord, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: String, expected: usize, found: usize },
    #[error("constraint {index} has an entry outside the variable ({row}, {col})")]
    EntryOutOfRange { index: usize, row: usize, col: usize },
    #[error("trace bound must be positive and finite, got {0}")]
    BadTraceBound(f64),
    #[error("non-finite data in {0}")]
    NonFinite(String),
    #[error("point is not PSD: smallest eigenvalue {0:e}")]
    NotPsd(f64),
    #[error("constraint {index} violated by {violation:e}")]
    Infeasible { index: usize, violation: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSense {
    Eq,
    Le,
}

/// Sparse real symmetric matrix holding its upper triangle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSymmetric {
    dim: usize,
    upper: Vec<(usize, usize, f64)>,
}

impl SparseSymmetric {
    /// Builds from triplets, folding lower-triangle entries onto the upper
    /// triangle and summing duplicates. Exact zeros are dropped.
    pub fn from_triplets(dim: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut upper: Vec<(usize, usize, f64)> =
            triplets.into_iter().map(|(r, c, v)| if r <= c { (r, c, v) } else { (c, r, v) }).collect();
        upper.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(upper.len());
        for (r, c, v) in upper {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        Self { dim, upper: merged }
    }

    pub fn from_dense(m: &SymmetricMatrix) -> Self {
        let n = m.dim();
        let mut t = Vec::new();
        for r in 0..n {
            for c in r..n {
                let v = m.get(r, c);
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        Self { dim: n, upper: t }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn upper(&self) -> &[(usize, usize, f64)] {
        &self.upper
    }

    pub fn nnz_upper(&self) -> usize {
        self.upper.len()
    }

    pub fn is_zero(&self) -> bool {
        self.upper.is_empty()
    }

    /// All entries, both triangles.
    pub fn full_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.upper.len());
        for &(r, c, v) in &self.upper {
            out.push((r, c, v));
            if r != c {
                out.push((c, r, v));
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { dim: self.dim, upper: self.upper.iter().map(|&(r, c, v)| (r, c, v * factor)).collect() }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.upper
            .iter()
            .map(|&(r, c, v)| if r == c { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    /// `⟨A, X⟩ = Σ_ij A_ij X_ij`.
    pub fn inner_dense(&self, x: &DMatrix<f64>) -> f64 {
        self.upper
            .iter()
            .map(|&(r, c, v)| if r == c { v * x[(r, r)] } else { v * (x[(r, c)] + x[(c, r)]) })
            .sum()
    }

    /// `dst += factor · A`.
    pub fn add_to_dense(&self, dst: &mut DMatrix<f64>, factor: f64) {
        for &(r, c, v) in &self.upper {
            dst[(r, c)] += factor * v;
            if r != c {
                dst[(c, r)] += factor * v;
            }
        }
    }

    pub fn to_dense(&self) -> SymmetricMatrix {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.add_to_dense(&mut m, 1.0);
        SymmetricMatrix::from_dmatrix(m).expect("square")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub matrix: SparseSymmetric,
    pub rhs: f64,
    pub sense: ConstraintSense,
}

/// A validated trace-form SDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSdp {
    dim: usize,
    objective: SparseSymmetric,
    offset: f64,
    sense: Sense,
    constraints: Vec<Constraint>,
    trace_bound: f64,
}

impl TraceSdp {
    pub fn new(
        dim: usize,
        objective: SparseSymmetric,
        offset: f64,
        sense: Sense,
        constraints: Vec<Constraint>,
        trace_bound: f64,
    ) -> Result<Self, SdpError> {
        if dim == 0 {
            return Err(SdpError::DimensionMismatch { context: "variable".into(), expected: 1, found: 0 });
        }
        if !(trace_bound.is_finite() && trace_bound > 0.0) {
            return Err(SdpError::BadTraceBound(trace_bound));
        }
        if !offset.is_finite() {
            return Err(SdpError::NonFinite("objective offset".into()));
        }
        check_matrix(&objective, dim, usize::MAX, "objective")?;
        for (k, con) in constraints.iter().enumerate() {
            check_matrix(&con.matrix, dim, k, "constraint")?;
            if !con.rhs.is_finite() {
                return Err(SdpError::NonFinite(format!("rhs of constraint {k}")));
            }
        }
        Ok(Self { dim, objective, offset, sense, constraints, trace_bound })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn objective(&self) -> &SparseSymmetric {
        &self.objective
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn trace_bound(&self) -> f64 {
        self.trace_bound
    }

    /// Same problem with the objective multiplied by `factor`.
    pub fn with_scaled_objective(&self, factor: f64) -> Self {
        Self { objective: self.objective.scaled(factor), offset: self.offset * factor, ..self.clone() }
    }

    /// Objective value `⟨C, X⟩ + offset`.
    pub fn objective_value(&self, x: &SymmetricMatrix) -> f64 {
        self.objective.inner_dense(x.as_dmatrix()) + self.offset
    }

    /// Signed violation of each constraint at `x`: `|⟨A,X⟩ − b|` for
    /// equalities, `max(0, ⟨A,X⟩ − b)` for inequalities.
    pub fn violations(&self, x: &SymmetricMatrix) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|con| {
                let lhs = con.matrix.inner_dense(x.as_dmatrix());
                match con.sense {
                    ConstraintSense::Eq => (lhs - con.rhs).abs(),
                    ConstraintSense::Le => (lhs - con.rhs).max(0.0),
                }
            })
            .collect()
    }
}

fn check_matrix(m: &SparseSymmetric, dim: usize, index: usize, what: &str) -> Result<(), SdpError> {
    if m.dim() != dim {
        return Err(SdpError::DimensionMismatch { context: what.to_string(), expected: dim, found: m.dim() });
    }
    for &(r, c, v) in m.upper() {
        if r >= dim || c >= dim {
            return Err(SdpError::EntryOutOfRange { index, row: r, col: c });
        }
        if !v.is_finite() {
            return Err(SdpError::NonFinite(format!("{what} {index}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    InfeasibleSuspected,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::InfeasibleSuspected => "infeasible_suspected",
        })
    }
}

/// Result of [`solve`], expressed in the original problem's scaling.
///
/// `dual_y` follows the sign convention of the problem sense: for a
/// maximization `Σ y_k A_k − C ⪰ 0` with `y_k ≥ 0` on inequalities; for a
/// minimization `C − Σ y_k A_k ⪰ 0` with `y_k ≤ 0` on inequalities.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub primal_x: SymmetricMatrix,
    pub dual_y: Vec<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    /// Largest constraint violation of `primal_x`.
    pub primal_residual: f64,
    /// Estimated smallest eigenvalue of the dual slack matrix.
    pub dual_slack_min_eig: f64,
    /// Relative duality gap `|p − d| / (1 + |p| + |d|)`.
    pub gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Equality constraints dropped as linearly dependent.
    pub pruned: Vec<usize>,
    /// Per-iteration diagnostics, filled when `SolverOptions::verbose` is set.
    pub log: Vec<IterateRecord>,
}

/// Primal tolerance used by [`evaluate_feasible`].
pub const FEASIBLE_PSD_TOL: f64 = 1e-9;
pub const FEASIBLE_CONSTRAINT_TOL: f64 = 1e-8;

/// Objective value of an explicit primal point after checking that it is
/// PSD within 1e-9 and satisfies every constraint within 1e-8.
pub fn evaluate_feasible(p: &TraceSdp, x: &SymmetricMatrix) -> Result<f64, SdpError> {
    if x.dim() != p.dim() {
        return Err(SdpError::DimensionMismatch { context: "primal point".into(), expected: p.dim(), found: x.dim() });
    }
    if x.as_dmatrix().iter().any(|v| !v.is_finite()) {
        return Err(SdpError::NonFinite("primal point".into()));
    }
    let lmin = x.eigenvalues()[0];
    if lmin < -FEASIBLE_PSD_TOL {
        return Err(SdpError::NotPsd(lmin));
    }
    let viol = p.violations(x);
    if let Some((index, &violation)) =
        viol.iter().enumerate().filter(|(_, v)| **v > FEASIBLE_CONSTRAINT_TOL).max_by(|a, b| a.1.total_cmp(b.1))
    {
        return Err(SdpError::Infeasible { index, violation });
    }
    Ok(p.objective_value(x))
}
