//! Complex vectors, Hermitian matrices and the real-symmetric embedding.
//!
//! Matrices are stored densely in row-major order. The solver only ever sees
//! real symmetric data: a complex Hermitian matrix `H = A + iB` is mapped to
//! the block matrix `[[A, -B], [B, A]]`, which is positive semidefinite exactly
//! when `H` is.
//!
//! [`min_eigenvalue`] returns an estimate together with an error radius that
//! is a rigorous (floating-point aware) bound; the certification code in
//! [`crate::sdp`] relies on that radius being honest.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
pub use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for Hermiticity and normalization checks.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Unit roundoff of IEEE double precision.
pub(crate) const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not Hermitian at ({row}, {col}): deviation {deviation:e}")]
    NotHermitian { row: usize, col: usize, deviation: f64 },
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("vector is not normalized: norm {0}")]
    NotNormalized(f64),
    #[error("matrix dimension must be positive")]
    EmptyMatrix,
}

/// `gamma_k = k u / (1 - k u)`, the standard bound on accumulated relative
/// rounding error of a length-`k` dot product.
pub(crate) fn gamma(k: usize) -> f64 {
    let ku = k as f64 * UNIT_ROUNDOFF;
    ku / (1.0 - ku)
}

/// A finite complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    entries: Vec<C64>,
}

impl ComplexVector {
    pub fn new(entries: Vec<C64>) -> Result<Self, LinalgError> {
        if let Some(i) = entries.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        Ok(Self { entries })
    }

    /// Builds a vector and checks that it has unit norm.
    pub fn normalized(entries: Vec<C64>) -> Result<Self, LinalgError> {
        let v = Self::new(entries)?;
        let norm = v.norm();
        if (norm - 1.0).abs() > HERMITIAN_TOL {
            return Err(LinalgError::NotNormalized(norm));
        }
        Ok(v)
    }

    pub fn from_real(entries: &[f64]) -> Result<Self, LinalgError> {
        Self::new(entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `⟨u|v⟩`, conjugate-linear in the first argument.
pub fn inner_product(u: &ComplexVector, v: &ComplexVector) -> Result<C64, LinalgError> {
    if u.dim() != v.dim() {
        return Err(LinalgError::DimensionMismatch { expected: u.dim(), found: v.dim() });
    }
    Ok(u.entries.iter().zip(&v.entries).map(|(a, b)| a.conj() * b).sum())
}

/// Dense Hermitian matrix, row-major. Stored as `(H + H†)/2` so the
/// symmetry holds exactly after construction. Serializes as a list of rows of
/// `[re, im]` pairs.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<C64>>", into = "Vec<Vec<C64>>")]
pub struct HermitianMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl fmt::Debug for HermitianMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HermitianMatrix").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl TryFrom<Vec<Vec<C64>>> for HermitianMatrix {
    type Error = LinalgError;

    fn try_from(rows: Vec<Vec<C64>>) -> Result<Self, Self::Error> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(LinalgError::DimensionMismatch { expected: n, found: bad.len() });
        }
        Self::from_row_major(n, rows.into_iter().flatten().collect())
    }
}

impl From<HermitianMatrix> for Vec<Vec<C64>> {
    fn from(m: HermitianMatrix) -> Self {
        m.data.chunks(m.dim.max(1)).map(|r| r.to_vec()).collect()
    }
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = C64::new(1.0, 0.0);
        }
        m
    }

    /// Builds from row-major data, rejecting inputs that are not Hermitian
    /// within [`HERMITIAN_TOL`] (relative to the largest entry).
    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch { expected: dim * dim, found: data.len() });
        }
        if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        let scale = data.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
        for r in 0..dim {
            for c in r..dim {
                let dev = (data[r * dim + c] - data[c * dim + r].conj()).norm();
                if dev > HERMITIAN_TOL * scale {
                    return Err(LinalgError::NotHermitian { row: r, col: c, deviation: dev });
                }
            }
        }
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self::from_row_major(dim, data)
    }

    /// Gram matrix `G[p][q] = ⟨v_p|v_q⟩`.
    pub fn gram(vectors: &[ComplexVector]) -> Result<Self, LinalgError> {
        let n = vectors.len();
        if n == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for p in 0..n {
            for q in p..n {
                let z = inner_product(&vectors[p], &vectors[q])?;
                data[p * n + q] = z;
                data[q * n + p] = z.conj();
            }
        }
        Self::from_row_major(n, data)
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for r in 0..n {
            self.data[r * n + r].im = 0.0;
            for c in (r + 1)..n {
                let avg = (self.data[r * n + c] + self.data[c * n + r].conj()) * 0.5;
                self.data[r * n + c] = avg;
                self.data[c * n + r] = avg.conj();
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i].re).sum()
    }

    /// `Tr(self · other)`, real for Hermitian arguments.
    pub fn trace_product(&self, other: &HermitianMatrix) -> Result<f64, LinalgError> {
        if self.dim != other.dim {
            return Err(LinalgError::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let n = self.dim;
        let mut acc = 0.0;
        for r in 0..n {
            for c in 0..n {
                acc += (self.data[r * n + c] * other.data[c * n + r]).re;
            }
        }
        Ok(acc)
    }

    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<C64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let n = m.nrows();
        Self::from_fn(n, |r, c| m[(r, c)])
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.to_dmatrix().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Sparse Hermitian matrix holding only its upper triangle (`row <= col`).
/// Used for the (very sparse) objective and constraint coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseHermitian {
    dim: usize,
    upper: BTreeMap<(usize, usize), C64>,
}

impl SparseHermitian {
    pub fn new(dim: usize) -> Self {
        Self { dim, upper: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `value` at `(row, col)` and its conjugate at `(col, row)`.
    /// Diagonal additions keep only the real part.
    pub fn add(&mut self, row: usize, col: usize, value: C64) {
        assert!(row < self.dim && col < self.dim, "index out of range");
        let (key, v) = if row <= col { ((row, col), value) } else { ((col, row), value.conj()) };
        let v = if key.0 == key.1 { C64::new(v.re, 0.0) } else { v };
        *self.upper.entry(key).or_insert(C64::new(0.0, 0.0)) += v;
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        if row <= col {
            self.upper.get(&(row, col)).copied().unwrap_or_default()
        } else {
            self.upper.get(&(col, row)).copied().unwrap_or_default().conj()
        }
    }

    /// Upper-triangle entries with magnitude above zero.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.upper.iter().filter(|(_, v)| v.norm() != 0.0).map(|(&(r, c), &v)| (r, c, v))
    }

    pub fn is_zero(&self) -> bool {
        self.upper.values().all(|v| v.norm() == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { dim: self.dim, upper: self.upper.iter().map(|(&k, &v)| (k, v * factor)).collect() }
    }

    /// `Tr(self · g)`.
    pub fn trace_product(&self, g: &HermitianMatrix) -> f64 {
        let mut acc = 0.0;
        for (r, c, v) in self.upper_entries() {
            if r == c {
                acc += v.re * g.get(r, r).re;
            } else {
                // A[r][c] G[c][r] + A[c][r] G[r][c] = 2 Re(v G[c][r])
                acc += 2.0 * (v * g.get(c, r)).re;
            }
        }
        acc
    }

    pub fn to_dense(&self) -> HermitianMatrix {
        let n = self.dim;
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for (r, c, v) in self.upper_entries() {
            data[r * n + c] = v;
            data[c * n + r] = v.conj();
        }
        HermitianMatrix { dim: n, data }
    }
}

/// Real symmetric matrix. Constructors symmetrize, so `m[i][j] == m[j][i]`
/// holds bit-for-bit.
#[derive(Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl fmt::Debug for SymmetricMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricMatrix").field("dim", &self.dim()).finish_non_exhaustive()
    }
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    /// Wraps a square matrix, replacing it by `(M + Mᵀ)/2`.
    pub fn from_dmatrix(mut m: DMatrix<f64>) -> Result<Self, LinalgError> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        let n = m.nrows();
        for c in 0..n {
            for r in (c + 1)..n {
                let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
                m[(r, c)] = avg;
                m[(c, r)] = avg;
            }
        }
        Ok(Self(m))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self, LinalgError> {
        Self::from_dmatrix(DMatrix::from_fn(dim, dim, f))
    }

    pub fn from_row_major(dim: usize, data: &[f64]) -> Result<Self, LinalgError> {
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch { expected: dim * dim, found: data.len() });
        }
        Self::from_dmatrix(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Frobenius inner product `Σ_ij A_ij B_ij`.
    pub fn inner(&self, other: &SymmetricMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    /// Eigenvalues in ascending order (no error bound; see [`min_eigenvalue`]).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// `[[Re H, −Im H], [Im H, Re H]]`.
pub fn real_embedding(h: &HermitianMatrix) -> SymmetricMatrix {
    let n = h.dim();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            let z = h.get(r, c);
            m[(r, c)] = z.re;
            m[(n + r, n + c)] = z.re;
            m[(r, n + c)] = -z.im;
            m[(n + r, c)] = z.im;
        }
    }
    SymmetricMatrix(m)
}

/// Inverse of [`real_embedding`] for block-structured matrices. For a
/// general symmetric `X` this returns the Hermitian matrix whose embedding is
/// the average of `X` and `J X Jᵀ`.
pub fn hermitian_from_embedding(x: &SymmetricMatrix) -> Result<HermitianMatrix, LinalgError> {
    let d = x.dim();
    if !d.is_multiple_of(2) {
        return Err(LinalgError::DimensionMismatch { expected: d + 1, found: d });
    }
    let n = d / 2;
    HermitianMatrix::from_fn(n, |r, c| {
        let re = 0.5 * (x.get(r, c) + x.get(n + r, n + c));
        let im = 0.5 * (x.get(n + r, c) - x.get(r, n + c));
        C64::new(re, im)
    })
}

/// Lower bound on the smallest eigenvalue: the true `λ_min` satisfies
/// `λ_min ≥ estimate − radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBound {
    pub estimate: f64,
    pub radius: f64,
}

impl EigenBound {
    /// `estimate − radius`, rounded toward −∞.
    pub fn floor(&self) -> f64 {
        (self.estimate - self.radius).next_down()
    }
}

/// Smallest eigenvalue of a symmetric matrix with a rigorous error radius.
///
/// The radius comes from the residual of the full computed eigensystem
/// `S V = V Λ + R`: by Bauer–Fike, every eigenvalue of `S` lies within
/// `‖R‖₂ / σ_min(V)` of some computed eigenvalue. Rounding in forming `R` and
/// `VᵀV` is accounted for. If the eigenvector matrix is too far from
/// orthogonal the Gershgorin bound is used instead; when both are available
/// the tighter one wins.
pub fn min_eigenvalue(s: &SymmetricMatrix) -> Result<EigenBound, LinalgError> {
    let m = s.as_dmatrix();
    if let Some(i) = m.iter().position(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite(i));
    }
    let n = m.nrows();
    let gersh = gershgorin_floor(m);

    let eig = m.clone().symmetric_eigen();
    let lambdas = &eig.eigenvalues;
    let v = &eig.eigenvectors;
    let estimate = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    if !estimate.is_finite() || v.iter().any(|x| !x.is_finite()) {
        return Ok(EigenBound { estimate: gersh, radius: 0.0 });
    }

    // R = S V − V Λ
    let mut r = m * v;
    for (j, &lam) in lambdas.iter().enumerate() {
        let mut col = r.column_mut(j);
        col.axpy(-lam, &v.column(j), 1.0);
    }
    let r_norm = r.norm();
    let s_abs_norm = m.norm();
    let v_norm = v.norm();
    let lam_max = lambdas.iter().map(|x| x.abs()).fold(0.0, f64::max);
    // |fl(R) − R| ≤ γ_{n+1}(|S||V| + |V||Λ|), bounded in Frobenius norm.
    let r_err = gamma(n + 2) * (s_abs_norm * v_norm + v_norm * lam_max);
    let r_bound = (r_norm + r_err) * (1.0 + 4.0 * UNIT_ROUNDOFF);

    // ‖VᵀV − I‖₂ ≤ ‖fl(VᵀV) − I‖_F + γ_n ‖V‖_F²
    let mut f = v.transpose() * v;
    for i in 0..n {
        f[(i, i)] -= 1.0;
    }
    let f_bound = (f.norm() + gamma(n + 2) * v_norm * v_norm) * (1.0 + 4.0 * UNIT_ROUNDOFF);

    let bf = if f_bound < 0.5 {
        let sigma_min = (1.0 - f_bound).sqrt().next_down();
        Some((r_bound / sigma_min).next_up())
    } else {
        None
    };

    let radius = match bf {
        Some(rad) if estimate - rad >= gersh => rad,
        _ => (estimate - gersh).max(0.0).next_up(),
    };
    Ok(EigenBound { estimate, radius })
}

/// Gershgorin lower bound `min_i (S_ii − Σ_{j≠i} |S_ij|)` with rounding slack.
fn gershgorin_floor(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let mut off = 0.0;
        let mut abs_sum = m[(i, i)].abs();
        for j in 0..n {
            if j != i {
                off += m[(i, j)].abs();
                abs_sum += m[(i, j)].abs();
            }
        }
        let lower = m[(i, i)] - off - gamma(n + 1) * abs_sum;
        best = best.min(lower);
    }
    best.next_down()
}
