//! Infeasible-start primal–dual interior-point method (HKM direction,
//! Mehrotra predictor–corrector).
//!
//! Internally every problem is brought to
//!
//! ```text
//!   min ⟨Ĉ, X⟩   s.t.  ⟨Â_k, X⟩ + s_k = b̂_k,  X ⪰ 0,  s ≥ 0
//!   max b̂ᵀy      s.t.  Σ y_k Â_k + Z = Ĉ,  y_k + w_k = 0 (k ∈ le),  Z ⪰ 0,  w ≥ 0
//! ```
//!
//! where `Ĉ = ±C/‖C‖_F` and each row `(Â_k, b̂_k)` is scaled to unit
//! Frobenius norm. Slack pairs `(s_k, w_k)` exist only for inequality rows.

use std::collections::BTreeMap;

use log::{debug, trace};
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConstraintSense, Sense, SdpSolution, SolveStatus, SparseSymmetric, TraceSdp};
use crate::hermitian::SymmetricMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative duality gap target.
    pub gap_tol: f64,
    /// Relative primal and dual infeasibility target.
    pub feas_tol: f64,
    pub max_iters: usize,
    /// Residual threshold of the pivoted Cholesky used to drop dependent
    /// equality rows.
    pub prune_tol: f64,
    /// Record per-iteration diagnostics in the solution.
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-8, feas_tol: 1e-8, max_iters: 200, prune_tol: 1e-10, verbose: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub rel_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub mu: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

struct Row {
    entries: Vec<(usize, usize, f64)>,
    upper: SparseSymmetric,
    rhs: f64,
    /// Index into the slack vectors for inequality rows.
    slack: Option<usize>,
    original: usize,
    norm: f64,
}

struct Internal {
    n: usize,
    rows: Vec<Row>,
    n_slack: usize,
    c_hat: DMatrix<f64>,
    c_norm: f64,
    sign: f64,
    b_norm: f64,
}

#[derive(Clone)]
struct Iterate {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    y: DVector<f64>,
    s: DVector<f64>,
    w: DVector<f64>,
}

struct Measures {
    pobj: f64,
    dobj: f64,
    rel_gap: f64,
    pinf: f64,
    dinf: f64,
    mu: f64,
    r_p: DVector<f64>,
    r_d: DMatrix<f64>,
    r_w: DVector<f64>,
}

impl Measures {
    fn merit(&self) -> f64 {
        self.rel_gap.max(self.pinf).max(self.dinf)
    }
}

/// Solves `p` to the tolerances in `opts`.
///
/// The returned status is `Converged` when gap and both infeasibilities meet
/// their targets, `MaxIters` when the iteration limit is hit or progress
/// stalls, and `InfeasibleSuspected` when the iterates diverge. In every case
/// the best iterate seen is returned; feed it to [`super::certify`] for a
/// bound that does not depend on convergence.
pub fn solve(p: &TraceSdp, opts: &SolverOptions) -> SdpSolution {
    let (internal, pruned, zero_rows_infeasible) = prepare(p, opts);
    let mut it = initial_point(&internal);
    let mut status = SolveStatus::MaxIters;
    let mut log = Vec::new();
    let mut best: Option<(f64, Iterate)> = None;
    let mut since_best = 0usize;
    let mut small_steps = 0usize;
    let mut iterations = 0usize;
    let mut last_steps = (0.0, 0.0);

    for iter in 0..=opts.max_iters {
        let meas = measure(&internal, &it);
        iterations = iter;
        if opts.verbose {
            log.push(IterateRecord {
                iteration: iter,
                primal_objective: meas.pobj,
                dual_objective: meas.dobj,
                rel_gap: meas.rel_gap,
                primal_infeasibility: meas.pinf,
                dual_infeasibility: meas.dinf,
                mu: meas.mu,
                step_primal: last_steps.0,
                step_dual: last_steps.1,
            });
        }
        trace!(
            "iter {iter:3} p={:+.10e} d={:+.10e} gap={:.2e} pinf={:.2e} dinf={:.2e} mu={:.2e}",
            meas.pobj,
            meas.dobj,
            meas.rel_gap,
            meas.pinf,
            meas.dinf,
            meas.mu
        );
        let merit = meas.merit();
        if best.as_ref().is_none_or(|(b, _)| merit < *b) {
            best = Some((merit, it.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if meas.rel_gap <= opts.gap_tol && meas.pinf <= opts.feas_tol && meas.dinf <= opts.feas_tol {
            status = SolveStatus::Converged;
            best = Some((merit, it.clone()));
            break;
        }
        if iter == opts.max_iters || since_best > 25 || small_steps >= 4 {
            break;
        }
        let tr_x = it.x.trace();
        let y_norm = it.y.amax();
        if !tr_x.is_finite() || tr_x > 1e10 * (1.0 + p.trace_bound()) || y_norm > 1e12 {
            status = SolveStatus::InfeasibleSuspected;
            break;
        }

        match newton_step(&internal, &it, &meas) {
            Some((next, ap, ad)) => {
                it = next;
                last_steps = (ap, ad);
                if ap.max(ad) < 1e-7 {
                    small_steps += 1;
                } else {
                    small_steps = 0;
                }
            }
            None => {
                debug!("interior-point step failed at iteration {iter}");
                break;
            }
        }
    }

    let it = best.map(|(_, b)| b).unwrap_or(it);
    finish(p, &internal, it, status, iterations, pruned, zero_rows_infeasible, log)
}

fn prepare(p: &TraceSdp, opts: &SolverOptions) -> (Internal, Vec<usize>, bool) {
    let n = p.dim();
    let mut c_norm = p.objective().norm();
    if c_norm == 0.0 || !c_norm.is_finite() {
        c_norm = 1.0;
    }
    let sign = match p.sense() {
        Sense::Maximize => -1.0,
        Sense::Minimize => 1.0,
    };
    let mut c_hat = DMatrix::zeros(n, n);
    p.objective().add_to_dense(&mut c_hat, sign / c_norm);

    let mut pruned = Vec::new();
    let mut zero_rows_infeasible = false;
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for (k, con) in p.constraints().iter().enumerate() {
        let norm = con.matrix.norm();
        if norm == 0.0 {
            let ok = match con.sense {
                ConstraintSense::Eq => con.rhs == 0.0,
                ConstraintSense::Le => con.rhs >= 0.0,
            };
            zero_rows_infeasible |= !ok;
            pruned.push(k);
        } else {
            candidates.push((k, norm));
        }
    }

    let eq_idx: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, (k, _))| p.constraints()[*k].sense == ConstraintSense::Eq)
        .map(|(i, _)| i)
        .collect();
    let dependent = dependent_rows(p, &candidates, &eq_idx, opts.prune_tol);
    let mut keep = vec![true; candidates.len()];
    for i in dependent {
        keep[i] = false;
        pruned.push(candidates[i].0);
    }
    pruned.sort_unstable();

    let mut rows = Vec::new();
    let mut n_slack = 0;
    for (i, &(k, norm)) in candidates.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let con = &p.constraints()[k];
        let upper = con.matrix.scaled(1.0 / norm);
        let slack = match con.sense {
            ConstraintSense::Le => {
                n_slack += 1;
                Some(n_slack - 1)
            }
            ConstraintSense::Eq => None,
        };
        rows.push(Row { entries: upper.full_entries(), upper, rhs: con.rhs / norm, slack, original: k, norm });
    }
    let b_norm = rows.iter().map(|r| r.rhs * r.rhs).sum::<f64>().sqrt();
    (Internal { n, rows, n_slack, c_hat, c_norm, sign, b_norm }, pruned, zero_rows_infeasible)
}

/// Indices (into `candidates`) of equality rows that are numerically
/// dependent on earlier-pivoted ones. Uses pivoted Cholesky on the Gram
/// matrix of the normalized rows, which selects the same rows as a
/// column-pivoted QR of the stacked row vectors.
fn dependent_rows(p: &TraceSdp, candidates: &[(usize, f64)], eq_idx: &[usize], tol: f64) -> Vec<usize> {
    let me = eq_idx.len();
    if me == 0 {
        return Vec::new();
    }
    // Inverted index over matrix positions; off-diagonal upper entries count
    // twice in the Frobenius inner product.
    let mut by_pos: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for (local, &ci) in eq_idx.iter().enumerate() {
        let (k, norm) = candidates[ci];
        for &(r, c, v) in p.constraints()[k].matrix.upper() {
            let weight = if r == c { 1.0 } else { std::f64::consts::SQRT_2 };
            by_pos.entry((r, c)).or_default().push((local, weight * v / norm));
        }
    }
    let mut gram = DMatrix::<f64>::zeros(me, me);
    for list in by_pos.values() {
        for &(a, va) in list {
            for &(b, vb) in list {
                gram[(a, b)] += va * vb;
            }
        }
    }

    let mut diag: Vec<f64> = (0..me).map(|i| gram[(i, i)]).collect();
    let mut chosen = vec![false; me];
    let mut l_cols: Vec<DVector<f64>> = Vec::new();
    // near-ties go to the lower index so rounding cannot flip the choice
    while let Some(top) = (0..me).filter(|&i| !chosen[i]).map(|i| diag[i]).max_by(f64::total_cmp) {
        let piv = (0..me).find(|&i| !chosen[i] && diag[i] >= top - 1e-9 * top.abs()).expect("maximum exists");
        if diag[piv] <= tol {
            break;
        }
        let root = diag[piv].sqrt();
        let mut col = DVector::zeros(me);
        for i in 0..me {
            if chosen[i] || i == piv {
                continue;
            }
            let mut v = gram[(i, piv)];
            for lc in &l_cols {
                v -= lc[i] * lc[piv];
            }
            col[i] = v / root;
        }
        col[piv] = root;
        for i in 0..me {
            if !chosen[i] && i != piv {
                diag[i] -= col[i] * col[i];
            }
        }
        chosen[piv] = true;
        l_cols.push(col);
    }
    (0..me).filter(|&i| !chosen[i]).map(|i| eq_idx[i]).collect()
}

fn initial_point(int: &Internal) -> Iterate {
    let n = int.n as f64;
    let max_b = int.rows.iter().map(|r| (1.0 + r.rhs.abs()) / 2.0).fold(0.0, f64::max);
    let xi = 10.0f64.max(n.sqrt()).max(n.sqrt() * max_b);
    let c_fro = int.c_hat.norm();
    let eta = 10.0f64.max(n.sqrt()).max(c_fro).max(1.0 + c_fro);
    let m = int.rows.len();
    Iterate {
        x: DMatrix::identity(int.n, int.n) * xi,
        z: DMatrix::identity(int.n, int.n) * eta,
        y: DVector::zeros(m),
        s: DVector::from_element(int.n_slack, xi),
        w: DVector::from_element(int.n_slack, eta),
    }
}

fn apply_adjoint(int: &Internal, y: &DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(int.n, int.n);
    for (row, &yk) in int.rows.iter().zip(y.iter()) {
        if yk != 0.0 {
            row.upper.add_to_dense(&mut out, yk);
        }
    }
    out
}

fn apply_operator(int: &Internal, x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(int.rows.len(), int.rows.iter().map(|r| r.upper.inner_dense(x)))
}

fn measure(int: &Internal, it: &Iterate) -> Measures {
    let ax = apply_operator(int, &it.x);
    let mut r_p = DVector::zeros(int.rows.len());
    let mut r_w = DVector::zeros(int.n_slack);
    for (k, row) in int.rows.iter().enumerate() {
        let mut v = row.rhs - ax[k];
        if let Some(si) = row.slack {
            v -= it.s[si];
            r_w[si] = -it.y[k] - it.w[si];
        }
        r_p[k] = v;
    }
    let r_d = &int.c_hat - apply_adjoint(int, &it.y) - &it.z;
    let pobj = int.c_hat.dot(&it.x);
    let dobj = int.rows.iter().zip(it.y.iter()).map(|(r, y)| r.rhs * y).sum::<f64>();
    let denom = (int.n + int.n_slack).max(1) as f64;
    let mu = (it.x.dot(&it.z) + it.s.dot(&it.w)) / denom;
    let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    let pinf = r_p.norm() / (1.0 + int.b_norm);
    let dinf = (r_d.norm_squared() + r_w.norm_squared()).sqrt() / 2.0;
    Measures { pobj, dobj, rel_gap, pinf, dinf, mu, r_p, r_d, r_w }
}

/// `M_ij = Tr(Â_i X Â_j Z⁻¹)`. Each row is summed directly over the sparse
/// entries, or through the dense product `Z⁻¹ Â_i X` when that is cheaper.
fn schur_matrix(int: &Internal, x: &DMatrix<f64>, zinv: &DMatrix<f64>) -> DMatrix<f64> {
    let m = int.rows.len();
    let n = int.n;
    let xs = x.as_slice();
    let zs = zinv.as_slice();
    let rows_out: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ri = &int.rows[i].entries;
            let tail: usize = int.rows[i..].iter().map(|r| r.entries.len()).sum();
            let direct_cost = ri.len() * tail;
            let dense_cost = n * n * n + ri.len() * n + tail;
            if dense_cost < direct_cost {
                let mut ax = DMatrix::zeros(n, n);
                for &(a, b, v) in ri {
                    for c in 0..n {
                        ax[(a, c)] += v * x[(b, c)];
                    }
                }
                let g = zinv * ax;
                return (i..m).map(|j| int.rows[j].entries.iter().map(|&(c, d, w)| w * g[(d, c)]).sum()).collect();
            }
            let mut out = vec![0.0; m - i];
            for (j, slot) in (i..m).zip(out.iter_mut()) {
                let rj = &int.rows[j].entries;
                let mut sum = 0.0;
                for &(a, b, v) in ri {
                    let mut inner = 0.0;
                    for &(c, d, w) in rj {
                        // X[b,c] · Z⁻¹[d,a], column-major storage
                        inner += w * xs[b + c * n] * zs[d + a * n];
                    }
                    sum += v * inner;
                }
                *slot = sum;
            }
            out
        })
        .collect();
    let mut mat = DMatrix::zeros(m, m);
    for (i, row) in rows_out.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    mat
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Largest step `α` keeping `M + α ΔM ⪰ 0`, given the Cholesky
/// factor of `M`. Returns `f64::INFINITY` when the direction never leaves
/// the cone.
fn max_psd_step(chol: &Cholesky<f64, nalgebra::Dyn>, dm: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let Some(tmp) = l.solve_lower_triangular(dm) else { return 0.0 };
    let Some(inner) = l.solve_lower_triangular(&tmp.transpose()) else { return 0.0 };
    let inner = sym(inner);
    let lmin = inner.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn max_vec_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(f64::INFINITY, f64::min)
}

struct Direction {
    dx: DMatrix<f64>,
    dz: DMatrix<f64>,
    dy: DVector<f64>,
    ds: DVector<f64>,
    dw: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn direction(
    int: &Internal,
    it: &Iterate,
    meas: &Measures,
    zinv: &DMatrix<f64>,
    schur: &Cholesky<f64, nalgebra::Dyn>,
    sigma_mu: f64,
    corr: Option<&Direction>,
) -> Direction {
    // H = σμ Z⁻¹ − X − ΔXₐ ΔZₐ Z⁻¹
    let mut h = zinv * sigma_mu - &it.x;
    if let Some(d) = corr {
        h -= &d.dx * &d.dz * zinv;
    }
    let xrz = &it.x * &meas.r_d * zinv;
    let g = &h - &xrz;
    let ag = apply_operator(int, &g);

    // t_k = σμ − s_k w_k − Δsₐ Δwₐ
    let mut t = DVector::zeros(int.n_slack);
    for k in 0..int.n_slack {
        t[k] = sigma_mu - it.s[k] * it.w[k];
        if let Some(d) = corr {
            t[k] -= d.ds[k] * d.dw[k];
        }
    }

    let mut rhs = DVector::zeros(int.rows.len());
    for (k, row) in int.rows.iter().enumerate() {
        let mut v = meas.r_p[k] - ag[k];
        if let Some(si) = row.slack {
            v -= (t[si] - it.s[si] * meas.r_w[si]) / it.w[si];
        }
        rhs[k] = v;
    }
    let dy = schur.solve(&rhs);
    let ady = apply_adjoint(int, &dy);
    let dz = &meas.r_d - &ady;
    let dx = sym(&g + &it.x * &ady * zinv);
    let mut dw = DVector::zeros(int.n_slack);
    let mut ds = DVector::zeros(int.n_slack);
    for (k, row) in int.rows.iter().enumerate() {
        if let Some(si) = row.slack {
            dw[si] = meas.r_w[si] - dy[k];
            ds[si] = (t[si] - it.s[si] * dw[si]) / it.w[si];
        }
    }
    Direction { dx, dz, dy, ds, dw }
}

fn newton_step(int: &Internal, it: &Iterate, meas: &Measures) -> Option<(Iterate, f64, f64)> {
    let chol_x = Cholesky::new(it.x.clone())?;
    let chol_z = Cholesky::new(it.z.clone())?;
    let zinv = sym(chol_z.inverse());

    let mut schur = schur_matrix(int, &it.x, &zinv);
    for (k, row) in int.rows.iter().enumerate() {
        if let Some(si) = row.slack {
            schur[(k, k)] += it.s[si] / it.w[si];
        }
    }
    let schur_chol = factor_schur(schur)?;

    let steps = |d: &Direction| {
        let ap = max_psd_step(&chol_x, &d.dx).min(max_vec_step(&it.s, &d.ds));
        let ad = max_psd_step(&chol_z, &d.dz).min(max_vec_step(&it.w, &d.dw));
        (ap, ad)
    };

    let pred = direction(int, it, meas, &zinv, &schur_chol, 0.0, None);
    let (ap_max, ad_max) = steps(&pred);
    let ap = ap_max.min(1.0);
    let ad = ad_max.min(1.0);
    let denom = (int.n + int.n_slack).max(1) as f64;
    let mu_aff = ((&it.x + &pred.dx * ap).dot(&(&it.z + &pred.dz * ad))
        + (&it.s + &pred.ds * ap).dot(&(&it.w + &pred.dw * ad)))
        / denom;
    let ratio = (mu_aff / meas.mu).max(0.0);
    let expon = if meas.mu > 1e-6 { (3.0 * ap.min(ad).powi(2)).max(1.0) } else { 3.0 };
    let sigma = ratio.powf(expon).min(1.0);

    let corr = direction(int, it, meas, &zinv, &schur_chol, sigma * meas.mu, Some(&pred));
    let (ap_max, ad_max) = steps(&corr);
    let gamma = 0.9 + 0.09 * ap.min(ad);
    let ap = (gamma * ap_max).min(1.0);
    let ad = (gamma * ad_max).min(1.0);
    if !(ap.is_finite() && ad.is_finite()) {
        return None;
    }

    let next = Iterate {
        x: sym(&it.x + &corr.dx * ap),
        z: sym(&it.z + &corr.dz * ad),
        y: &it.y + &corr.dy * ad,
        s: &it.s + &corr.ds * ap,
        w: &it.w + &corr.dw * ad,
    };
    Some((next, ap, ad))
}

/// Cholesky of the Schur complement, retrying with a small diagonal shift
/// when it is numerically singular.
fn factor_schur(schur: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(schur.clone()) {
        return Some(c);
    }
    let scale = (0..schur.nrows()).map(|i| schur[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 1e-14 * scale;
    for _ in 0..6 {
        let mut shifted = schur.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c);
        }
        shift *= 100.0;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &TraceSdp,
    int: &Internal,
    it: Iterate,
    mut status: SolveStatus,
    iterations: usize,
    pruned: Vec<usize>,
    zero_rows_infeasible: bool,
    log: Vec<IterateRecord>,
) -> SdpSolution {
    if zero_rows_infeasible {
        status = SolveStatus::InfeasibleSuspected;
    }
    let mut dual_y = vec![0.0; p.constraints().len()];
    for (row, &yk) in int.rows.iter().zip(it.y.iter()) {
        // Inequality multipliers are taken from w so their sign is exact.
        let internal_y = row.slack.map_or(yk, |si| -it.w[si]);
        dual_y[row.original] = int.sign * int.c_norm * internal_y / row.norm;
    }
    let primal_x = SymmetricMatrix::from_dmatrix(it.x).expect("square iterate");
    let primal_value = p.objective_value(&primal_x);
    let dual_value = p
        .constraints()
        .iter()
        .zip(&dual_y)
        .map(|(c, y)| c.rhs * y)
        .sum::<f64>()
        + p.offset();
    let primal_residual = p.violations(&primal_x).into_iter().fold(0.0, f64::max);
    let slack = super::certify::dual_slack(p, &dual_y);
    let dual_slack_min_eig = slack.eigenvalues().first().copied().unwrap_or(0.0);
    let gap = (primal_value - dual_value).abs() / (1.0 + primal_value.abs() + dual_value.abs());
    SdpSolution {
        primal_x,
        dual_y,
        primal_value,
        dual_value,
        primal_residual,
        dual_slack_min_eig,
        gap,
        status,
        iterations,
        pruned,
        log,
    }
}
