//! Facial reduction onto the span of the reference states.
//!
//! When the reference overlaps are rank deficient every feasible Gram matrix
//! is singular, so the SDP has no strictly feasible point and interior-point
//! iterates stall. Rewriting each reference state in an orthonormal basis of
//! its span gives an equivalent problem on fewer atoms that does.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{AtomKind, AtomLabel, ConstraintFamily, GramConstraint, GramError, GramSdp, Part};
use crate::channel::Setting;
use crate::hermitian::{HermitianMatrix, SparseHermitian, C64};
use crate::sdp::ConstraintSense;

/// Eigenvalues of the reference overlap below `RANK_TOL * max` are dropped.
pub const RANK_TOL: f64 = 1e-13;

const ZERO_ROW_TOL: f64 = 1e-12;
const DROP_TOL: f64 = 1e-15;

/// Truncated upper/lower pairs whose bounds meet (no photon tail, as for
/// the vacuum intensity) pin the value. They become a single equality.
fn merge_pinned_pairs(constraints: &mut Vec<GramConstraint>) -> Result<(), GramError> {
    let lower: BTreeMap<String, usize> = constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.family == ConstraintFamily::TruncatedStatisticsLower)
        .map(|(i, c)| (c.label.clone(), i))
        .collect();
    let mut drop = vec![false; constraints.len()];
    for i in 0..constraints.len() {
        if constraints[i].family != ConstraintFamily::TruncatedStatisticsUpper {
            continue;
        }
        let Some(&j) = lower.get(&constraints[i].label) else { continue };
        let width = constraints[i].rhs + constraints[j].rhs;
        if width < -ZERO_ROW_TOL {
            return Err(GramError::InconsistentReduction { label: constraints[i].label.clone(), rhs: width });
        }
        if width <= ZERO_ROW_TOL {
            let c = &mut constraints[i];
            c.sense = ConstraintSense::Eq;
            c.family = ConstraintFamily::Statistics;
            drop[j] = true;
        }
    }
    let mut k = 0;
    constraints.retain(|_| {
        k += 1;
        !drop[k - 1]
    });
    Ok(())
}

/// A reduced problem plus the map back to the original atoms.
#[derive(Debug, Clone)]
pub struct ReducedGramSdp {
    sdp: GramSdp,
    // original atom p = sum_r lift[p, r] * reduced atom r
    lift: DMatrix<C64>,
    rank: usize,
}

impl ReducedGramSdp {
    pub fn sdp(&self) -> &GramSdp {
        &self.sdp
    }

    pub fn into_sdp(self) -> GramSdp {
        self.sdp
    }

    /// Dimension of the reference span.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Maps a reduced Gram matrix to the original atom order.
    pub fn lift_gram(&self, reduced: &HermitianMatrix) -> Result<HermitianMatrix, GramError> {
        let g = reduced.to_dmatrix();
        let full = &self.lift * g * self.lift.adjoint();
        Ok(HermitianMatrix::from_dmatrix(&full)?)
    }
}

impl GramSdp {
    /// Restricts the problem to the span of the reference states.
    ///
    /// Objective and constraints are conjugated by the lift, the reference
    /// completeness rows are replaced by orthonormality of the basis atoms,
    /// rows that vanish identically are dropped, and inequality pairs with
    /// coinciding bounds become equalities.
    pub fn reduce(&self) -> Result<ReducedGramSdp, GramError> {
        let refs = self.references.as_ref().ok_or(GramError::NoReferenceData)?;
        let outcomes = self.outcomes();
        let n_out = outcomes.len();

        let eig = refs.overlaps.to_dmatrix().symmetric_eigen();
        let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l));
        let kept: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&k| eig.eigenvalues[k] > RANK_TOL * lambda_max).collect();
        let rank = kept.len();

        let mut orth_settings: Vec<Setting> = Vec::new();
        for a in &self.atoms {
            if a.kind == AtomKind::Orthogonal && !orth_settings.contains(&a.setting) {
                orth_settings.push(a.setting);
            }
        }
        let n_new = (rank + orth_settings.len()) * n_out;

        let mut atoms = Vec::with_capacity(n_new);
        for k in 0..rank {
            atoms.extend(outcomes.iter().map(|&outcome| AtomLabel { kind: AtomKind::Basis, setting: Setting::Basis(k), outcome }));
        }
        for &setting in &orth_settings {
            atoms.extend(outcomes.iter().map(|&outcome| AtomLabel { kind: AtomKind::Orthogonal, setting, outcome }));
        }

        let n_old = self.atoms.len();
        let mut lift = DMatrix::<C64>::zeros(n_old, n_new);
        // sparse rows of the lift for conjugating the coefficient matrices
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n_old];
        for (p, a) in self.atoms.iter().enumerate() {
            let gamma = outcomes.iter().position(|&o| o == a.outcome).expect("outcome listed");
            match a.kind {
                AtomKind::Reference => {
                    let src = refs.settings.iter().position(|&s| s == a.setting).ok_or(GramError::UnknownSetting { setting: a.setting })?;
                    for (k, &col) in kept.iter().enumerate() {
                        let w = eig.eigenvectors[(src, col)] * eig.eigenvalues[col].sqrt();
                        lift[(p, k * n_out + gamma)] = w;
                        rows[p].push((k * n_out + gamma, w));
                    }
                }
                AtomKind::Orthogonal => {
                    let o = orth_settings.iter().position(|&s| s == a.setting).expect("collected above");
                    let r = (rank + o) * n_out + gamma;
                    lift[(p, r)] = C64::new(1.0, 0.0);
                    rows[p].push((r, C64::new(1.0, 0.0)));
                }
                AtomKind::Basis => return Err(GramError::NoReferenceData),
            }
        }

        let conjugate = |m: &SparseHermitian| -> SparseHermitian {
            let mut dense = DMatrix::<C64>::zeros(n_new, n_new);
            let mut push = |p: usize, q: usize, v: C64| {
                for &(r, wr) in &rows[p] {
                    for &(s, ws) in &rows[q] {
                        dense[(r, s)] += wr.conj() * v * ws;
                    }
                }
            };
            for (p, q, v) in m.upper_entries() {
                push(p, q, v);
                if p != q {
                    push(q, p, v.conj());
                }
            }
            let scale = dense.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
            let mut out = SparseHermitian::new(n_new);
            for s in 0..n_new {
                for r in 0..=s {
                    let v = dense[(r, s)];
                    if v.norm() > DROP_TOL * scale && v.norm() > 0.0 {
                        out.add(r, s, if r == s { C64::new(v.re, 0.0) } else { v });
                    }
                }
            }
            out
        };

        let mut constraints = Vec::new();
        for c in &self.constraints {
            if c.family == ConstraintFamily::ReferenceCompleteness {
                continue;
            }
            let matrix = conjugate(&c.matrix);
            if matrix.is_zero() {
                let consistent = match c.sense {
                    ConstraintSense::Eq => c.rhs.abs() <= ZERO_ROW_TOL,
                    ConstraintSense::Le => c.rhs >= -ZERO_ROW_TOL,
                };
                if !consistent {
                    return Err(GramError::InconsistentReduction { label: c.label.clone(), rhs: c.rhs });
                }
                continue;
            }
            constraints.push(GramConstraint { matrix, ..c.clone() });
        }
        merge_pinned_pairs(&mut constraints)?;
        for k in 0..rank {
            for l in k..rank {
                for part in [Part::Real, Part::Imaginary] {
                    if k == l && part == Part::Imaginary {
                        continue;
                    }
                    let mut matrix = SparseHermitian::new(n_new);
                    for gamma in 0..n_out {
                        let (r, s) = (k * n_out + gamma, l * n_out + gamma);
                        // Tr(A G) = Re G[r,s] for A[s,r] = 1/2, Im G[r,s] for A[s,r] = -i/2
                        let v = match (k == l, part) {
                            (true, _) => C64::new(1.0, 0.0),
                            (false, Part::Real) => C64::new(0.5, 0.0),
                            (false, Part::Imaginary) => C64::new(0.0, -0.5),
                        };
                        matrix.add(s, r, v);
                    }
                    constraints.push(GramConstraint {
                        matrix,
                        rhs: if k == l { 1.0 } else { 0.0 },
                        sense: ConstraintSense::Eq,
                        family: ConstraintFamily::ReferenceCompleteness,
                        part,
                        label: format!("basis k={k} l={l}"),
                    });
                }
            }
        }

        let sdp = GramSdp {
            atoms,
            objective: conjugate(&self.objective),
            offset: self.offset,
            sense: self.sense,
            constraints,
            trace_bound: n_new as f64,
            references: None,
        };
        Ok(ReducedGramSdp { sdp, lift, rank })
    }
}
