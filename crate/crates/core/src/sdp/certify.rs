//! Rigorous bounds from approximate dual points.
//!
//! For a maximization, any `y` with `y_k ≥ 0` on inequality rows gives
//! `⟨C, X⟩ ≤ bᵀy − λ_min(S)·Tr X` with `S = Σ y_k A_k − C` for every feasible
//! `X`, so `bᵀy + max(0, −λ_min(S))·trace_bound` is an upper bound on the
//! optimum. Minimizations are handled by the mirror argument. Rounding in
//! forming `bᵀy` and `S` is bounded explicitly and the final value is
//! rounded outward.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ConstraintSense, SdpError, SdpSolution, Sense, TraceSdp};
use crate::hermitian::{gamma, min_eigenvalue, SymmetricMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundDirection {
    /// The optimum is at most `value` (maximization).
    Upper,
    /// The optimum is at least `value` (minimization).
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBound {
    pub value: f64,
    pub direction: BoundDirection,
    /// `bᵀy + offset` before the eigenvalue correction.
    pub dual_objective: f64,
    /// Nonnegative amount added (upper) or subtracted (lower) to cover a
    /// dual slack that is not PSD. `value` additionally absorbs the rounding
    /// error of `bᵀy`.
    pub correction: f64,
    /// Rigorous lower bound on `λ_min` of the dual slack.
    pub slack_min_eig_floor: f64,
    /// False when the dual data are unusable (non-finite, or inequality
    /// multipliers of the wrong sign). The bound is then `±∞`.
    pub certificate_valid: bool,
}

/// `max(0, −λ_floor) · trace_bound`, rounded up.
pub fn dual_correction(lambda_floor: f64, trace_bound: f64) -> f64 {
    if lambda_floor >= 0.0 {
        0.0
    } else {
        ((-lambda_floor) * trace_bound).next_up()
    }
}

/// `Σ y_k A_k − C` for a maximization, `C − Σ y_k A_k` for a minimization.
pub(crate) fn dual_slack(p: &TraceSdp, y: &[f64]) -> SymmetricMatrix {
    let n = p.dim();
    let mut s = DMatrix::zeros(n, n);
    let sign = match p.sense() {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    for (con, &yk) in p.constraints().iter().zip(y) {
        if yk != 0.0 {
            con.matrix.add_to_dense(&mut s, sign * yk);
        }
    }
    p.objective().add_to_dense(&mut s, -sign);
    SymmetricMatrix::from_dmatrix(s).expect("square")
}

/// Certified bound on the optimum of `p` from the dual part of `sol`.
pub fn certify(p: &TraceSdp, sol: &SdpSolution) -> Result<CertifiedBound, SdpError> {
    certify_dual(p, &sol.dual_y)
}

/// Certified bound on the optimum of `p` from the multipliers `dual_y`.
///
/// Inequality multipliers with the wrong sign make the certificate invalid;
/// they are never flipped or clipped.
pub fn certify_dual(p: &TraceSdp, dual_y: &[f64]) -> Result<CertifiedBound, SdpError> {
    let m = p.constraints().len();
    if dual_y.len() != m {
        return Err(SdpError::DimensionMismatch { context: "dual vector".into(), expected: m, found: dual_y.len() });
    }
    let direction = match p.sense() {
        Sense::Maximize => BoundDirection::Upper,
        Sense::Minimize => BoundDirection::Lower,
    };
    let invalid = || CertifiedBound {
        value: match direction {
            BoundDirection::Upper => f64::INFINITY,
            BoundDirection::Lower => f64::NEG_INFINITY,
        },
        direction,
        dual_objective: f64::NAN,
        correction: f64::INFINITY,
        slack_min_eig_floor: f64::NEG_INFINITY,
        certificate_valid: false,
    };
    if dual_y.iter().any(|v| !v.is_finite()) {
        return Ok(invalid());
    }
    let wrong_sign = p.constraints().iter().zip(dual_y).any(|(con, &yk)| {
        con.sense == ConstraintSense::Le
            && match direction {
                BoundDirection::Upper => yk < 0.0,
                BoundDirection::Lower => yk > 0.0,
            }
    });
    if wrong_sign {
        return Ok(invalid());
    }
    let y = dual_y;

    // bᵀy + offset and its rounding error
    let terms: Vec<f64> = p.constraints().iter().zip(y).map(|(c, yk)| c.rhs * yk).collect();
    let dual_objective = terms.iter().sum::<f64>() + p.offset();
    let abs_sum = terms.iter().map(|t| t.abs()).sum::<f64>() + p.offset().abs();
    let dot_err = gamma(m + 2) * abs_sum;

    // ‖fl(S) − S‖_F ≤ γ_{m+1} ‖ |C| + Σ |y_k||A_k| ‖_F
    let n = p.dim();
    let mut abs_mat = DMatrix::<f64>::zeros(n, n);
    for &(r, c, v) in p.objective().upper() {
        abs_mat[(r, c)] += v.abs();
        if r != c {
            abs_mat[(c, r)] += v.abs();
        }
    }
    for (con, &yk) in p.constraints().iter().zip(y) {
        if yk != 0.0 {
            for &(r, c, v) in con.matrix.upper() {
                let a = (v * yk).abs();
                abs_mat[(r, c)] += a;
                if r != c {
                    abs_mat[(c, r)] += a;
                }
            }
        }
    }
    let slack_err = gamma(m + 2) * abs_mat.norm() * (1.0 + 4.0 * f64::EPSILON);

    let slack = dual_slack(p, y);
    let bound = min_eigenvalue(&slack)?;
    let floor = (bound.floor() - slack_err).next_down();
    let correction = dual_correction(floor, p.trace_bound());
    let widen = (correction + dot_err).next_up();
    let value = match direction {
        BoundDirection::Upper => (dual_objective + widen).next_up(),
        BoundDirection::Lower => (dual_objective - widen).next_down(),
    };
    if !value.is_finite() {
        return Ok(invalid());
    }
    Ok(CertifiedBound {
        value,
        direction,
        dual_objective,
        correction,
        slack_min_eig_floor: floor,
        certificate_valid: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{Constraint, SparseSymmetric};

    #[test]
    fn correction_example() {
        let c = dual_correction(-1e-9, 24.0);
        assert!(c >= 2.4e-8);
        assert!(c <= 2.4e-8 * (1.0 + 1e-14));
        assert_eq!(dual_correction(0.5, 24.0), 0.0);
    }

    /// max ±(X_00 + X_11) + 0.6 X_01  s.t. X_00 = X_11 = 1.
    fn tiny(sense: Sense) -> TraceSdp {
        let sign = if sense == Sense::Maximize { 1.0 } else { -1.0 };
        let c = SparseSymmetric::from_triplets(2, [(0, 0, sign), (1, 1, sign), (0, 1, 0.3)]);
        let cons = (0..2)
            .map(|i| Constraint {
                matrix: SparseSymmetric::from_triplets(2, [(i, i, 1.0)]),
                rhs: 1.0,
                sense: ConstraintSense::Eq,
            })
            .collect();
        TraceSdp::new(2, c, 0.0, sense, cons, 2.0).unwrap()
    }

    #[test]
    fn perturbed_dual_still_bounds_from_the_right_side() {
        // Optimum of max X00 + X11 + 0.6 X01 with unit diagonal is 2.6.
        let p = tiny(Sense::Maximize);
        for y in [[1.3, 1.3], [1.0, 1.0], [1.29, 1.31], [5.0, -1.0]] {
            let cert = certify_dual(&p, &y).unwrap();
            assert!(cert.certificate_valid);
            assert!(cert.value >= 2.6 - 1e-12, "{y:?} -> {}", cert.value);
            assert!(cert.correction >= 0.0);
        }
        let exact = certify_dual(&p, &[1.3, 1.3]).unwrap();
        assert!((exact.value - 2.6).abs() < 1e-12);

        let q = tiny(Sense::Minimize);
        // min −X00 − X11 + 0.6 X01 → −2.6
        for y in [[-1.3, -1.3], [-1.0, -1.0], [0.0, -4.0]] {
            let cert = certify_dual(&q, &y).unwrap();
            assert_eq!(cert.direction, BoundDirection::Lower);
            assert!(cert.value <= -2.6 + 1e-12, "{y:?} -> {}", cert.value);
        }
    }

    #[test]
    fn non_finite_dual_is_invalid() {
        let p = tiny(Sense::Maximize);
        let cert = certify_dual(&p, &[f64::NAN, 1.0]).unwrap();
        assert!(!cert.certificate_valid);
        assert_eq!(cert.value, f64::INFINITY);
    }

    #[test]
    fn wrong_sign_inequality_multiplier_invalidates() {
        let c = SparseSymmetric::from_triplets(1, [(0, 0, 1.0)]);
        let cons = vec![Constraint {
            matrix: SparseSymmetric::from_triplets(1, [(0, 0, 1.0)]),
            rhs: 3.0,
            sense: ConstraintSense::Le,
        }];
        let p = TraceSdp::new(1, c, 0.0, Sense::Maximize, cons, 3.0).unwrap();
        assert!(!certify_dual(&p, &[-1.0]).unwrap().certificate_valid);
        let ok = certify_dual(&p, &[2.0]).unwrap();
        assert!(ok.certificate_valid);
        assert_eq!(ok.correction, 0.0);
        assert!(ok.value >= 6.0 && ok.value < 6.0 + 1e-12);
    }
}
