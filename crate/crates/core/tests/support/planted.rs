//! Random SDPs with a known optimum, built from a complementary primal–dual
//! pair `(X*, y*, Z*)` with `X* Z* = 0`.

use nalgebra::DMatrix;
use qkdsdp::sdp::{Constraint, ConstraintSense, Sense, SparseSymmetric, TraceSdp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Planted {
    pub problem: TraceSdp,
    pub optimum: f64,
    pub x_star: DMatrix<f64>,
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in r..n {
            if rng.gen::<f64>() < density {
                let v: f64 = rng.gen_range(-1.0..1.0);
                m[(r, c)] = v;
                m[(c, r)] = v;
            }
        }
    }
    m
}

fn to_sparse(m: &DMatrix<f64>) -> SparseSymmetric {
    let n = m.nrows();
    SparseSymmetric::from_triplets(n, (0..n).flat_map(|r| (r..n).map(move |c| (r, c))).map(|(r, c)| (r, c, m[(r, c)])))
}

/// Planted instance of dimension `n` with `m_eq` random equalities, `m_le`
/// inequalities (about half active), and a trace equality fixing `Tr X`.
pub fn planted(rng: &mut ChaCha8Rng, n: usize, m_eq: usize, m_le: usize, sense: Sense) -> Planted {
    let rank = rng.gen_range(1..=n.div_ceil(2));
    // Orthonormal basis split into range(X*) and range(Z*).
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = g.qr().q();
    let mut x_star = DMatrix::zeros(n, n);
    let mut z_star = DMatrix::zeros(n, n);
    for k in 0..n {
        let col = q.column(k);
        let w: f64 = rng.gen_range(0.2..2.0);
        if k < rank {
            x_star += col * col.transpose() * w;
        } else {
            z_star += col * col.transpose() * w;
        }
    }
    let trace = x_star.trace();

    let density = (6.0 / n as f64).clamp(0.15, 1.0);
    let mut cons = Vec::new();
    let mut c_min = z_star.clone();
    cons.push(Constraint {
        matrix: to_sparse(&DMatrix::identity(n, n)),
        rhs: trace,
        sense: ConstraintSense::Eq,
    });
    let y0: f64 = rng.gen_range(-1.0..1.0);
    c_min += DMatrix::<f64>::identity(n, n) * y0;
    let mut optimum = y0 * trace;
    for _ in 0..m_eq {
        let a = random_symmetric(rng, n, density);
        let b = a.dot(&x_star);
        let y: f64 = rng.gen_range(-1.0..1.0);
        c_min += &a * y;
        optimum += y * b;
        cons.push(Constraint { matrix: to_sparse(&a), rhs: b, sense: ConstraintSense::Eq });
    }
    for k in 0..m_le {
        let a = random_symmetric(rng, n, density);
        let ax = a.dot(&x_star);
        if k % 2 == 0 {
            // active, multiplier ≤ 0 in the min form
            let y: f64 = -rng.gen_range(0.1..1.0);
            c_min += &a * y;
            optimum += y * ax;
            cons.push(Constraint { matrix: to_sparse(&a), rhs: ax, sense: ConstraintSense::Le });
        } else {
            cons.push(Constraint { matrix: to_sparse(&a), rhs: ax + rng.gen_range(0.1..1.0), sense: ConstraintSense::Le });
        }
    }
    let (c, optimum) = match sense {
        Sense::Minimize => (c_min, optimum),
        Sense::Maximize => (-c_min, -optimum),
    };
    let problem = TraceSdp::new(n, to_sparse(&c), 0.0, sense, cons, trace).expect("valid planted problem");
    Planted { problem, optimum, x_star }
}
