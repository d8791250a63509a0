//! Explicit attacks: a concrete channel and measurement, evaluated exactly.
//!
//! The Gram matrix produced here is a feasible point of the matching
//! builder's SDP, so any certified bound must dominate `value`.

use nalgebra::{DMatrix, DVector};

use super::{AtomKind, GramError, Layout, PhaseErrorDefinition};
use crate::channel::{ObservedStatistics, Outcome, Setting, PM_OUTCOMES};
use crate::hermitian::{HermitianMatrix, C64};
use crate::scenario::DecoyEnsemble;

/// Tolerance on `Σ K†K = 𝟙` and `Σ Γ = 𝟙`.
pub const ATTACK_TOL: f64 = 1e-10;

/// A source state `√(1−ε)|φ⟩ + √ε|φ⊥⟩` in some explicit Hilbert space.
#[derive(Debug, Clone)]
pub struct ExplicitSource {
    pub setting: Setting,
    pub reference: DVector<C64>,
    pub orthogonal: Option<DVector<C64>>,
    pub epsilon: f64,
}

impl ExplicitSource {
    pub fn emitted(&self) -> DVector<C64> {
        let mut v = self.reference.scale((1.0 - self.epsilon).sqrt());
        if let Some(o) = &self.orthogonal {
            v += o.scale(self.epsilon.sqrt());
        }
        v
    }

    /// Joint source `|ψ_a⟩ ⊗ |ψ_b⟩` with reference `|φ_a⟩ ⊗ |φ_b⟩` and
    /// `ξ = 1 − (1−ε_a)(1−ε_b)`.
    pub fn product(a: &ExplicitSource, b: &ExplicitSource, setting: Setting) -> Self {
        let reference = a.reference.kronecker(&b.reference);
        let xi = super::joint_epsilon(a.epsilon, b.epsilon);
        let orthogonal = if a.orthogonal.is_none() && b.orthogonal.is_none() {
            None
        } else if xi > 0.0 {
            let psi = a.emitted().kronecker(&b.emitted());
            Some((psi - reference.scale((1.0 - xi).sqrt())).unscale(xi.sqrt()))
        } else if let Some(ao) = &a.orthogonal {
            // any unit vector orthogonal to the reference will do
            Some(ao.kronecker(&b.reference))
        } else {
            b.orthogonal.as_ref().map(|bo| a.reference.kronecker(bo))
        };
        Self { setting, reference, orthogonal, epsilon: xi }
    }
}

/// Eve's channel (Kraus operators, output × input) and Bob's measurement
/// (one POVM element per outcome, in the builder's outcome order).
#[derive(Debug, Clone)]
pub struct ExplicitAttack {
    pub kraus: Vec<DMatrix<C64>>,
    pub povm: Vec<DMatrix<C64>>,
}

/// Quantity evaluated directly from the purified source.
#[derive(Debug, Clone)]
pub enum TrueObjective {
    /// Phase-error probability of `(|0⟩|ψ_a⟩ + e^{iω}|1⟩|ψ_b⟩)/√2`; `kets`
    /// index into the source list.
    PhaseError { kets: [usize; 2], omega: f64 },
    /// MDI phase-error probability; `kets[a][b]` is the joint source for
    /// key bits `(a, b)`.
    MdiPhaseError { kets: [[usize; 2]; 2], definition: PhaseErrorDefinition },
    /// `1 − mean_k ⟨ψ_k|E_f|ψ_k⟩`.
    DetectionYield { kets: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub statistics: ObservedStatistics,
    /// Gram matrix of `M_γ|u⟩` in the builder's atom order.
    pub gram: HermitianMatrix,
    pub value: f64,
    pub effective_povm: Vec<DMatrix<C64>>,
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn check_attack(attack: &ExplicitAttack, n_outcomes: usize) -> Result<(usize, usize), GramError> {
    let first = attack.kraus.first().ok_or_else(|| GramError::Oracle("no Kraus operators".into()))?;
    let (d_out, d_in) = first.shape();
    if attack.kraus.iter().any(|k| k.shape() != (d_out, d_in)) {
        return Err(GramError::Oracle("Kraus operators differ in shape".into()));
    }
    let mut sum = DMatrix::<C64>::zeros(d_in, d_in);
    for k in &attack.kraus {
        sum += k.adjoint() * k;
    }
    let defect = max_abs(&(sum - DMatrix::identity(d_in, d_in)));
    if defect > ATTACK_TOL {
        return Err(GramError::Oracle(format!("Kraus set not trace preserving (defect {defect:e})")));
    }
    if attack.povm.len() != n_outcomes {
        return Err(GramError::Oracle(format!("expected {n_outcomes} POVM elements, got {}", attack.povm.len())));
    }
    let mut total = DMatrix::<C64>::zeros(d_out, d_out);
    for (g, e) in attack.povm.iter().enumerate() {
        if e.shape() != (d_out, d_out) {
            return Err(GramError::Oracle(format!("POVM element {g} has wrong shape")));
        }
        if max_abs(&(e - e.adjoint())) > ATTACK_TOL {
            return Err(GramError::Oracle(format!("POVM element {g} not Hermitian")));
        }
        let min = e.clone().symmetric_eigenvalues().min();
        if min < -ATTACK_TOL {
            return Err(GramError::Oracle(format!("POVM element {g} has eigenvalue {min:e}")));
        }
        total += e;
    }
    let defect = max_abs(&(total - DMatrix::identity(d_out, d_out)));
    if defect > ATTACK_TOL {
        return Err(GramError::Oracle(format!("POVM does not sum to identity (defect {defect:e})")));
    }
    Ok((d_out, d_in))
}

/// Principal square root of a PSD Hermitian matrix.
fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let hermitian = (m + m.adjoint()).scale(0.5);
    let eig = hermitian.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint()
}

fn expectation(op: &DMatrix<C64>, bra: &DVector<C64>, ket: &DVector<C64>) -> C64 {
    bra.dotc(&(op * ket))
}

/// Exact statistics, Gram matrix and objective for one explicit attack.
///
/// `sources` must carry an orthogonal vector either for all or for none of
/// the settings; with orthogonal vectors the Gram matrix matches the
/// partially characterized builders, without them the fully characterized
/// ones.
pub fn explicit_attack_oracle(
    sources: &[ExplicitSource],
    outcomes: &[Outcome],
    attack: &ExplicitAttack,
    objective: &TrueObjective,
) -> Result<OracleOutcome, GramError> {
    let (_, d_in) = check_attack(attack, outcomes.len())?;
    let with_orth = sources.iter().filter(|s| s.orthogonal.is_some()).count();
    if with_orth != 0 && with_orth != sources.len() {
        return Err(GramError::Oracle("orthogonal vectors given for only some sources".into()));
    }
    for s in sources {
        let dims_ok = s.reference.len() == d_in && s.orthogonal.as_ref().is_none_or(|o| o.len() == d_in);
        if !dims_ok {
            return Err(GramError::Oracle(format!("source {} has wrong dimension", s.setting)));
        }
    }

    let effective: Vec<DMatrix<C64>> = attack
        .povm
        .iter()
        .map(|gamma| attack.kraus.iter().map(|k| k.adjoint() * gamma * k).fold(DMatrix::zeros(d_in, d_in), |acc, t| acc + t))
        .collect();
    let roots: Vec<DMatrix<C64>> = effective.iter().map(psd_sqrt).collect();

    let settings: Vec<Setting> = sources.iter().map(|s| s.setting).collect();
    let layout = Layout::new(&settings, with_orth > 0, outcomes);
    let by_setting = |s: Setting| sources.iter().find(|src| src.setting == s).expect("source present");
    let mut vectors = Vec::with_capacity(layout.n_atoms());
    for atom in layout.atoms() {
        let src = by_setting(atom.setting);
        let u = match atom.kind {
            AtomKind::Reference => &src.reference,
            AtomKind::Orthogonal => src.orthogonal.as_ref().expect("checked above"),
            AtomKind::Basis => unreachable!("layout only emits reference and orthogonal atoms"),
        };
        let g = outcomes.iter().position(|&o| o == atom.outcome).expect("outcome in list");
        vectors.push(&roots[g] * u);
    }
    let n = vectors.len();
    let gram = HermitianMatrix::from_fn(n, |p, q| vectors[p].dotc(&vectors[q]))?;

    let mut statistics = ObservedStatistics::new();
    for src in sources {
        let psi = src.emitted();
        for (g, &outcome) in outcomes.iter().enumerate() {
            statistics.insert(src.setting, outcome, expectation(&effective[g], &psi, &psi).re);
        }
    }

    let position = |o: Outcome| {
        outcomes.iter().position(|&x| x == o).ok_or_else(|| GramError::Oracle(format!("outcome {o} not measured")))
    };
    let value = match objective {
        TrueObjective::PhaseError { kets, omega } => {
            let psi = [sources[kets[0]].emitted(), sources[kets[1]].emitted()];
            phase_error_probability(&psi, &effective[position(Outcome::X0)?], &effective[position(Outcome::X1)?], *omega)
        }
        TrueObjective::MdiPhaseError { kets, definition } => {
            let psi = kets.map(|row| row.map(|k| sources[k].emitted()));
            mdi_phase_error_probability(&psi, &effective[position(Outcome::Pass)?], *definition)
        }
        TrueObjective::DetectionYield { kets } => {
            let f = &effective[position(Outcome::Inconclusive)?];
            let mean = kets.iter().map(|&k| {
                let psi = sources[k].emitted();
                expectation(f, &psi, &psi).re
            });
            1.0 - mean.sum::<f64>() / kets.len() as f64
        }
    };

    Ok(OracleOutcome { statistics, gram, value, effective_povm: effective })
}

fn ket(bits: &[f64]) -> DVector<C64> {
    DVector::from_iterator(bits.len(), bits.iter().map(|&b| C64::new(b, 0.0)))
}

fn projector(v: &DVector<C64>) -> DMatrix<C64> {
    v * v.adjoint()
}

/// `⟨Ψ|(|+⟩⟨+| ⊗ E_1x + |−⟩⟨−| ⊗ E_0x)|Ψ⟩` for the purification
/// `(|0⟩|ψ_0⟩ + e^{iω}|1⟩|ψ_1⟩)/√2`.
pub fn phase_error_probability(psi: &[DVector<C64>; 2], e0x: &DMatrix<C64>, e1x: &DMatrix<C64>, omega: f64) -> f64 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let purified = ket(&[1.0, 0.0]).kronecker(&psi[0]) + ket(&[0.0, 1.0]).kronecker(&psi[1]) * C64::from_polar(1.0, omega);
    let purified = purified.scale(h);
    let plus = ket(&[h, h]);
    let minus = ket(&[h, -h]);
    let op = projector(&plus).kronecker(e1x) + projector(&minus).kronecker(e0x);
    expectation(&op, &purified, &purified).re
}

/// MDI phase-error probability for `½ Σ_{ab} |a⟩|b⟩|ψ_ab⟩`.
pub fn mdi_phase_error_probability(psi: &[[DVector<C64>; 2]; 2], e_pass: &DMatrix<C64>, definition: PhaseErrorDefinition) -> f64 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let basis = [ket(&[1.0, 0.0]), ket(&[0.0, 1.0])];
    let mut purified = DVector::<C64>::zeros(4 * psi[0][0].len());
    for a in 0..2 {
        for b in 0..2 {
            purified += basis[a].kronecker(&basis[b]).kronecker(&psi[a][b]).scale(0.5);
        }
    }
    let plus = ket(&[h, h]);
    let minus = ket(&[h, -h]);
    let pair = |x: &DVector<C64>, y: &DVector<C64>| projector(&x.kronecker(y));
    let p = match definition {
        PhaseErrorDefinition::SameX => pair(&plus, &plus) + pair(&minus, &minus),
        PhaseErrorDefinition::DifferentX => pair(&plus, &minus) + pair(&minus, &plus),
    };
    expectation(&p.kronecker(e_pass), &purified, &purified).re
}

/// Decoy gains from per-photon-number yields: `Q = Σ_{n≤n_cut} p_{n|μ} Y^{(n)}`
/// plus the untruncated Poisson mass distributed by `tail` over the outcomes.
pub fn decoy_gains(
    ens: &DecoyEnsemble,
    n_cut: usize,
    photon_statistics: &ObservedStatistics,
    tail: [f64; 3],
) -> Result<ObservedStatistics, GramError> {
    if tail.iter().any(|&t| !(0.0..=1.0).contains(&t)) || (tail.iter().sum::<f64>() - 1.0).abs() > ATTACK_TOL {
        return Err(GramError::Oracle("tail is not a probability vector".into()));
    }
    let mut gains = ObservedStatistics::new();
    for j in 0..ens.n_settings() {
        for m in 0..ens.intensities().len() {
            let rest = 1.0 - ens.truncated_mass(m, n_cut);
            for (g, &outcome) in PM_OUTCOMES.iter().enumerate() {
                let mut q = rest * tail[g];
                for n in 0..=n_cut {
                    let s = Setting::Photon { setting: j, intensity: m, photons: n };
                    let y = photon_statistics.get(s, outcome).ok_or(GramError::MissingStatistic { setting: s, outcome })?;
                    q += ens.photon_probability(m, n) * y;
                }
                gains.insert(Setting::Intensity { setting: j, intensity: m }, outcome, q);
            }
        }
    }
    Ok(gains)
}
