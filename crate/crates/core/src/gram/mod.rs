//! Gram-matrix SDPs over the vectors `M_γ|u⟩`.
//!
//! Every source vector `u` (a reference state or the unknown state
//! orthogonal to it) is paired with every outcome `γ`; the Gram matrix of
//! these atoms is the SDP variable. Objective and constraints are linear in
//! its entries and are stored as Hermitian coefficient matrices `A` with
//! value `Tr(A G)`.

mod build;
pub mod oracle;
mod reduce;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Outcome, Setting};
use crate::hermitian::{real_embedding, HermitianMatrix, LinalgError, SparseHermitian, SymmetricMatrix, C64};
use crate::scenario::ScenarioError;
use crate::sdp::{Constraint, ConstraintSense, SdpError, Sense, SparseSymmetric, TraceSdp};

pub use reduce::{ReducedGramSdp, RANK_TOL};
pub use build::{
    build_decoy_phase, build_decoy_yield, build_mdi, joint_epsilon, build_pm_full, build_pm_partial, DecoyOptions,
    PhaseErrorDefinition,
};

#[derive(Debug, Error)]
pub enum GramError {
    #[error("missing statistic for {setting}, outcome {outcome}")]
    MissingStatistic { setting: Setting, outcome: Outcome },
    #[error("statistic for {setting} is not part of this scenario")]
    UnknownSetting { setting: Setting },
    #[error("statistic for {setting}, outcome {outcome} is not a probability: {value}")]
    BadStatistic { setting: Setting, outcome: Outcome, value: f64 },
    #[error("full characterization requires epsilon = 0, setting {setting} has {epsilon}")]
    NotFullyCharacterized { setting: usize, epsilon: f64 },
    #[error("epsilon for setting {setting} must lie in [0, 1), got {epsilon}")]
    BadEpsilon { setting: usize, epsilon: f64 },
    #[error("target photon number {target} exceeds n_cut {n_cut}")]
    TargetAboveCut { target: usize, n_cut: usize },
    #[error("truncated Poisson mass {mass} exceeds 1 for intensity {intensity}")]
    BadPhotonMass { intensity: usize, mass: f64 },
    #[error("ensembles have {alice} and {bob} settings but statistics cover a different set")]
    MismatchedSettings { alice: usize, bob: usize },
    #[error("key setting {0} out of range")]
    BadKeySetting(usize),
    #[error("problem carries no reference overlaps to reduce against")]
    NoReferenceData,
    #[error("constraint {label} vanishes on the reference span but asks for {rhs}")]
    InconsistentReduction { label: String, rhs: f64 },
    #[error("explicit attack: {0}")]
    Oracle(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomKind {
    Reference,
    Orthogonal,
    /// Orthonormal basis vector of the reference span.
    Basis,
}

impl fmt::Display for AtomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AtomKind::Reference => "ref",
            AtomKind::Orthogonal => "orth",
            AtomKind::Basis => "basis",
        })
    }
}

/// One Gram atom `M_γ|u⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomLabel {
    pub kind: AtomKind,
    pub setting: Setting,
    pub outcome: Outcome,
}

impl fmt::Display for AtomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}] {}", self.kind, self.setting, self.outcome)
    }
}

/// Which family of conditions produced a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    /// Observed statistic reproduced exactly.
    Statistics,
    /// Truncated photon-number sum bounded by the observed rate.
    TruncatedStatisticsUpper,
    /// Truncated photon-number sum bounded using the untruncated tail.
    TruncatedStatisticsLower,
    /// `Σ_γ E_γ = 𝟙` between two reference states.
    ReferenceCompleteness,
    /// `Σ_γ E_γ = 𝟙` between a reference and its own orthogonal state.
    ReferenceOrthogonalZero,
    /// `Σ_γ E_γ = 𝟙` on an orthogonal state.
    OrthogonalNormalization,
    /// Opt-in: reference and orthogonal states of different labels are
    /// orthogonal too.
    CrossReferenceOrthogonalZero,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintFamily::Statistics => "statistics",
            ConstraintFamily::TruncatedStatisticsUpper => "truncated_statistics_upper",
            ConstraintFamily::TruncatedStatisticsLower => "truncated_statistics_lower",
            ConstraintFamily::ReferenceCompleteness => "reference_completeness",
            ConstraintFamily::ReferenceOrthogonalZero => "reference_orthogonal_zero",
            ConstraintFamily::OrthogonalNormalization => "orthogonal_normalization",
            ConstraintFamily::CrossReferenceOrthogonalZero => "cross_reference_orthogonal_zero",
        })
    }
}

/// Real or imaginary part of a complex condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Real,
    Imaginary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramConstraint {
    /// Constraint value is `Tr(matrix · G)`.
    pub matrix: SparseHermitian,
    pub rhs: f64,
    pub sense: ConstraintSense,
    pub family: ConstraintFamily,
    pub part: Part,
    /// Short human-readable tag such as `j=0 0x`.
    pub label: String,
}

/// Reference settings and their overlaps `⟨φ_a|φ_b⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceData {
    pub settings: Vec<Setting>,
    pub overlaps: HermitianMatrix,
}

/// A Gram SDP before the real embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSdp {
    atoms: Vec<AtomLabel>,
    objective: SparseHermitian,
    offset: f64,
    sense: Sense,
    constraints: Vec<GramConstraint>,
    trace_bound: f64,
    references: Option<ReferenceData>,
}

impl GramSdp {
    pub fn atoms(&self) -> &[AtomLabel] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms.len()
    }

    pub fn objective(&self) -> &SparseHermitian {
        &self.objective
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn constraints(&self) -> &[GramConstraint] {
        &self.constraints
    }

    /// Upper bound on `Tr G`. Equal to the atom count: every source state is
    /// normalized, so the true trace (the number of sources) never exceeds it.
    pub fn trace_bound(&self) -> f64 {
        self.trace_bound
    }

    pub fn references(&self) -> Option<&ReferenceData> {
        self.references.as_ref()
    }

    /// Outcomes in atom order.
    pub fn outcomes(&self) -> Vec<Outcome> {
        let mut out: Vec<Outcome> = Vec::new();
        for a in &self.atoms {
            if out.contains(&a.outcome) {
                break;
            }
            out.push(a.outcome);
        }
        out
    }

    pub fn atom_index(&self, label: &AtomLabel) -> Option<usize> {
        self.atoms.iter().position(|a| a == label)
    }

    pub fn objective_value(&self, gram: &HermitianMatrix) -> f64 {
        self.objective.trace_product(gram) + self.offset
    }

    /// `|Tr(A G) − b|` for equalities and `max(0, Tr(A G) − b)` for
    /// inequalities.
    pub fn violations(&self, gram: &HermitianMatrix) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| {
                let lhs = c.matrix.trace_product(gram);
                match c.sense {
                    ConstraintSense::Eq => (lhs - c.rhs).abs(),
                    ConstraintSense::Le => (lhs - c.rhs).max(0.0),
                }
            })
            .collect()
    }

    /// Real form: `X = [[Re G, −Im G], [Im G, Re G]]` with every coefficient
    /// matrix embedded the same way and halved, so `⟨Â, X⟩ = Tr(A G)`.
    pub fn to_trace_sdp(&self) -> Result<TraceSdp, GramError> {
        let n = self.dim();
        let constraints = self
            .constraints
            .iter()
            .map(|c| Constraint { matrix: embed_sparse(&c.matrix), rhs: c.rhs, sense: c.sense })
            .collect();
        Ok(TraceSdp::new(2 * n, embed_sparse(&self.objective), self.offset, self.sense, constraints, 2.0 * self.trace_bound)?)
    }

    pub fn embed_point(gram: &HermitianMatrix) -> SymmetricMatrix {
        real_embedding(gram)
    }

    /// Writes the plain-text dump described in the README.
    pub fn dump(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "gram_sdp 1")?;
        writeln!(w, "atoms {}", self.atoms.len())?;
        for (i, a) in self.atoms.iter().enumerate() {
            writeln!(w, "{i} {} {} {}", a.kind, a.setting, a.outcome)?;
        }
        let sense = match self.sense {
            Sense::Maximize => "max",
            Sense::Minimize => "min",
        };
        writeln!(w, "sense {sense}")?;
        writeln!(w, "offset {:e}", self.offset)?;
        writeln!(w, "trace_bound {:e}", self.trace_bound)?;
        write_matrix(&mut w, "objective", &self.objective)?;
        writeln!(w, "constraints {}", self.constraints.len())?;
        for (k, c) in self.constraints.iter().enumerate() {
            let sense = match c.sense {
                ConstraintSense::Eq => "eq",
                ConstraintSense::Le => "le",
            };
            let part = match c.part {
                Part::Real => "re",
                Part::Imaginary => "im",
            };
            writeln!(w, "constraint {k} {} {part} {sense} {:e} # {}", c.family, c.rhs, c.label)?;
            write_matrix(&mut w, "matrix", &c.matrix)?;
        }
        Ok(())
    }
}

fn write_matrix(w: &mut impl Write, tag: &str, m: &SparseHermitian) -> io::Result<()> {
    let entries: Vec<_> = m.upper_entries().collect();
    writeln!(w, "{tag} {}", entries.len())?;
    for (r, c, v) in entries {
        writeln!(w, "{r} {c} {:e} {:e}", v.re, v.im)?;
    }
    Ok(())
}

/// Halved real embedding of a sparse Hermitian matrix.
fn embed_sparse(a: &SparseHermitian) -> SparseSymmetric {
    let n = a.dim();
    let mut triplets = Vec::new();
    for (r, c, v) in a.upper_entries() {
        let (re, im) = (0.5 * v.re, 0.5 * v.im);
        triplets.push((r, c, re));
        triplets.push((n + r, n + c, re));
        if r != c {
            triplets.push((r, n + c, -im));
            triplets.push((c, n + r, im));
        }
    }
    SparseSymmetric::from_triplets(2 * n, triplets)
}

/// Entries below this fraction of the largest coefficient are rounding noise
/// from cancelling terms and are dropped.
const COEFF_DROP: f64 = 1e-15;

/// Complex linear functional `Σ c_pq G_pq`.
#[derive(Debug, Clone, Default)]
pub(crate) struct ComplexForm {
    coeffs: BTreeMap<(usize, usize), C64>,
}

/// A source-space vector as a combination of sources.
pub(crate) type Expansion = Vec<(usize, C64)>;

impl ComplexForm {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, p: usize, q: usize, c: C64) {
        *self.coeffs.entry((p, q)).or_default() += c;
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|(&k, &v)| (k, v * factor)).collect() }
    }

    /// Adds `weight · ⟨bra|E_γ|ket⟩` where atoms are laid out by `layout`.
    pub(crate) fn add_expectation(&mut self, layout: &Layout, bra: &Expansion, ket: &Expansion, outcome: usize, weight: C64) {
        for &(u, cu) in bra {
            for &(v, cv) in ket {
                self.add(layout.atom(u, outcome), layout.atom(v, outcome), weight * cu.conj() * cv);
            }
        }
    }

    /// Hermitian `A` with `Tr(A G) = Re Σ c_pq G_pq` for Hermitian `G`.
    pub(crate) fn real_part(&self, dim: usize) -> SparseHermitian {
        self.hermitian(dim, C64::new(1.0, 0.0))
    }

    /// Hermitian `A` with `Tr(A G) = Im Σ c_pq G_pq`.
    pub(crate) fn imag_part(&self, dim: usize) -> SparseHermitian {
        self.hermitian(dim, C64::new(0.0, -1.0))
    }

    fn hermitian(&self, dim: usize, rotate: C64) -> SparseHermitian {
        let mut a = SparseHermitian::new(dim);
        for (&(p, q), &c) in &self.coeffs {
            let c = rotate * c;
            if p == q {
                a.add(p, p, c);
            } else {
                a.add(q, p, 0.5 * c);
            }
        }
        let largest = a.upper_entries().map(|(_, _, v)| v.norm()).fold(0.0, f64::max);
        let mut cleaned = SparseHermitian::new(dim);
        for (r, c, v) in a.upper_entries() {
            let re = if v.re.abs() > COEFF_DROP * largest { v.re } else { 0.0 };
            let im = if v.im.abs() > COEFF_DROP * largest { v.im } else { 0.0 };
            if re != 0.0 || im != 0.0 {
                cleaned.add(r, c, C64::new(re, im));
            }
        }
        cleaned
    }
}

/// Canonical atom layout: sources in order, each repeated over the outcomes.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    sources: Vec<(Setting, AtomKind)>,
    outcomes: Vec<Outcome>,
}

impl Layout {
    /// `settings` are sorted and deduplicated; each gets a reference source
    /// and, if `orthogonal`, an orthogonal source right after it.
    pub(crate) fn new(settings: &[Setting], orthogonal: bool, outcomes: &[Outcome]) -> Self {
        let mut sorted = settings.to_vec();
        sorted.sort();
        sorted.dedup();
        let mut sources = Vec::new();
        for s in sorted {
            sources.push((s, AtomKind::Reference));
            if orthogonal {
                sources.push((s, AtomKind::Orthogonal));
            }
        }
        Self { sources, outcomes: outcomes.to_vec() }
    }

    pub(crate) fn n_atoms(&self) -> usize {
        self.sources.len() * self.outcomes.len()
    }

    pub(crate) fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub(crate) fn atom(&self, source: usize, outcome: usize) -> usize {
        source * self.outcomes.len() + outcome
    }

    pub(crate) fn source(&self, setting: Setting, kind: AtomKind) -> usize {
        self.sources
            .binary_search(&(setting, kind))
            .unwrap_or_else(|_| panic!("source {kind} {setting} not in layout"))
    }

    pub(crate) fn has_orthogonal(&self) -> bool {
        self.sources.iter().any(|s| s.1 == AtomKind::Orthogonal)
    }

    pub(crate) fn atoms(&self) -> Vec<AtomLabel> {
        self.sources
            .iter()
            .flat_map(|&(setting, kind)| self.outcomes.iter().map(move |&outcome| AtomLabel { kind, setting, outcome }))
            .collect()
    }

    /// `√(1−ε)|φ⟩ + √ε|φ⊥⟩`, or just `|φ⟩` without orthogonal atoms.
    pub(crate) fn emitted(&self, setting: Setting, epsilon: f64) -> Expansion {
        let mut e = vec![(self.source(setting, AtomKind::Reference), C64::new((1.0 - epsilon).sqrt(), 0.0))];
        if self.has_orthogonal() && epsilon > 0.0 {
            e.push((self.source(setting, AtomKind::Orthogonal), C64::new(epsilon.sqrt(), 0.0)));
        }
        e
    }

    pub(crate) fn reference(&self, setting: Setting) -> Expansion {
        vec![(self.source(setting, AtomKind::Reference), C64::new(1.0, 0.0))]
    }

    pub(crate) fn orthogonal(&self, setting: Setting) -> Expansion {
        vec![(self.source(setting, AtomKind::Orthogonal), C64::new(1.0, 0.0))]
    }
}

/// Accumulates constraints and assembles the [`GramSdp`].
pub(crate) struct GramAssembler {
    layout: Layout,
    constraints: Vec<GramConstraint>,
    references: Option<ReferenceData>,
}

impl GramAssembler {
    pub(crate) fn new(layout: Layout) -> Self {
        Self { layout, constraints: Vec::new(), references: None }
    }

    pub(crate) fn set_references(&mut self, settings: Vec<Setting>, overlaps: HermitianMatrix) {
        self.references = Some(ReferenceData { settings, overlaps });
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `form = rhs` split into real and imaginary parts. The imaginary part
    /// is skipped when both sides vanish identically.
    pub(crate) fn equal(&mut self, form: &ComplexForm, rhs: C64, family: ConstraintFamily, label: String) {
        let n = self.layout.n_atoms();
        self.constraints.push(GramConstraint {
            matrix: form.real_part(n),
            rhs: rhs.re,
            sense: ConstraintSense::Eq,
            family,
            part: Part::Real,
            label: label.clone(),
        });
        let imag = form.imag_part(n);
        if !imag.is_zero() || rhs.im != 0.0 {
            self.constraints.push(GramConstraint {
                matrix: imag,
                rhs: rhs.im,
                sense: ConstraintSense::Eq,
                family,
                part: Part::Imaginary,
                label,
            });
        }
    }

    /// `Re form ≤ rhs`.
    pub(crate) fn at_most(&mut self, form: &ComplexForm, rhs: f64, family: ConstraintFamily, label: String) {
        self.constraints.push(GramConstraint {
            matrix: form.real_part(self.layout.n_atoms()),
            rhs,
            sense: ConstraintSense::Le,
            family,
            part: Part::Real,
            label,
        });
    }

    pub(crate) fn finish(self, objective: &ComplexForm, offset: f64, sense: Sense) -> GramSdp {
        let n = self.layout.n_atoms();
        debug_assert!(objective.imag_part(n).upper_entries().all(|(_, _, v)| v.norm() < 1e-12));
        GramSdp {
            atoms: self.layout.atoms(),
            objective: objective.real_part(n),
            offset,
            sense,
            constraints: self.constraints,
            trace_bound: n as f64,
            references: self.references,
        }
    }
}

#[cfg(test)]
mod tests;
