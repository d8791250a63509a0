use serde::{Deserialize, Serialize};

use super::{ComplexForm, ConstraintFamily, Expansion, GramAssembler, GramError, GramSdp, Layout};
use crate::channel::{ObservedStatistics, Outcome, Setting, MDI_OUTCOMES, PM_OUTCOMES};
use crate::hermitian::{HermitianMatrix, C64};
use crate::scenario::{DecoyEnsemble, ReferenceEnsemble};
use crate::sdp::Sense;

/// Statistics slightly outside `[0, 1]` by rounding are accepted.
const PROBABILITY_SLACK: f64 = 1e-12;

/// Which X-basis coincidence counts as a phase error in an MDI setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseErrorDefinition {
    #[default]
    SameX,
    DifferentX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoyOptions {
    /// Largest photon number kept explicitly.
    pub n_cut: usize,
    /// Photon number whose yield or phase error is bounded.
    pub target_photons: usize,
    /// Also impose `⟨φ_p|φ⊥_q⟩ = 0` across different labels, which holds
    /// when the orthogonal part lives entirely in the back-reflected mode.
    pub cross_orthogonality: bool,
}

impl Default for DecoyOptions {
    fn default() -> Self {
        Self { n_cut: 2, target_photons: 1, cross_orthogonality: false }
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn outcome_index(layout: &Layout, outcome: Outcome) -> usize {
    layout.outcomes().iter().position(|&o| o == outcome).expect("outcome in layout")
}

fn statistic(stats: &ObservedStatistics, setting: Setting, outcome: Outcome) -> Result<f64, GramError> {
    let value = stats.get(setting, outcome).ok_or(GramError::MissingStatistic { setting, outcome })?;
    if !(value.is_finite() && (-PROBABILITY_SLACK..=1.0 + PROBABILITY_SLACK).contains(&value)) {
        return Err(GramError::BadStatistic { setting, outcome, value });
    }
    Ok(value)
}

/// Statistics must not mention settings outside `settings`.
fn check_known(stats: &ObservedStatistics, settings: &[Setting]) -> Result<(), GramError> {
    match stats.iter().find(|(s, _, _)| !settings.contains(s)) {
        Some((setting, _, _)) => Err(GramError::UnknownSetting { setting }),
        None => Ok(()),
    }
}

fn check_epsilon(setting: usize, epsilon: f64) -> Result<(), GramError> {
    if (0.0..1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(GramError::BadEpsilon { setting, epsilon })
    }
}

/// `Σ_γ ⟨bra|E_γ|ket⟩`.
fn completeness(layout: &Layout, bra: &Expansion, ket: &Expansion) -> ComplexForm {
    let mut form = ComplexForm::new();
    for g in 0..layout.outcomes().len() {
        form.add_expectation(layout, bra, ket, g, c(1.0));
    }
    form
}

/// Phase-error probability for `(|0⟩|ψ_0⟩ + e^{iω}|1⟩|ψ_1⟩)/√2` with
/// Alice measuring X: `+` with Bob's `1x` or `−` with Bob's `0x`.
fn pm_phase_objective(layout: &Layout, psi: [&Expansion; 2], omega: f64) -> ComplexForm {
    let x0 = outcome_index(layout, Outcome::X0);
    let x1 = outcome_index(layout, Outcome::X1);
    let phase = C64::from_polar(1.0, omega);
    let mut form = ComplexForm::new();
    for (g, sign) in [(x1, 1.0), (x0, -1.0)] {
        form.add_expectation(layout, psi[0], psi[0], g, c(0.25));
        form.add_expectation(layout, psi[1], psi[1], g, c(0.25));
        form.add_expectation(layout, psi[0], psi[1], g, 0.25 * sign * phase);
        form.add_expectation(layout, psi[1], psi[0], g, 0.25 * sign * phase.conj());
    }
    form
}

fn check_key(ens: &ReferenceEnsemble) -> Result<[usize; 2], GramError> {
    let key = ens.key_settings();
    match key.iter().find(|&&k| k >= ens.len()) {
        Some(&k) => Err(GramError::BadKeySetting(k)),
        None => Ok(key),
    }
}

/// Maximize the phase-error probability when every emitted state is known.
pub fn build_pm_full(refs: &ReferenceEnsemble, stats: &ObservedStatistics) -> Result<GramSdp, GramError> {
    if let Some((setting, &epsilon)) = refs.epsilons().iter().enumerate().find(|(_, &e)| e != 0.0) {
        return Err(GramError::NotFullyCharacterized { setting, epsilon });
    }
    let key = check_key(refs)?;
    let n = refs.len();
    let settings: Vec<Setting> = (0..n).map(Setting::Single).collect();
    check_known(stats, &settings)?;
    let layout = Layout::new(&settings, false, &PM_OUTCOMES);
    let mut asm = GramAssembler::new(layout);
    asm.set_references(settings.clone(), refs.inner_products().clone());
    let layout = asm.layout().clone();

    for j in 0..n {
        let psi = layout.reference(Setting::Single(j));
        for (g, &outcome) in PM_OUTCOMES.iter().enumerate() {
            let y = statistic(stats, Setting::Single(j), outcome)?;
            let mut form = ComplexForm::new();
            form.add_expectation(&layout, &psi, &psi, g, c(1.0));
            asm.equal(&form, c(y), ConstraintFamily::Statistics, format!("j={j} {outcome}"));
        }
    }
    for j in 0..n {
        for jp in 0..=j {
            let form = completeness(&layout, &layout.reference(Setting::Single(jp)), &layout.reference(Setting::Single(j)));
            asm.equal(&form, refs.inner_product(jp, j), ConstraintFamily::ReferenceCompleteness, format!("<{jp}|{j}>"));
        }
    }
    let psi0 = layout.reference(Setting::Single(key[0]));
    let psi1 = layout.reference(Setting::Single(key[1]));
    let objective = pm_phase_objective(&layout, [&psi0, &psi1], 0.0);
    Ok(asm.finish(&objective, 0.0, Sense::Maximize))
}

/// Maximize the phase-error probability when each emitted state is only
/// known to be `ε_j`-close to its reference.
pub fn build_pm_partial(refs: &ReferenceEnsemble, stats: &ObservedStatistics, omega: f64) -> Result<GramSdp, GramError> {
    for (j, &e) in refs.epsilons().iter().enumerate() {
        check_epsilon(j, e)?;
    }
    let key = check_key(refs)?;
    let n = refs.len();
    let settings: Vec<Setting> = (0..n).map(Setting::Single).collect();
    check_known(stats, &settings)?;
    let layout = Layout::new(&settings, true, &PM_OUTCOMES);
    let mut asm = GramAssembler::new(layout);
    asm.set_references(settings.clone(), refs.inner_products().clone());
    let layout = asm.layout().clone();

    for j in 0..n {
        let s = Setting::Single(j);
        let psi = layout.emitted(s, refs.epsilon(j));
        for (g, &outcome) in PM_OUTCOMES.iter().enumerate() {
            let y = statistic(stats, s, outcome)?;
            let mut form = ComplexForm::new();
            form.add_expectation(&layout, &psi, &psi, g, c(1.0));
            asm.equal(&form, c(y), ConstraintFamily::Statistics, format!("j={j} {outcome}"));
        }
    }
    for j in 0..n {
        for jp in 0..=j {
            let form = completeness(&layout, &layout.reference(Setting::Single(jp)), &layout.reference(Setting::Single(j)));
            asm.equal(&form, refs.inner_product(jp, j), ConstraintFamily::ReferenceCompleteness, format!("<{jp}|{j}>"));
        }
    }
    add_orthogonal_families(&mut asm, &settings);
    let psi0 = layout.emitted(Setting::Single(key[0]), refs.epsilon(key[0]));
    let psi1 = layout.emitted(Setting::Single(key[1]), refs.epsilon(key[1]));
    let objective = pm_phase_objective(&layout, [&psi0, &psi1], omega);
    Ok(asm.finish(&objective, 0.0, Sense::Maximize))
}

/// `Σ_γ⟨φ⊥|E_γ|φ⟩ = 0` and `Σ_γ⟨φ⊥|E_γ|φ⊥⟩ = 1` for every label.
fn add_orthogonal_families(asm: &mut GramAssembler, settings: &[Setting]) {
    let layout = asm.layout().clone();
    for &s in settings {
        let form = completeness(&layout, &layout.orthogonal(s), &layout.reference(s));
        asm.equal(&form, c(0.0), ConstraintFamily::ReferenceOrthogonalZero, format!("<{s}⊥|{s}>"));
    }
    for &s in settings {
        let form = completeness(&layout, &layout.orthogonal(s), &layout.orthogonal(s));
        asm.equal(&form, c(1.0), ConstraintFamily::OrthogonalNormalization, format!("<{s}⊥|{s}⊥>"));
    }
}

/// `ξ = 1 − (1 − ε_a)(1 − ε_b)`.
pub fn joint_epsilon(epsilon_a: f64, epsilon_b: f64) -> f64 {
    1.0 - (1.0 - epsilon_a) * (1.0 - epsilon_b)
}

/// Maximize the phase-error probability of a two-sender setup with an
/// untrusted middle node announcing `pass` or `fail`.
pub fn build_mdi(
    alice: &ReferenceEnsemble,
    bob: &ReferenceEnsemble,
    stats: &ObservedStatistics,
    definition: PhaseErrorDefinition,
) -> Result<GramSdp, GramError> {
    for (j, &e) in alice.epsilons().iter().chain(bob.epsilons()).enumerate() {
        check_epsilon(j, e)?;
    }
    let key_a = check_key(alice)?;
    let key_b = check_key(bob)?;
    let (na, nb) = (alice.len(), bob.len());
    let settings: Vec<Setting> = (0..na).flat_map(|i| (0..nb).map(move |j| Setting::Pair(i, j))).collect();
    if stats.iter().any(|(s, _, _)| !settings.contains(&s)) {
        return Err(GramError::MismatchedSettings { alice: na, bob: nb });
    }
    let xi = |i: usize, j: usize| joint_epsilon(alice.epsilon(i), bob.epsilon(j));
    let partial = settings.iter().any(|&s| match s {
        Setting::Pair(i, j) => xi(i, j) > 0.0,
        _ => unreachable!(),
    });
    let layout = Layout::new(&settings, partial, &MDI_OUTCOMES);
    let mut asm = GramAssembler::new(layout);
    let overlaps = HermitianMatrix::from_fn(settings.len(), |p, q| {
        let (Setting::Pair(ip, jp), Setting::Pair(i, j)) = (settings[p], settings[q]) else { unreachable!() };
        alice.inner_product(ip, i) * bob.inner_product(jp, j)
    })?;
    asm.set_references(settings.clone(), overlaps);
    let layout = asm.layout().clone();
    let emitted = |i: usize, j: usize| layout.emitted(Setting::Pair(i, j), xi(i, j));

    for i in 0..na {
        for j in 0..nb {
            let psi = emitted(i, j);
            for (g, &outcome) in MDI_OUTCOMES.iter().enumerate() {
                let y = statistic(stats, Setting::Pair(i, j), outcome)?;
                let mut form = ComplexForm::new();
                form.add_expectation(&layout, &psi, &psi, g, c(1.0));
                asm.equal(&form, c(y), ConstraintFamily::Statistics, format!("i={i},j={j} {outcome}"));
            }
        }
    }
    for (q, &sq) in settings.iter().enumerate() {
        for &sp in &settings[..=q] {
            let (Setting::Pair(ip, jp), Setting::Pair(i, j)) = (sp, sq) else { unreachable!() };
            let overlap = alice.inner_product(ip, i) * bob.inner_product(jp, j);
            let form = completeness(&layout, &layout.reference(sp), &layout.reference(sq));
            asm.equal(&form, overlap, ConstraintFamily::ReferenceCompleteness, format!("<{sp}|{sq}>"));
        }
    }
    if partial {
        add_orthogonal_families(&mut asm, &settings);
    }

    let pass = outcome_index(&layout, Outcome::Pass);
    // kets[a][b]: Alice's key bit a, Bob's key bit b
    let kets: Vec<Vec<Expansion>> = key_a.iter().map(|&i| key_b.iter().map(|&j| emitted(i, j)).collect()).collect();
    let mut objective = ComplexForm::new();
    for (a, b, ap, bp) in bit_quadruples() {
        let weight = match definition {
            // ¼ Σ over |++⟩, |−−⟩ of ⟨a'b'|P|ab⟩, times the ½·½ amplitude
            PhaseErrorDefinition::SameX => {
                if (a + b) % 2 == (ap + bp) % 2 {
                    0.125
                } else {
                    0.0
                }
            }
            PhaseErrorDefinition::DifferentX => {
                let sa = if a == ap { 1.0 } else { -1.0 };
                let sb = if b == bp { 1.0 } else { -1.0 };
                0.0625 * (sa + sb)
            }
        };
        if weight != 0.0 {
            objective.add_expectation(&layout, &kets[ap][bp], &kets[a][b], pass, c(weight));
        }
    }
    Ok(asm.finish(&objective, 0.0, Sense::Maximize))
}

fn bit_quadruples() -> impl Iterator<Item = (usize, usize, usize, usize)> {
    (0..16).map(|k| (k & 1, (k >> 1) & 1, (k >> 2) & 1, (k >> 3) & 1))
}

/// Shared layout and constraints of the two decoy SDPs.
fn decoy_constraints(
    ens: &DecoyEnsemble,
    stats: &ObservedStatistics,
    opts: &DecoyOptions,
) -> Result<GramAssembler, GramError> {
    if opts.target_photons > opts.n_cut {
        return Err(GramError::TargetAboveCut { target: opts.target_photons, n_cut: opts.n_cut });
    }
    let n_settings = ens.n_settings();
    let n_intensities = ens.intensities().len();
    for m in 0..n_intensities {
        let mass = ens.truncated_mass(m, opts.n_cut);
        if !(mass <= 1.0 + PROBABILITY_SLACK) {
            return Err(GramError::BadPhotonMass { intensity: m, mass });
        }
    }
    let observed: Vec<Setting> = (0..n_settings)
        .flat_map(|j| (0..n_intensities).map(move |m| Setting::Intensity { setting: j, intensity: m }))
        .collect();
    check_known(stats, &observed)?;
    let labels: Vec<Setting> = (0..n_settings)
        .flat_map(|j| {
            (0..n_intensities).flat_map(move |m| (0..=opts.n_cut).map(move |n| Setting::Photon { setting: j, intensity: m, photons: n }))
        })
        .collect();
    let layout = Layout::new(&labels, true, &PM_OUTCOMES);
    let mut asm = GramAssembler::new(layout);
    let photon_parts = |s: Setting| match s {
        Setting::Photon { setting, photons, .. } => (setting, photons),
        _ => unreachable!(),
    };
    let overlaps = HermitianMatrix::from_fn(labels.len(), |p, q| {
        let ((jp, np), (j, n)) = (photon_parts(labels[p]), photon_parts(labels[q]));
        ens.reference_overlap(jp, np, j, n)
    })?;
    asm.set_references(labels.clone(), overlaps);
    let layout = asm.layout().clone();
    let eps = |s: Setting| match s {
        Setting::Photon { setting, intensity, photons } => ens.epsilon(setting, intensity, photons),
        _ => unreachable!(),
    };
    for &s in &labels {
        if let Setting::Photon { setting, .. } = s {
            check_epsilon(setting, eps(s))?;
        }
    }

    for j in 0..n_settings {
        for m in 0..n_intensities {
            let mass = ens.truncated_mass(m, opts.n_cut);
            for (g, &outcome) in PM_OUTCOMES.iter().enumerate() {
                let s = Setting::Intensity { setting: j, intensity: m };
                let q = statistic(stats, s, outcome)?;
                let mut form = ComplexForm::new();
                for n in 0..=opts.n_cut {
                    let label = Setting::Photon { setting: j, intensity: m, photons: n };
                    let psi = layout.emitted(label, eps(label));
                    form.add_expectation(&layout, &psi, &psi, g, c(ens.photon_probability(m, n)));
                }
                asm.at_most(&form, q, ConstraintFamily::TruncatedStatisticsUpper, format!("{s} {outcome}"));
                asm.at_most(&form.scaled(-1.0), 1.0 - q - mass, ConstraintFamily::TruncatedStatisticsLower, format!("{s} {outcome}"));
            }
        }
    }
    for (q, &sq) in labels.iter().enumerate() {
        for &sp in &labels[..=q] {
            let (jp, np) = photon_parts(sp);
            let (j, n) = photon_parts(sq);
            let form = completeness(&layout, &layout.reference(sp), &layout.reference(sq));
            asm.equal(&form, ens.reference_overlap(jp, np, j, n), ConstraintFamily::ReferenceCompleteness, format!("<{sp}|{sq}>"));
        }
    }
    add_orthogonal_families(&mut asm, &labels);
    if opts.cross_orthogonality {
        for &sp in &labels {
            for &sq in &labels {
                if sp != sq {
                    let form = completeness(&layout, &layout.reference(sp), &layout.orthogonal(sq));
                    asm.equal(&form, c(0.0), ConstraintFamily::CrossReferenceOrthogonalZero, format!("<{sp}|{sq}⊥>"));
                }
            }
        }
    }
    Ok(asm)
}

fn target_states(ens: &DecoyEnsemble, layout: &Layout, opts: &DecoyOptions) -> [Expansion; 2] {
    ens.key_settings().map(|j| {
        let label = Setting::Photon { setting: j, intensity: 0, photons: opts.target_photons };
        layout.emitted(label, ens.epsilon(j, 0, opts.target_photons))
    })
}

/// Minimize the conclusive-detection yield of the target photon number at
/// the signal intensity (index 0).
pub fn build_decoy_yield(ens: &DecoyEnsemble, stats: &ObservedStatistics, opts: &DecoyOptions) -> Result<GramSdp, GramError> {
    let asm = decoy_constraints(ens, stats, opts)?;
    let layout = asm.layout().clone();
    let f = outcome_index(&layout, Outcome::Inconclusive);
    let mut objective = ComplexForm::new();
    for psi in &target_states(ens, &layout, opts) {
        objective.add_expectation(&layout, psi, psi, f, c(-0.5));
    }
    Ok(asm.finish(&objective, 1.0, Sense::Minimize))
}

/// Maximize the phase-error probability of the target photon number at the
/// signal intensity.
pub fn build_decoy_phase(ens: &DecoyEnsemble, stats: &ObservedStatistics, opts: &DecoyOptions) -> Result<GramSdp, GramError> {
    let asm = decoy_constraints(ens, stats, opts)?;
    let layout = asm.layout().clone();
    let [psi0, psi1] = target_states(ens, &layout, opts);
    let objective = pm_phase_objective(&layout, [&psi0, &psi1], 0.0);
    Ok(asm.finish(&objective, 0.0, Sense::Maximize))
}
