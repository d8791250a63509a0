use super::*;
use crate::channel::{pm_bb84_statistics, ChannelParams, ObservedStatistics};
use crate::scenario::{bb84_ensemble, coherent_mdi_ensemble, decoy_tha_ensemble};
use approx::assert_abs_diff_eq;

fn pm_stats(n_states: usize) -> ObservedStatistics {
    let ens = bb84_ensemble(0.063, n_states, 0.0).unwrap();
    pm_bb84_statistics(50.0, &ens, &ChannelParams::default()).unwrap()
}

fn atom(sdp: &GramSdp, kind: AtomKind, setting: Setting, outcome: Outcome) -> usize {
    sdp.atom_index(&AtomLabel { kind, setting, outcome }).unwrap()
}

/// Coefficient on `G[bra, ket]` in a form whose Hermitian matrix is `a`.
fn coefficient(a: &SparseHermitian, bra: usize, ket: usize) -> C64 {
    if bra == ket {
        a.get(bra, bra)
    } else {
        a.get(ket, bra)
    }
}

#[test]
fn objective_matches_hand_table_at_zero_phase() {
    let (e0, e1) = (0.01, 0.04);
    let ens = bb84_ensemble(0.0, 4, 0.0).unwrap().with_epsilons(vec![e0, e1, 0.02, 0.03]).unwrap();
    let sdp = build_pm_partial(&ens, &pm_stats(4), 0.0).unwrap();
    use AtomKind::{Orthogonal as O, Reference as R};
    // (bra kind, bra setting, ket kind, ket setting, coefficient before the ¼ and sign)
    #[rustfmt::skip]
    let table: [(AtomKind, usize, AtomKind, usize, f64, bool); 16] = [
        (R, 0, R, 0, 1.0 - e0, false),
        (R, 0, O, 0, (e0 * (1.0 - e0)).sqrt(), false),
        (O, 0, R, 0, (e0 * (1.0 - e0)).sqrt(), false),
        (O, 0, O, 0, e0, false),
        (R, 0, R, 1, ((1.0 - e0) * (1.0 - e1)).sqrt(), true),
        (R, 0, O, 1, ((1.0 - e0) * e1).sqrt(), true),
        (O, 0, R, 1, (e0 * (1.0 - e1)).sqrt(), true),
        (O, 0, O, 1, (e0 * e1).sqrt(), true),
        (R, 1, R, 0, ((1.0 - e1) * (1.0 - e0)).sqrt(), true),
        (R, 1, O, 0, ((1.0 - e1) * e0).sqrt(), true),
        (O, 1, R, 0, (e1 * (1.0 - e0)).sqrt(), true),
        (O, 1, O, 0, (e1 * e0).sqrt(), true),
        (R, 1, R, 1, 1.0 - e1, false),
        (R, 1, O, 1, (e1 * (1.0 - e1)).sqrt(), false),
        (O, 1, R, 1, (e1 * (1.0 - e1)).sqrt(), false),
        (O, 1, O, 1, e1, false),
    ];
    for (outcome, cross_sign) in [(Outcome::X1, 1.0), (Outcome::X0, -1.0)] {
        for &(bk, bs, kk, ks, value, cross) in &table {
            let bra = atom(&sdp, bk, Setting::Single(bs), outcome);
            let ket = atom(&sdp, kk, Setting::Single(ks), outcome);
            let expected = 0.25 * value * if cross { cross_sign } else { 1.0 };
            let got = coefficient(sdp.objective(), bra, ket);
            assert_abs_diff_eq!(got.re, expected, epsilon = 1e-15);
            assert_abs_diff_eq!(got.im, 0.0, epsilon = 1e-15);
        }
    }
    // 10 distinct entries per outcome, nothing else
    assert_eq!(sdp.objective().upper_entries().count(), 20);
    assert_eq!(sdp.offset(), 0.0);
    assert_eq!(sdp.sense(), Sense::Maximize);
}

#[test]
fn nonzero_phase_rotates_cross_terms() {
    let ens = bb84_ensemble(0.0, 4, 0.0).unwrap();
    let omega = 0.7;
    let sdp = build_pm_partial(&ens, &pm_stats(4), omega).unwrap();
    let r = |j, o| atom(&sdp, AtomKind::Reference, Setting::Single(j), o);
    let got = coefficient(sdp.objective(), r(0, Outcome::X1), r(1, Outcome::X1));
    assert_abs_diff_eq!(got.re, 0.25 * omega.cos(), epsilon = 1e-15);
    assert_abs_diff_eq!(got.im, 0.25 * omega.sin(), epsilon = 1e-15);
    let got = coefficient(sdp.objective(), r(0, Outcome::X0), r(1, Outcome::X0));
    assert_abs_diff_eq!(got.im, -0.25 * omega.sin(), epsilon = 1e-15);
}

#[test]
fn statistics_coefficients_follow_the_decomposition() {
    let eps = 0.03;
    let ens = bb84_ensemble(0.063, 4, eps).unwrap();
    let sdp = build_pm_partial(&ens, &pm_stats(4), 0.0).unwrap();
    let con = sdp
        .constraints()
        .iter()
        .find(|c| c.family == ConstraintFamily::Statistics && c.label == "j=2 1x")
        .unwrap();
    let s = Setting::Single(2);
    let r = atom(&sdp, AtomKind::Reference, s, Outcome::X1);
    let o = atom(&sdp, AtomKind::Orthogonal, s, Outcome::X1);
    assert_abs_diff_eq!(coefficient(&con.matrix, r, o).re, (eps * (1.0 - eps)).sqrt(), epsilon = 1e-15);
    assert_abs_diff_eq!(coefficient(&con.matrix, o, r).re, (eps * (1.0 - eps)).sqrt(), epsilon = 1e-15);
    assert_abs_diff_eq!(con.matrix.get(r, r).re, 1.0 - eps, epsilon = 1e-15);
    assert_abs_diff_eq!(con.matrix.get(o, o).re, eps, epsilon = 1e-15);
    assert_eq!(con.matrix.upper_entries().count(), 3);
}

#[test]
fn pm_partial_shape() {
    let ens = bb84_ensemble(0.063, 4, 1e-6).unwrap();
    let sdp = build_pm_partial(&ens, &pm_stats(4), 0.0).unwrap();
    assert_eq!(sdp.dim(), 24);
    assert_eq!(sdp.trace_bound(), 24.0);
    // 12 statistics, 4 + 2·6 reference pairs, 2·4 ref–orth, 4 orth norms
    assert_eq!(sdp.constraints().len(), 12 + 16 + 8 + 4);
    let trace = sdp.to_trace_sdp().unwrap();
    assert_eq!(trace.dim(), 48);
    assert_eq!(trace.trace_bound(), 48.0);
    // canonical order: settings, then ref before orth, then outcomes
    let labels: Vec<_> = sdp.atoms().iter().take(7).map(|a| (a.kind, a.setting, a.outcome)).collect();
    assert_eq!(labels[0], (AtomKind::Reference, Setting::Single(0), Outcome::X0));
    assert_eq!(labels[2], (AtomKind::Reference, Setting::Single(0), Outcome::Inconclusive));
    assert_eq!(labels[3], (AtomKind::Orthogonal, Setting::Single(0), Outcome::X0));
    assert_eq!(labels[6], (AtomKind::Reference, Setting::Single(1), Outcome::X0));
}

#[test]
fn pm_full_shape_and_errors() {
    let ens = bb84_ensemble(0.063, 3, 0.0).unwrap();
    let sdp = build_pm_full(&ens, &pm_stats(3)).unwrap();
    assert_eq!(sdp.dim(), 9);
    assert!(sdp.atoms().iter().all(|a| a.kind == AtomKind::Reference));
    assert_eq!(sdp.constraints().len(), 9 + 3 + 2 * 3);

    let flawed = ens.with_uniform_epsilon(1e-3).unwrap();
    assert!(matches!(build_pm_full(&flawed, &pm_stats(3)), Err(GramError::NotFullyCharacterized { .. })));

    let mut missing = ObservedStatistics::new();
    for (s, o, p) in pm_stats(3).iter() {
        if !(s == Setting::Single(1) && o == Outcome::X0) {
            missing.insert(s, o, p);
        }
    }
    assert!(matches!(
        build_pm_full(&ens, &missing),
        Err(GramError::MissingStatistic { setting: Setting::Single(1), outcome: Outcome::X0 })
    ));
    // four-state statistics mention a setting the three-state ensemble lacks
    assert!(matches!(build_pm_full(&ens, &pm_stats(4)), Err(GramError::UnknownSetting { .. })));
}

#[test]
fn bad_epsilon_rejected() {
    let ens = bb84_ensemble(0.0, 4, 0.0).unwrap();
    let ok = ens.with_epsilons(vec![0.0, 0.0, 0.0, 0.5]).unwrap();
    assert!(build_pm_partial(&ok, &pm_stats(4), 0.0).is_ok());
    assert!(ens.with_epsilons(vec![0.0, 0.0, 0.0, 1.0]).is_err());
}

#[test]
fn joint_epsilon_values() {
    assert_eq!(joint_epsilon(0.0, 0.0), 0.0);
    let e = 0.013;
    assert_abs_diff_eq!(joint_epsilon(e, e), 1.0 - (1.0 - e) * (1.0 - e), epsilon = 1e-16);
}

fn mdi_stats(mu: f64) -> ObservedStatistics {
    let ens = coherent_mdi_ensemble(mu, 0.0).unwrap();
    crate::channel::mdi_coherent_statistics(20.0, &ens, &ens, &ChannelParams::default()).unwrap()
}

#[test]
fn mdi_shapes_and_objective() {
    let ens = coherent_mdi_ensemble(0.1, 0.0).unwrap();
    let full = build_mdi(&ens, &ens, &mdi_stats(0.1), PhaseErrorDefinition::SameX).unwrap();
    assert_eq!(full.dim(), 18);
    let partial_ens = ens.with_uniform_epsilon(1e-4).unwrap();
    let partial = build_mdi(&partial_ens, &partial_ens, &mdi_stats(0.1), PhaseErrorDefinition::SameX).unwrap();
    assert_eq!(partial.dim(), 36);

    let pass = |sdp: &GramSdp, i, j| atom(sdp, AtomKind::Reference, Setting::Pair(i, j), Outcome::Pass);
    let same = full.objective();
    assert_abs_diff_eq!(coefficient(same, pass(&full, 0, 0), pass(&full, 1, 1)).re, 0.125, epsilon = 1e-16);
    assert_abs_diff_eq!(coefficient(same, pass(&full, 0, 1), pass(&full, 1, 0)).re, 0.125, epsilon = 1e-16);
    assert_eq!(coefficient(same, pass(&full, 0, 0), pass(&full, 0, 1)).re, 0.0);
    assert_abs_diff_eq!(same.get(pass(&full, 1, 0), pass(&full, 1, 0)).re, 0.125, epsilon = 1e-16);

    let diff = build_mdi(&ens, &ens, &mdi_stats(0.1), PhaseErrorDefinition::DifferentX).unwrap();
    let d = diff.objective();
    assert_abs_diff_eq!(coefficient(d, pass(&diff, 0, 0), pass(&diff, 1, 1)).re, -0.125, epsilon = 1e-16);
    assert_abs_diff_eq!(coefficient(d, pass(&diff, 0, 1), pass(&diff, 1, 0)).re, -0.125, epsilon = 1e-16);
    assert_eq!(coefficient(d, pass(&diff, 0, 0), pass(&diff, 1, 0)).re, 0.0);
    assert_abs_diff_eq!(d.get(pass(&diff, 0, 1), pass(&diff, 0, 1)).re, 0.125, epsilon = 1e-16);

    // the ξ weights enter the objective through the orthogonal atoms
    let xi = joint_epsilon(1e-4, 1e-4);
    let o = atom(&partial, AtomKind::Orthogonal, Setting::Pair(0, 0), Outcome::Pass);
    let r = pass(&partial, 0, 0);
    assert_abs_diff_eq!(coefficient(partial.objective(), r, o).re, 0.125 * (xi * (1.0 - xi)).sqrt(), epsilon = 1e-16);
}

#[test]
fn mdi_rejects_foreign_settings() {
    let ens = coherent_mdi_ensemble(0.1, 0.0).unwrap();
    let mut stats = mdi_stats(0.1);
    stats.insert(Setting::Pair(3, 0), Outcome::Pass, 0.1);
    assert!(matches!(
        build_mdi(&ens, &ens, &stats, PhaseErrorDefinition::SameX),
        Err(GramError::MismatchedSettings { alice: 3, bob: 3 })
    ));
}

fn decoy_setup(i_max: f64) -> (crate::scenario::DecoyEnsemble, ObservedStatistics) {
    let enc = bb84_ensemble(0.0, 4, 0.0).unwrap();
    let ens = decoy_tha_ensemble(&[0.5, 0.02, 0.0], i_max, &enc).unwrap();
    let stats = crate::channel::decoy_bb84_statistics(10.0, &ens, &ChannelParams::default()).unwrap();
    (ens, stats)
}

#[test]
fn decoy_shapes_and_coefficients() {
    let (ens, stats) = decoy_setup(0.0);
    let opts = DecoyOptions::default();
    let sdp = build_decoy_yield(&ens, &stats, &opts).unwrap();
    assert_eq!(sdp.dim(), 216);
    assert_eq!(sdp.to_trace_sdp().unwrap().dim(), 432);
    assert_eq!(sdp.offset(), 1.0);
    assert_eq!(sdp.sense(), Sense::Minimize);

    // p_{1|0.02} on the one-photon reference atom of the upper statistics row
    let con = sdp
        .constraints()
        .iter()
        .find(|c| c.family == ConstraintFamily::TruncatedStatisticsUpper && c.label == "j=0,mu=1 0x")
        .unwrap();
    let label = Setting::Photon { setting: 0, intensity: 1, photons: 1 };
    let a = atom(&sdp, AtomKind::Reference, label, Outcome::X0);
    assert_abs_diff_eq!(con.matrix.get(a, a).re, 0.02 * (-0.02f64).exp(), epsilon = 1e-17);
    assert_eq!(con.sense, ConstraintSense::Le);

    // with I_max = 0 no objective coefficient touches an orthogonal atom
    let phase = build_decoy_phase(&ens, &stats, &opts).unwrap();
    for (r, c, _) in phase.objective().upper_entries() {
        assert_eq!(phase.atoms()[r].kind, AtomKind::Reference);
        assert_eq!(phase.atoms()[c].kind, AtomKind::Reference);
    }
}

#[test]
fn decoy_phase_weights_with_leakage() {
    let i_max = 0.01;
    let (ens, stats) = decoy_setup(i_max);
    let sdp = build_decoy_phase(&ens, &stats, &DecoyOptions::default()).unwrap();
    let label = Setting::Photon { setting: 0, intensity: 0, photons: 1 };
    let r = atom(&sdp, AtomKind::Reference, label, Outcome::X1);
    let o = atom(&sdp, AtomKind::Orthogonal, label, Outcome::X1);
    assert_abs_diff_eq!(coefficient(sdp.objective(), r, o).re, 0.25 * (i_max * (1.0 - i_max)).sqrt(), epsilon = 1e-16);
    assert_abs_diff_eq!(sdp.objective().get(r, r).re, 0.25 * (1.0 - i_max), epsilon = 1e-16);
}

#[test]
fn decoy_option_errors_and_flag() {
    let (ens, stats) = decoy_setup(0.0);
    let bad = DecoyOptions { n_cut: 1, target_photons: 2, ..Default::default() };
    assert!(matches!(build_decoy_yield(&ens, &stats, &bad), Err(GramError::TargetAboveCut { .. })));
    let base = build_decoy_yield(&ens, &stats, &DecoyOptions::default()).unwrap();
    let tight = build_decoy_yield(&ens, &stats, &DecoyOptions { cross_orthogonality: true, ..Default::default() }).unwrap();
    let extra = tight.constraints().len() - base.constraints().len();
    assert!(extra > 0);
    assert!(tight.constraints().iter().any(|c| c.family == ConstraintFamily::CrossReferenceOrthogonalZero));
    assert!(!base.constraints().iter().any(|c| c.family == ConstraintFamily::CrossReferenceOrthogonalZero));
}

#[test]
fn every_build_embeds_and_validates() {
    let ens = bb84_ensemble(0.063, 4, 1e-4).unwrap();
    let builds = [
        build_pm_partial(&ens, &pm_stats(4), 0.3).unwrap(),
        build_pm_full(&ens.with_uniform_epsilon(0.0).unwrap(), &pm_stats(4)).unwrap(),
    ];
    for sdp in &builds {
        let trace = sdp.to_trace_sdp().unwrap();
        assert_eq!(trace.constraints().len(), sdp.constraints().len());
        for c in sdp.constraints() {
            let dense = c.matrix.to_dense();
            for r in 0..dense.dim() {
                for col in 0..dense.dim() {
                    assert_eq!(dense.get(r, col), dense.get(col, r).conj());
                }
            }
        }
    }
}

#[test]
fn dump_lists_atoms_and_provenance() {
    let ens = bb84_ensemble(0.063, 3, 0.0).unwrap();
    let sdp = build_pm_full(&ens, &pm_stats(3)).unwrap();
    let mut buf = Vec::new();
    sdp.dump(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("gram_sdp 1\natoms 9\n0 ref j=0 0x\n"));
    assert!(text.contains("sense max"));
    assert!(text.contains("reference_completeness re eq"));
    assert_eq!(text.matches("\nconstraint ").count(), sdp.constraints().len());
}

#[test]
fn reduction_shapes() {
    let ens = bb84_ensemble(0.063, 4, 1e-4).unwrap();
    let pm = build_pm_partial(&ens, &pm_stats(4), 0.0).unwrap().reduce().unwrap();
    assert_eq!(pm.rank(), 2);
    assert_eq!(pm.sdp().dim(), 18);
    assert!(pm.sdp().atoms()[..6].iter().all(|a| a.kind == AtomKind::Basis));
    assert!(pm.sdp().references().is_none());
    // 3 basis rows replace the 10 original completeness rows
    let completeness = pm.sdp().constraints().iter().filter(|c| c.family == ConstraintFamily::ReferenceCompleteness).count();
    assert_eq!(completeness, 4);

    let (dens, dstats) = decoy_setup(0.0);
    let decoy = build_decoy_yield(&dens, &dstats, &DecoyOptions::default()).unwrap().reduce().unwrap();
    assert_eq!(decoy.rank(), 6);
    assert_eq!(decoy.sdp().dim(), 126);
    // the vacuum intensity has no photon tail, so its bound pairs collapse
    let count = |family| decoy.sdp().constraints().iter().filter(|c| c.family == family).count();
    assert_eq!(count(ConstraintFamily::Statistics), 12);
    assert_eq!(count(ConstraintFamily::TruncatedStatisticsUpper), 24);
    assert_eq!(count(ConstraintFamily::TruncatedStatisticsLower), 24);

    let mdi = coherent_mdi_ensemble(0.1, 0.0).unwrap();
    let full = build_mdi(&mdi, &mdi, &mdi_stats(0.1), PhaseErrorDefinition::SameX).unwrap();
    assert_eq!(full.reduce().unwrap().rank(), 9);
}

#[test]
fn reduction_needs_references() {
    let ens = bb84_ensemble(0.0, 4, 0.0).unwrap();
    let reduced = build_pm_full(&ens, &pm_stats(4)).unwrap().reduce().unwrap();
    assert!(matches!(reduced.sdp().reduce(), Err(GramError::NoReferenceData)));
}

fn solve_gram(sdp: &GramSdp) -> (f64, HermitianMatrix) {
    use crate::hermitian::hermitian_from_embedding;
    use crate::sdp::{solve, SolverOptions};
    let p = sdp.to_trace_sdp().unwrap();
    let sol = solve(&p, &SolverOptions::default());
    (sol.primal_value, hermitian_from_embedding(&sol.primal_x).unwrap())
}

#[test]
fn lifted_optimum_is_feasible_for_the_original() {
    let ens = bb84_ensemble(0.063, 4, 1e-2).unwrap();
    let original = build_pm_partial(&ens, &pm_stats(4), 0.0).unwrap();
    let reduced = original.reduce().unwrap();
    let (value, g) = solve_gram(reduced.sdp());
    let lifted = reduced.lift_gram(&g).unwrap();
    let worst = original.violations(&lifted).into_iter().fold(0.0, f64::max);
    assert!(worst < 1e-7, "violation {worst}");
    assert_abs_diff_eq!(original.objective_value(&lifted), value, epsilon = 1e-9);
    assert!(lifted.eigenvalues()[0] > -1e-9);
}

#[test]
fn reduction_preserves_optimum_when_references_are_independent() {
    let ens = coherent_mdi_ensemble(0.1, 0.0).unwrap();
    let sdp = build_mdi(&ens, &ens, &mdi_stats(0.1), PhaseErrorDefinition::SameX).unwrap();
    let (direct, _) = solve_gram(&sdp);
    let (reduced, _) = solve_gram(sdp.reduce().unwrap().sdp());
    assert_abs_diff_eq!(direct, reduced, epsilon = 1e-8);
}
