//! Random explicit attacks on concrete source vectors, paired with the SDP
//! the builders produce from the resulting statistics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use qkdsdp::channel::{ObservedStatistics, Setting, MDI_OUTCOMES, PM_OUTCOMES};
use qkdsdp::gram::oracle::{decoy_gains, explicit_attack_oracle, ExplicitAttack, ExplicitSource, TrueObjective};
use qkdsdp::gram::{
    build_decoy_phase, build_decoy_yield, build_mdi, build_pm_full, build_pm_partial, DecoyOptions, GramSdp, PhaseErrorDefinition,
};
use qkdsdp::hermitian::{HermitianMatrix, C64};
use qkdsdp::scenario::{bb84_ensemble, coherent_mdi_ensemble, decoy_tha_ensemble, ReferenceEnsemble};
use qkdsdp::sdp::Sense;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// An SDP together with one explicitly realized feasible point.
pub struct Case {
    pub family: &'static str,
    pub sdp: GramSdp,
    pub gram: HermitianMatrix,
    /// Objective of the attack, computed from the states directly.
    pub value: f64,
}

impl Case {
    pub fn sense(&self) -> Sense {
        self.sdp.sense()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn inverse_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = ((m + m.adjoint()) * C64::new(0.5, 0.0)).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| C64::new(1.0 / l.sqrt(), 0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.adjoint()
}

/// `count` Kraus operators of a random channel `d_in → d_out`.
pub fn random_channel(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, count: usize) -> Vec<DMatrix<C64>> {
    let stacked = gaussian(rng, d_out * count, d_in);
    let isometry = &stacked * inverse_sqrt(&(stacked.adjoint() * &stacked));
    (0..count).map(|k| isometry.rows(k * d_out, d_out).into_owned()).collect()
}

/// Random POVM with `outcomes` elements of random rank.
pub fn random_povm(rng: &mut ChaCha8Rng, dim: usize, outcomes: usize) -> Vec<DMatrix<C64>> {
    let mut ranks: Vec<usize> = (0..outcomes).map(|_| rng.gen_range(1..=dim)).collect();
    // the elements must jointly span the space
    if ranks.iter().sum::<usize>() < dim {
        ranks[outcomes - 1] = dim;
    }
    let raw: Vec<DMatrix<C64>> = ranks
        .into_iter()
        .map(|rank| {
            let b = gaussian(rng, dim, rank);
            &b * b.adjoint()
        })
        .collect();
    let total = raw.iter().fold(DMatrix::zeros(dim, dim), |acc, a| acc + a);
    let norm = inverse_sqrt(&total);
    raw.iter()
        .map(|a| {
            let e = &norm * a * &norm;
            (&e + e.adjoint()) * C64::new(0.5, 0.0)
        })
        .collect()
}

pub fn random_attack(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, outcomes: usize) -> ExplicitAttack {
    let count = d_in.div_ceil(d_out) + rng.gen_range(0..=2);
    ExplicitAttack { kraus: random_channel(rng, d_in, d_out, count), povm: random_povm(rng, d_out, outcomes) }
}

/// Vectors in `C^dim` whose Gram matrix is `table`, with `⟨v_a|v_b⟩ = table[a][b]`.
pub fn realize(table: &HermitianMatrix, dim: usize) -> Vec<DVector<C64>> {
    let eig = table.to_dmatrix().symmetric_eigen();
    let n = table.dim();
    let kept: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 1e-14).collect();
    assert!(kept.len() <= dim, "table rank {} exceeds dimension {dim}", kept.len());
    (0..n)
        .map(|b| {
            let mut v = DVector::zeros(dim);
            for (slot, &k) in kept.iter().enumerate() {
                v[slot] = eig.eigenvectors[(b, k)].conj() * eig.eigenvalues[k].sqrt();
            }
            v
        })
        .collect()
}

/// Random unit vector orthogonal to `reference`.
pub fn orthogonal_unit(rng: &mut ChaCha8Rng, reference: &DVector<C64>) -> DVector<C64> {
    let raw: DVector<C64> = gaussian(rng, reference.len(), 1).column(0).into_owned();
    let unit = reference.unscale(reference.norm());
    let v = &raw - &unit * unit.dotc(&raw);
    v.unscale(v.norm())
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn sources(
    rng: &mut ChaCha8Rng,
    refs: &ReferenceEnsemble,
    dim: usize,
    setting: impl Fn(usize) -> Setting,
) -> Vec<ExplicitSource> {
    let vectors = realize(refs.inner_products(), dim);
    vectors
        .into_iter()
        .enumerate()
        .map(|(j, reference)| {
            let epsilon = refs.epsilon(j);
            let orthogonal = (epsilon > 0.0).then(|| orthogonal_unit(rng, &reference));
            ExplicitSource { setting: setting(j), reference, orthogonal, epsilon }
        })
        .collect()
}

/// Prepare-and-measure qubit source, four or three states, with or without
/// partial characterization.
pub fn pm_case(rng: &mut ChaCha8Rng, partial: bool) -> Case {
    let n_states = if rng.gen_bool(0.5) { 4 } else { 3 };
    let delta = rng.gen_range(0.0..0.2);
    let epsilon = if partial { log_uniform(rng, 1e-6, 1e-2) } else { 0.0 };
    let omega = if partial { rng.gen_range(0.0..2.0 * PI) } else { 0.0 };
    let refs = bb84_ensemble(delta, n_states, epsilon).unwrap();
    let dim = if partial { 4 } else { 2 };
    let srcs = sources(rng, &refs, dim, Setting::Single);
    let attack = random_attack(rng, dim, 3, PM_OUTCOMES.len());
    let objective = TrueObjective::PhaseError { kets: refs.key_settings(), omega };
    let out = explicit_attack_oracle(&srcs, &PM_OUTCOMES, &attack, &objective).unwrap();
    let sdp = if partial {
        build_pm_partial(&refs, &out.statistics, omega).unwrap()
    } else {
        build_pm_full(&refs, &out.statistics).unwrap()
    };
    Case { family: if partial { "pm_partial" } else { "pm_full" }, sdp, gram: out.gram, value: out.value }
}

/// Two coherent-light senders and an untrusted middle node.
pub fn mdi_case(rng: &mut ChaCha8Rng) -> Case {
    let mu = log_uniform(rng, 1e-3, 0.5);
    let epsilon = if rng.gen_bool(0.5) { log_uniform(rng, 1e-6, 1e-2) } else { 0.0 };
    let definition = if rng.gen_bool(0.5) { PhaseErrorDefinition::SameX } else { PhaseErrorDefinition::DifferentX };
    let refs = coherent_mdi_ensemble(mu, epsilon).unwrap();
    let dim = 4;
    let alice = sources(rng, &refs, dim, Setting::Single);
    let bob = sources(rng, &refs, dim, Setting::Single);
    let n = refs.len();
    let joint: Vec<ExplicitSource> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| ExplicitSource::product(&alice[i], &bob[j], Setting::Pair(i, j)))
        .collect();
    let attack = random_attack(rng, dim * dim, 3, MDI_OUTCOMES.len());
    let key = refs.key_settings();
    let kets = [0, 1].map(|a| [0, 1].map(|b| key[a] * n + key[b]));
    let objective = TrueObjective::MdiPhaseError { kets, definition };
    let out = explicit_attack_oracle(&joint, &MDI_OUTCOMES, &attack, &objective).unwrap();
    let sdp = build_mdi(&refs, &refs, &out.statistics, definition).unwrap();
    Case { family: "mdi", sdp, gram: out.gram, value: out.value }
}

/// Decoy-state source with Trojan-horse leakage; returns the yield and the
/// phase-error instances built from the same attack.
pub fn decoy_cases(rng: &mut ChaCha8Rng, opts: &DecoyOptions) -> [Case; 2] {
    let delta = rng.gen_range(0.0..0.2);
    let mu = rng.gen_range(0.2..0.8);
    let i_max = log_uniform(rng, 1e-8, 1e-2);
    let encoding = bb84_ensemble(delta, 4, 0.0).unwrap();
    let ens = decoy_tha_ensemble(&[mu, 0.02, 0.0], i_max, &encoding).unwrap();
    let n_settings = ens.n_settings();
    let n_cut = opts.n_cut;
    let photon_labels: Vec<(usize, usize)> = (0..n_settings).flat_map(|j| (0..=n_cut).map(move |n| (j, n))).collect();
    let table = HermitianMatrix::from_fn(photon_labels.len(), |p, q| {
        let ((jp, np), (j, n)) = (photon_labels[p], photon_labels[q]);
        ens.reference_overlap(jp, np, j, n)
    })
    .unwrap();
    let dim = 9;
    let vectors = realize(&table, dim);
    // Eve cannot tell the intensity from the photon number, so the leaked
    // component depends on (setting, photons) only.
    let leaked: Vec<DVector<C64>> = vectors.iter().map(|v| orthogonal_unit(rng, v)).collect();
    let mut srcs = Vec::new();
    for j in 0..n_settings {
        for m in 0..ens.intensities().len() {
            for n in 0..=n_cut {
                let k = j * (n_cut + 1) + n;
                srcs.push(ExplicitSource {
                    setting: Setting::Photon { setting: j, intensity: m, photons: n },
                    reference: vectors[k].clone(),
                    orthogonal: Some(leaked[k].clone()),
                    epsilon: ens.epsilon(j, m, n),
                });
            }
        }
    }
    let index = |j: usize| srcs.iter().position(|s| s.setting == Setting::Photon { setting: j, intensity: 0, photons: opts.target_photons }).unwrap();
    let key = ens.key_settings();
    let kets = key.map(index);

    let attack = random_attack(rng, dim, 3, PM_OUTCOMES.len());
    let yield_out = explicit_attack_oracle(&srcs, &PM_OUTCOMES, &attack, &TrueObjective::DetectionYield { kets: kets.to_vec() }).unwrap();
    let phase_out = explicit_attack_oracle(&srcs, &PM_OUTCOMES, &attack, &TrueObjective::PhaseError { kets, omega: 0.0 }).unwrap();
    let split: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let total: f64 = split.iter().sum();
    let tail = split.map(|t| t / total);
    let gains = decoy_gains(&ens, n_cut, &yield_out.statistics, tail).unwrap();
    [
        Case { family: "decoy_yield", sdp: build_decoy_yield(&ens, &gains, opts).unwrap(), gram: yield_out.gram, value: yield_out.value },
        Case { family: "decoy_phase", sdp: build_decoy_phase(&ens, &gains, opts).unwrap(), gram: phase_out.gram, value: phase_out.value },
    ]
}

/// Statistics of a random attack on the exactly characterized qubit states
/// of `refs`.
pub fn pm_statistics(rng: &mut ChaCha8Rng, refs: &ReferenceEnsemble) -> ObservedStatistics {
    let exact = refs.with_uniform_epsilon(0.0).unwrap();
    let srcs = sources(rng, &exact, 2, Setting::Single);
    let attack = random_attack(rng, 2, 3, PM_OUTCOMES.len());
    let objective = TrueObjective::PhaseError { kets: refs.key_settings(), omega: 0.0 };
    explicit_attack_oracle(&srcs, &PM_OUTCOMES, &attack, &objective).unwrap().statistics
}
