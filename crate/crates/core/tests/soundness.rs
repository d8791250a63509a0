mod support;

use qkdsdp::gram::DecoyOptions;
use qkdsdp::keyrate::{certified_bound, PipelineOptions, SdpContext, SdpRole, SweepPoint};
use qkdsdp::sdp::Sense;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::attacks::{decoy_cases, mdi_case, pm_case, Case};

fn check(case: &Case, opts: &PipelineOptions) {
    let worst = case.sdp.violations(&case.gram).into_iter().fold(0.0, f64::max);
    assert!(worst < 1e-9, "{}: attack Gram violates the SDP by {worst:e}", case.family);
    let from_gram = case.sdp.objective_value(&case.gram);
    assert!((from_gram - case.value).abs() < 1e-10, "{}: objective {from_gram} vs direct {}", case.family, case.value);

    let ctx = SdpContext { at: SweepPoint::at_distance(0.0), mu: None, role: SdpRole::PhaseError };
    let report = certified_bound(&case.sdp, ctx, opts, None).unwrap();
    assert!(report.certificate_valid, "{}: {report:?}", case.family);
    match case.sense() {
        Sense::Maximize => assert!(report.certified_value >= case.value, "{}: {} < {}", case.family, report.certified_value, case.value),
        Sense::Minimize => assert!(report.certified_value <= case.value, "{}: {} > {}", case.family, report.certified_value, case.value),
    }
}

#[test]
fn pm_bounds_dominate_explicit_attacks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..8 {
        check(&pm_case(&mut rng, k % 2 == 0), &PipelineOptions::default());
    }
}

#[test]
fn mdi_bounds_dominate_explicit_attacks() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..4 {
        check(&mdi_case(&mut rng), &PipelineOptions::default());
    }
}

#[test]
fn decoy_bounds_sandwich_explicit_attacks() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let opts = DecoyOptions { n_cut: 1, ..DecoyOptions::default() };
    for case in decoy_cases(&mut rng, &opts) {
        check(&case, &PipelineOptions::default());
    }
}
