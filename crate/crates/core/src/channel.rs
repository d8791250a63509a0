//! Honest-channel models producing the observed statistics fed to the SDPs.
//!
//! All models use threshold detectors with dark-count probability `p_d` and
//! assign double clicks to a uniformly random bit. Transmittance is
//! `η = η_det · 10^{−α L / 10}`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{DecoyEnsemble, ReferenceEnsemble};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("distance must be finite and nonnegative, got {0}")]
    BadDistance(f64),
    #[error("ensemble does not carry {0}")]
    MissingStateData(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub alpha_db_per_km: f64,
    pub eta_det: f64,
    pub p_dark: f64,
    /// Rotation of Bob's reference frame (radians): a Bloch-angle offset for
    /// qubit encodings, a relative phase between the arms for MDI.
    pub misalignment: f64,
    pub f_ec: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { alpha_db_per_km: 0.2, eta_det: 0.73, p_dark: 1e-8, misalignment: 0.0, f_ec: 1.16 }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |name, value| Err(ChannelError::InvalidParameter { name, value });
        if !(self.alpha_db_per_km.is_finite() && self.alpha_db_per_km >= 0.0) {
            return bad("alpha_db_per_km", self.alpha_db_per_km);
        }
        if !(0.0..=1.0).contains(&self.eta_det) {
            return bad("eta_det", self.eta_det);
        }
        if !(0.0..=1.0).contains(&self.p_dark) {
            return bad("p_dark", self.p_dark);
        }
        if !self.misalignment.is_finite() {
            return bad("misalignment", self.misalignment);
        }
        if !(self.f_ec.is_finite() && self.f_ec >= 1.0) {
            return bad("f_ec", self.f_ec);
        }
        Ok(())
    }

    /// `η_det · 10^{−α L / 10}`.
    pub fn transmittance(&self, distance_km: f64) -> f64 {
        self.eta_det * 10f64.powf(-self.alpha_db_per_km * distance_km / 10.0)
    }
}

/// Alice's (and Bob's) setting for a statistic or a Gram atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Single(usize),
    Pair(usize, usize),
    Intensity { setting: usize, intensity: usize },
    Photon { setting: usize, intensity: usize, photons: usize },
    /// Orthonormal basis vector of the reference span (reduced Gram SDPs).
    Basis(usize),
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Setting::Single(j) => write!(f, "j={j}"),
            Setting::Pair(i, j) => write!(f, "i={i},j={j}"),
            Setting::Intensity { setting, intensity } => write!(f, "j={setting},mu={intensity}"),
            Setting::Photon { setting, intensity, photons } => write!(f, "j={setting},mu={intensity},n={photons}"),
            Setting::Basis(k) => write!(f, "b={k}"),
        }
    }
}

/// Announced outcome `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "0x")]
    X0,
    #[serde(rename = "1x")]
    X1,
    #[serde(rename = "f")]
    Inconclusive,
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::X0 => "0x",
            Outcome::X1 => "1x",
            Outcome::Inconclusive => "f",
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
        })
    }
}

/// Outcomes of Bob's X measurement in prepare-and-measure and decoy setups.
pub const PM_OUTCOMES: [Outcome; 3] = [Outcome::X0, Outcome::X1, Outcome::Inconclusive];
/// Outcomes announced by the MDI middle node.
pub const MDI_OUTCOMES: [Outcome; 2] = [Outcome::Pass, Outcome::Fail];

/// Conditional outcome probabilities plus the sifted-key observables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "RawStatistics", into = "RawStatistics")]
pub struct ObservedStatistics {
    entries: BTreeMap<(Setting, Outcome), f64>,
    /// Sifted detection rate `Y_Z`.
    pub y_z: f64,
    /// Sifted error rate `e_Z`.
    pub e_z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawStatistics {
    entries: Vec<StatisticEntry>,
    y_z: f64,
    e_z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatisticEntry {
    setting: Setting,
    outcome: Outcome,
    probability: f64,
}

impl From<RawStatistics> for ObservedStatistics {
    fn from(raw: RawStatistics) -> Self {
        Self {
            entries: raw.entries.into_iter().map(|e| ((e.setting, e.outcome), e.probability)).collect(),
            y_z: raw.y_z,
            e_z: raw.e_z,
        }
    }
}

impl From<ObservedStatistics> for RawStatistics {
    fn from(s: ObservedStatistics) -> Self {
        Self {
            entries: s
                .entries
                .into_iter()
                .map(|((setting, outcome), probability)| StatisticEntry { setting, outcome, probability })
                .collect(),
            y_z: s.y_z,
            e_z: s.e_z,
        }
    }
}

impl ObservedStatistics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, setting: Setting, outcome: Outcome, probability: f64) {
        self.entries.insert((setting, outcome), probability);
    }

    pub fn get(&self, setting: Setting, outcome: Outcome) -> Option<f64> {
        self.entries.get(&(setting, outcome)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Setting, Outcome, f64)> + '_ {
        self.entries.iter().map(|(&(s, o), &p)| (s, o, p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest `|Σ_γ p(γ|s) − 1|` over settings.
    pub fn normalization_error(&self) -> f64 {
        let mut sums: BTreeMap<Setting, f64> = BTreeMap::new();
        for (s, _, p) in self.iter() {
            *sums.entry(s).or_default() += p;
        }
        sums.values().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn check_distance(distance_km: f64) -> Result<(), ChannelError> {
    if distance_km.is_finite() && distance_km >= 0.0 {
        Ok(())
    } else {
        Err(ChannelError::BadDistance(distance_km))
    }
}

/// Two threshold detectors behind a single photon with arrival probability
/// `eta` that goes to detector `b` with probability `born[b]`. Returns
/// `[P(bit 0), P(bit 1), P(no click)]`, double clicks split evenly.
pub fn single_photon_clicks(eta: f64, born: [f64; 2], p_dark: f64) -> [f64; 3] {
    let none = (1.0 - eta) * (1.0 - p_dark) * (1.0 - p_dark);
    let both = eta * p_dark + (1.0 - eta) * p_dark * p_dark;
    let only = |b: usize| eta * born[b] * (1.0 - p_dark) + (1.0 - eta) * p_dark * (1.0 - p_dark);
    [only(0) + 0.5 * both, only(1) + 0.5 * both, none]
}

/// Two threshold detectors receiving Poisson light with mean photon numbers
/// `means[b]`. Returns `[P(bit 0), P(bit 1), P(no click)]`.
pub fn poisson_clicks(means: [f64; 2], p_dark: f64) -> [f64; 3] {
    let silent = |b: usize| (1.0 - p_dark) * (-means[b]).exp();
    let (s0, s1) = (silent(0), silent(1));
    let both = (1.0 - s0) * (1.0 - s1);
    [(1.0 - s0) * s1 + 0.5 * both, (1.0 - s1) * s0 + 0.5 * both, s0 * s1]
}

/// `n` photons, each arriving with probability `eta` and landing on
/// detector `b` with probability `born[b]`.
pub fn n_photon_clicks(n: usize, eta: f64, born: [f64; 2], p_dark: f64) -> [f64; 3] {
    let n = n as i32;
    let none_at = |b: usize| (1.0 - eta * born[b]).powi(n);
    let lost = (1.0 - eta).powi(n);
    let keep = 1.0 - p_dark;
    // bit b clicks alone: no photon at b̄, b̄ silent, and not (no photon at b and b silent)
    let only = |b: usize| {
        let other = 1 - b;
        keep * (none_at(other) - keep * lost)
    };
    let none = keep * keep * lost;
    let o0 = only(0);
    let o1 = only(1);
    let both = 1.0 - none - o0 - o1;
    [o0 + 0.5 * both, o1 + 0.5 * both, none]
}

/// `[P(+), P(−)]` and `[P(0), P(1)]` for the qubit at Bloch angle `theta`.
fn born_x(theta: f64) -> [f64; 2] {
    let p = ((theta - PI / 2.0) / 2.0).cos().powi(2);
    [p, 1.0 - p]
}

fn born_z(theta: f64) -> [f64; 2] {
    let p = (theta / 2.0).cos().powi(2);
    [p, 1.0 - p]
}

/// Prepare-and-measure qubit source over a lossy fiber.
///
/// `Y_j^γ` uses Bob's X measurement; `Y_Z`, `e_Z` use his Z measurement on
/// the two key settings (bit 0 for the first, bit 1 for the second).
pub fn pm_bb84_statistics(
    distance_km: f64,
    ens: &ReferenceEnsemble,
    params: &ChannelParams,
) -> Result<ObservedStatistics, ChannelError> {
    check_distance(distance_km)?;
    params.validate()?;
    let angles = ens.qubit_angles().ok_or(ChannelError::MissingStateData("qubit angles"))?;
    let eta = params.transmittance(distance_km);
    let mut stats = ObservedStatistics::new();
    for (j, &theta) in angles.iter().enumerate() {
        let probs = single_photon_clicks(eta, born_x(theta + params.misalignment), params.p_dark);
        for (outcome, p) in PM_OUTCOMES.iter().zip(probs) {
            stats.insert(Setting::Single(j), *outcome, p);
        }
    }
    let mut detected = 0.0;
    let mut errors = 0.0;
    for (bit, &j) in ens.key_settings().iter().enumerate() {
        let probs = single_photon_clicks(eta, born_z(angles[j] + params.misalignment), params.p_dark);
        debug_assert!((probs[2] - stats.get(Setting::Single(j), Outcome::Inconclusive).unwrap()).abs() < 1e-15);
        detected += 0.5 * (probs[0] + probs[1]);
        errors += 0.5 * probs[1 - bit];
    }
    stats.y_z = detected;
    stats.e_z = if detected > 0.0 { errors / detected } else { 0.0 };
    Ok(stats)
}

/// Click probabilities `[P(D_c), P(D_d)]` for coherent amplitudes `a` (Alice)
/// and `b` (Bob) interfering on a balanced beamsplitter, each arm with
/// transmittance `eta_arm`.
pub fn mdi_detector_clicks(a: f64, b: f64, eta_arm: f64, phase: f64, p_dark: f64) -> [f64; 2] {
    let (bc, bs) = (b * phase.cos(), b * phase.sin());
    let intensity_c = eta_arm * ((a + bc).powi(2) + bs.powi(2)) / 2.0;
    let intensity_d = eta_arm * ((a - bc).powi(2) + bs.powi(2)) / 2.0;
    let click = |i: f64| 1.0 - (1.0 - p_dark) * (-i).exp();
    [click(intensity_c), click(intensity_d)]
}

/// Coherent-light MDI setup: both parties send over half the total distance
/// to a balanced beamsplitter and two threshold detectors. `pass` means
/// exactly one detector clicked. Bob flips his bit when `D_d` clicks, so
/// errors are `D_d` clicks on equal bits and `D_c` clicks on opposite bits.
pub fn mdi_coherent_statistics(
    total_distance_km: f64,
    alice: &ReferenceEnsemble,
    bob: &ReferenceEnsemble,
    params: &ChannelParams,
) -> Result<ObservedStatistics, ChannelError> {
    check_distance(total_distance_km)?;
    params.validate()?;
    let amp_a = alice.coherent_amplitudes().ok_or(ChannelError::MissingStateData("coherent amplitudes"))?;
    let amp_b = bob.coherent_amplitudes().ok_or(ChannelError::MissingStateData("coherent amplitudes"))?;
    let eta_arm = params.transmittance(total_distance_km / 2.0);
    let mut stats = ObservedStatistics::new();
    let pass_probs = |i: usize, j: usize| {
        let [pc, pd] = mdi_detector_clicks(amp_a[i], amp_b[j], eta_arm, params.misalignment, params.p_dark);
        (pc * (1.0 - pd), pd * (1.0 - pc))
    };
    for i in 0..amp_a.len() {
        for j in 0..amp_b.len() {
            let (c_only, d_only) = pass_probs(i, j);
            let pass = c_only + d_only;
            stats.insert(Setting::Pair(i, j), Outcome::Pass, pass);
            stats.insert(Setting::Pair(i, j), Outcome::Fail, 1.0 - pass);
        }
    }
    let mut detected = 0.0;
    let mut errors = 0.0;
    for (bit_a, &i) in alice.key_settings().iter().enumerate() {
        for (bit_b, &j) in bob.key_settings().iter().enumerate() {
            let (c_only, d_only) = pass_probs(i, j);
            detected += 0.25 * (c_only + d_only);
            errors += 0.25 * if bit_a == bit_b { d_only } else { c_only };
        }
    }
    stats.y_z = detected;
    stats.e_z = if detected > 0.0 { errors / detected } else { 0.0 };
    Ok(stats)
}

/// Phase-randomized weak coherent pulses with the BB84 qubit encoding.
///
/// Returns `Q_{j,μ}^γ` for Bob's X measurement and `Y_Z`, `e_Z` for the
/// signal intensity (index 0) with Bob measuring Z.
pub fn decoy_bb84_statistics(
    distance_km: f64,
    ens: &DecoyEnsemble,
    params: &ChannelParams,
) -> Result<ObservedStatistics, ChannelError> {
    check_distance(distance_km)?;
    params.validate()?;
    let angles = ens.encoding().qubit_angles().ok_or(ChannelError::MissingStateData("qubit angles"))?;
    let eta = params.transmittance(distance_km);
    let mut stats = ObservedStatistics::new();
    for (j, &theta) in angles.iter().enumerate() {
        let born = born_x(theta + params.misalignment);
        for (m, &mu) in ens.intensities().iter().enumerate() {
            let probs = poisson_clicks([mu * eta * born[0], mu * eta * born[1]], params.p_dark);
            for (outcome, p) in PM_OUTCOMES.iter().zip(probs) {
                stats.insert(Setting::Intensity { setting: j, intensity: m }, *outcome, p);
            }
        }
    }
    let mu0 = ens.intensities()[0];
    let mut detected = 0.0;
    let mut errors = 0.0;
    for (bit, &j) in ens.key_settings().iter().enumerate() {
        let born = born_z(angles[j] + params.misalignment);
        let probs = poisson_clicks([mu0 * eta * born[0], mu0 * eta * born[1]], params.p_dark);
        detected += 0.5 * (probs[0] + probs[1]);
        errors += 0.5 * probs[1 - bit];
    }
    stats.y_z = detected;
    stats.e_z = if detected > 0.0 { errors / detected } else { 0.0 };
    Ok(stats)
}

/// Honest `n`-photon X-basis outcome probabilities `[0x, 1x, f]` for
/// setting `j` of a decoy ensemble.
pub fn decoy_photon_yields(
    distance_km: f64,
    ens: &DecoyEnsemble,
    params: &ChannelParams,
    setting: usize,
    photons: usize,
) -> Result<[f64; 3], ChannelError> {
    check_distance(distance_km)?;
    params.validate()?;
    let angles = ens.encoding().qubit_angles().ok_or(ChannelError::MissingStateData("qubit angles"))?;
    let eta = params.transmittance(distance_km);
    Ok(n_photon_clicks(photons, eta, born_x(angles[setting] + params.misalignment), params.p_dark))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{bb84_ensemble, coherent_mdi_ensemble, decoy_tha_ensemble, poisson};
    use approx::assert_abs_diff_eq;

    fn ideal() -> ChannelParams {
        ChannelParams { alpha_db_per_km: 0.2, eta_det: 1.0, p_dark: 0.0, misalignment: 0.0, f_ec: 1.16 }
    }

    #[test]
    fn noiseless_bb84() {
        let ens = bb84_ensemble(0.0, 4, 0.0).unwrap();
        let s = pm_bb84_statistics(0.0, &ens, &ideal()).unwrap();
        assert_abs_diff_eq!(s.y_z, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.e_z, 0.0, epsilon = 1e-15);
        // + never gives 1x, − never gives 0x
        assert_abs_diff_eq!(s.get(Setting::Single(2), Outcome::X1).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.get(Setting::Single(3), Outcome::X0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(s.normalization_error() < 1e-15);
    }

    #[test]
    fn total_loss() {
        let ens = bb84_ensemble(0.063, 3, 0.0).unwrap();
        let p = ChannelParams { eta_det: 0.0, ..ideal() };
        let s = pm_bb84_statistics(10.0, &ens, &p).unwrap();
        for j in 0..3 {
            assert_eq!(s.get(Setting::Single(j), Outcome::Inconclusive).unwrap(), 1.0);
        }
        assert_eq!(s.y_z, 0.0);
    }

    #[test]
    fn normalization_everywhere() {
        let p = ChannelParams { misalignment: 0.03, p_dark: 1e-3, ..Default::default() };
        let ens = bb84_ensemble(0.063, 4, 0.0).unwrap();
        for l in [0.0, 13.0, 150.0] {
            assert!(pm_bb84_statistics(l, &ens, &p).unwrap().normalization_error() < 1e-12);
            let m = coherent_mdi_ensemble(0.1, 0.0).unwrap();
            assert!(mdi_coherent_statistics(l, &m, &m, &p).unwrap().normalization_error() < 1e-12);
            let d = decoy_tha_ensemble(&[0.5, 0.02, 0.0], 0.0, &ens).unwrap();
            assert!(decoy_bb84_statistics(l, &d, &p).unwrap().normalization_error() < 1e-12);
            for n in 0..5 {
                let y = decoy_photon_yields(l, &d, &p, 2, n).unwrap();
                assert_abs_diff_eq!(y.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mdi_limits() {
        let zero = coherent_mdi_ensemble(0.0, 0.0).unwrap();
        let s = mdi_coherent_statistics(20.0, &zero, &zero, &ideal()).unwrap();
        for (_, o, p) in s.iter() {
            if o == Outcome::Pass {
                assert_eq!(p, 0.0);
            }
        }
        let [_, pd] = mdi_detector_clicks(0.3, 0.3, 1.0, 0.0, 0.0);
        assert_eq!(pd, 0.0);
    }

    #[test]
    fn decoy_gain_matches_poisson() {
        let ens = bb84_ensemble(0.0, 4, 0.0).unwrap();
        let d = decoy_tha_ensemble(&[0.02], 0.0, &ens).unwrap();
        let p = ChannelParams { eta_det: 1.0, p_dark: 0.0, ..ideal() };
        let s = decoy_bb84_statistics(0.0, &d, &p).unwrap();
        let f = s.get(Setting::Intensity { setting: 0, intensity: 0 }, Outcome::Inconclusive).unwrap();
        assert_abs_diff_eq!(1.0 - f, 1.0 - (-0.02f64).exp(), epsilon = 1e-15);
        // μ = 0: only dark counts
        let d0 = decoy_tha_ensemble(&[0.0], 0.0, &ens).unwrap();
        let pd = ChannelParams { p_dark: 1e-4, ..p };
        let s0 = decoy_bb84_statistics(0.0, &d0, &pd).unwrap();
        let f0 = s0.get(Setting::Intensity { setting: 0, intensity: 0 }, Outcome::Inconclusive).unwrap();
        assert_abs_diff_eq!(f0, (1.0 - 1e-4f64).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn poisson_mixture_of_photon_yields() {
        let ens = bb84_ensemble(0.063, 4, 0.0).unwrap();
        let d = decoy_tha_ensemble(&[0.4, 0.02, 0.0], 0.0, &ens).unwrap();
        let p = ChannelParams { misalignment: 0.02, p_dark: 1e-5, ..Default::default() };
        let s = decoy_bb84_statistics(30.0, &d, &p).unwrap();
        for j in 0..4 {
            for m in 0..3 {
                let mut mix = [0.0; 3];
                for n in 0..60 {
                    let y = decoy_photon_yields(30.0, &d, &p, j, n).unwrap();
                    for k in 0..3 {
                        mix[k] += poisson(d.intensities()[m], n) * y[k];
                    }
                }
                for (k, o) in PM_OUTCOMES.iter().enumerate() {
                    let q = s.get(Setting::Intensity { setting: j, intensity: m }, *o).unwrap();
                    assert_abs_diff_eq!(q, mix[k], epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn basis_independent_detection() {
        let ens = bb84_ensemble(0.063, 4, 0.0).unwrap();
        let p = ChannelParams::default();
        let eta = p.transmittance(40.0);
        for &theta in ens.qubit_angles().unwrap() {
            let x = single_photon_clicks(eta, born_x(theta), p.p_dark);
            let z = single_photon_clicks(eta, born_z(theta), p.p_dark);
            assert_eq!(x[2], z[2]);
        }
    }

    #[test]
    fn params_validation() {
        assert!(ChannelParams { eta_det: 1.5, ..Default::default() }.validate().is_err());
        assert!(ChannelParams { f_ec: 0.9, ..Default::default() }.validate().is_err());
        assert!(ChannelParams { alpha_db_per_km: -0.1, ..Default::default() }.validate().is_err());
        assert!(ChannelParams::default().validate().is_ok());
    }

    #[test]
    fn statistics_serde_roundtrip() {
        let ens = bb84_ensemble(0.063, 3, 0.0).unwrap();
        let s = pm_bb84_statistics(25.0, &ens, &ChannelParams::default()).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ObservedStatistics>(&json).unwrap(), s);
    }
}
