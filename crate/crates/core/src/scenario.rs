//! Source ensembles: reference-state inner products and fidelity deviations.
//!
//! States are described Gram-first. A [`ReferenceEnsemble`] carries the table
//! `⟨φ_{j'}|φ_j⟩` and the per-setting deviation `ε_j`; the actual emitted state
//! is only known to satisfy `|⟨φ_j|ψ_j⟩|² ≥ 1 − ε_j`. A [`DecoyEnsemble`] adds
//! Poisson photon-number structure on top of a single-photon encoding.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hermitian::{HermitianMatrix, LinalgError, C64};

/// Tolerance on unit diagonal and PSD-ness of inner-product tables.
pub const TABLE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("δ must lie in [0, π), got {0}")]
    DeltaOutOfRange(f64),
    #[error("only 3- and 4-state BB84 encodings are supported, got {0}")]
    UnsupportedStateCount(usize),
    #[error("intensity must be finite and nonnegative, got {0}")]
    BadIntensity(f64),
    #[error("intensities must be distinct, {0} appears twice")]
    DuplicateIntensity(f64),
    #[error("need at least one intensity")]
    NoIntensities,
    #[error("ε for setting {setting} must lie in [0, 1), got {value}")]
    EpsilonOutOfRange { setting: usize, value: f64 },
    #[error("I_max must lie in [0, 1), got {0}")]
    IMaxOutOfRange(f64),
    #[error("hardware bounds must be finite and nonnegative, got ({0}, {1})")]
    BadHardwareBound(f64, f64),
    #[error("inner-product table diagonal entry {index} is {value}, expected 1")]
    NotUnitDiagonal { index: usize, value: f64 },
    #[error("inner-product table is not PSD: smallest eigenvalue {0:e}")]
    NotPsd(f64),
    #[error("{labels} labels for a {dim}-setting table")]
    LabelCount { labels: usize, dim: usize },
    #[error("key settings {0:?} are not two distinct settings of the ensemble")]
    BadKeySettings([usize; 2]),
    #[error("{what} has {found} entries, expected {expected}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A partially characterized source: reference states (through their inner
/// products) and fidelity deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReferenceEnsemble", into = "RawReferenceEnsemble")]
pub struct ReferenceEnsemble {
    labels: Vec<String>,
    /// Entry `[a][b]` is `⟨φ_a|φ_b⟩`.
    inner_products: HermitianMatrix,
    epsilons: Vec<f64>,
    key_settings: [usize; 2],
    /// Bloch angles when the references are the real qubit states
    /// `cos(θ/2)|0⟩ + sin(θ/2)|1⟩`; used by the channel models.
    qubit_angles: Option<Vec<f64>>,
    /// Real coherent-state amplitudes when the references are coherent
    /// states `|α_j⟩`; used by the channel models.
    coherent_amplitudes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReferenceEnsemble {
    labels: Vec<String>,
    inner_products: HermitianMatrix,
    epsilons: Vec<f64>,
    key_settings: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qubit_angles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coherent_amplitudes: Option<Vec<f64>>,
}

impl TryFrom<RawReferenceEnsemble> for ReferenceEnsemble {
    type Error = ScenarioError;

    fn try_from(raw: RawReferenceEnsemble) -> Result<Self, Self::Error> {
        let mut ens = ReferenceEnsemble::new(raw.labels, raw.inner_products, raw.epsilons, raw.key_settings)?;
        let n = ens.len();
        if let Some(a) = raw.qubit_angles {
            check_len("qubit_angles", n, a.len())?;
            ens.qubit_angles = Some(a);
        }
        if let Some(a) = raw.coherent_amplitudes {
            check_len("coherent_amplitudes", n, a.len())?;
            ens.coherent_amplitudes = Some(a);
        }
        Ok(ens)
    }
}

impl From<ReferenceEnsemble> for RawReferenceEnsemble {
    fn from(e: ReferenceEnsemble) -> Self {
        Self {
            labels: e.labels,
            inner_products: e.inner_products,
            epsilons: e.epsilons,
            key_settings: e.key_settings,
            qubit_angles: e.qubit_angles,
            coherent_amplitudes: e.coherent_amplitudes,
        }
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ScenarioError> {
    if expected == found {
        Ok(())
    } else {
        Err(ScenarioError::Length { what, expected, found })
    }
}

fn check_epsilons(eps: &[f64]) -> Result<(), ScenarioError> {
    for (setting, &value) in eps.iter().enumerate() {
        if !(0.0..1.0).contains(&value) {
            return Err(ScenarioError::EpsilonOutOfRange { setting, value });
        }
    }
    Ok(())
}

/// Checks unit diagonal and positive semidefiniteness.
pub fn validate_inner_products(table: &HermitianMatrix) -> Result<(), ScenarioError> {
    for index in 0..table.dim() {
        let value = table.get(index, index).re;
        if (value - 1.0).abs() > TABLE_TOL {
            return Err(ScenarioError::NotUnitDiagonal { index, value });
        }
    }
    let lmin = table.eigenvalues()[0];
    if lmin < -TABLE_TOL {
        return Err(ScenarioError::NotPsd(lmin));
    }
    Ok(())
}

impl ReferenceEnsemble {
    pub fn new(
        labels: Vec<String>,
        inner_products: HermitianMatrix,
        epsilons: Vec<f64>,
        key_settings: [usize; 2],
    ) -> Result<Self, ScenarioError> {
        let n = inner_products.dim();
        if labels.len() != n {
            return Err(ScenarioError::LabelCount { labels: labels.len(), dim: n });
        }
        check_len("epsilons", n, epsilons.len())?;
        check_epsilons(&epsilons)?;
        validate_inner_products(&inner_products)?;
        if key_settings[0] == key_settings[1] || key_settings.iter().any(|&k| k >= n) {
            return Err(ScenarioError::BadKeySettings(key_settings));
        }
        Ok(Self { labels, inner_products, epsilons, key_settings, qubit_angles: None, coherent_amplitudes: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn inner_products(&self) -> &HermitianMatrix {
        &self.inner_products
    }

    /// `⟨φ_a|φ_b⟩`.
    pub fn inner_product(&self, a: usize, b: usize) -> C64 {
        self.inner_products.get(a, b)
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn epsilon(&self, setting: usize) -> f64 {
        self.epsilons[setting]
    }

    pub fn key_settings(&self) -> [usize; 2] {
        self.key_settings
    }

    pub fn qubit_angles(&self) -> Option<&[f64]> {
        self.qubit_angles.as_deref()
    }

    pub fn coherent_amplitudes(&self) -> Option<&[f64]> {
        self.coherent_amplitudes.as_deref()
    }

    /// True when every `ε_j` is zero.
    pub fn is_fully_characterized(&self) -> bool {
        self.epsilons.iter().all(|&e| e == 0.0)
    }

    /// Same references with new deviations.
    pub fn with_epsilons(&self, epsilons: Vec<f64>) -> Result<Self, ScenarioError> {
        check_len("epsilons", self.len(), epsilons.len())?;
        check_epsilons(&epsilons)?;
        Ok(Self { epsilons, ..self.clone() })
    }

    pub fn with_uniform_epsilon(&self, epsilon: f64) -> Result<Self, ScenarioError> {
        self.with_epsilons(vec![epsilon; self.len()])
    }
}

/// Four-state (`0, 1, +, −`) or three-state (`0, 1, +`) BB84 encoding with
/// angle flaw `δ`: Bloch angles `(1 + δ/π)·θ̂` with `θ̂ = 0, π, π/2, 3π/2`,
/// and `⟨φ_{j'}|φ_j⟩ = cos((θ_j − θ_{j'})/2)`.
pub fn bb84_ensemble(delta: f64, n_states: usize, epsilon: f64) -> Result<ReferenceEnsemble, ScenarioError> {
    if !(0.0..PI).contains(&delta) {
        return Err(ScenarioError::DeltaOutOfRange(delta));
    }
    let (labels, nominal): (Vec<&str>, Vec<f64>) = match n_states {
        4 => (vec!["0", "1", "+", "-"], vec![0.0, PI, PI / 2.0, 3.0 * PI / 2.0]),
        3 => (vec!["0", "1", "+"], vec![0.0, PI, PI / 2.0]),
        other => return Err(ScenarioError::UnsupportedStateCount(other)),
    };
    let angles: Vec<f64> = nominal.iter().map(|a| (1.0 + delta / PI) * a).collect();
    let table = HermitianMatrix::from_fn(angles.len(), |a, b| C64::new(((angles[b] - angles[a]) / 2.0).cos(), 0.0))?;
    let mut ens = ReferenceEnsemble::new(
        labels.into_iter().map(String::from).collect(),
        table,
        vec![epsilon; angles.len()],
        [0, 1],
    )?;
    ens.qubit_angles = Some(angles);
    Ok(ens)
}

/// One party's coherent-light MDI source: `|√μ⟩, |−√μ⟩, |vac⟩` with
/// `⟨√μ|−√μ⟩ = e^{−2μ}` and `⟨±√μ|vac⟩ = e^{−μ/2}`.
pub fn coherent_mdi_ensemble(mu: f64, epsilon: f64) -> Result<ReferenceEnsemble, ScenarioError> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(ScenarioError::BadIntensity(mu));
    }
    let opposite = (-2.0 * mu).exp();
    let vacuum = (-mu / 2.0).exp();
    #[rustfmt::skip]
    let table = [
        1.0, opposite, vacuum,
        opposite, 1.0, vacuum,
        vacuum, vacuum, 1.0,
    ];
    let table = HermitianMatrix::from_row_major(3, table.iter().map(|&v| C64::new(v, 0.0)).collect())?;
    let mut ens = ReferenceEnsemble::new(
        vec!["+sqrt_mu".into(), "-sqrt_mu".into(), "vac".into()],
        table,
        vec![epsilon; 3],
        [0, 1],
    )?;
    ens.coherent_amplitudes = Some(vec![mu.sqrt(), -mu.sqrt(), 0.0]);
    Ok(ens)
}

/// Phase-randomized decoy source whose back-reflection may leak the setting
/// (Trojan-horse model). The `n`-photon reference of setting `j` is the
/// `n`-fold product of the single-photon encoding, tensored with the vacuum
/// of the back-reflected mode, so it does not depend on the intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDecoyEnsemble", into = "RawDecoyEnsemble")]
pub struct DecoyEnsemble {
    encoding: ReferenceEnsemble,
    intensities: Vec<f64>,
    i_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecoyEnsemble {
    encoding: ReferenceEnsemble,
    intensities: Vec<f64>,
    i_max: f64,
}

impl TryFrom<RawDecoyEnsemble> for DecoyEnsemble {
    type Error = ScenarioError;

    fn try_from(raw: RawDecoyEnsemble) -> Result<Self, Self::Error> {
        decoy_tha_ensemble(&raw.intensities, raw.i_max, &raw.encoding)
    }
}

impl From<DecoyEnsemble> for RawDecoyEnsemble {
    fn from(e: DecoyEnsemble) -> Self {
        Self { encoding: e.encoding, intensities: e.intensities, i_max: e.i_max }
    }
}

/// Poisson weight `e^{−μ} μⁿ / n!`.
pub fn poisson(mu: f64, n: usize) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let mut p = (-mu).exp();
    for k in 1..=n {
        p *= mu / k as f64;
    }
    p
}

impl DecoyEnsemble {
    pub fn encoding(&self) -> &ReferenceEnsemble {
        &self.encoding
    }

    pub fn n_settings(&self) -> usize {
        self.encoding.len()
    }

    pub fn key_settings(&self) -> [usize; 2] {
        self.encoding.key_settings()
    }

    /// Intensities; index 0 is the signal intensity `μ0` that carries the key.
    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn i_max(&self) -> f64 {
        self.i_max
    }

    /// `p_{n|μ}` for intensity index `intensity`.
    pub fn photon_probability(&self, intensity: usize, photons: usize) -> f64 {
        poisson(self.intensities[intensity], photons)
    }

    /// `Σ_{n ≤ n_cut} p_{n|μ}`.
    pub fn truncated_mass(&self, intensity: usize, n_cut: usize) -> f64 {
        (0..=n_cut).map(|n| self.photon_probability(intensity, n)).sum()
    }

    /// `⟨φ^{(n')}_{j'}|φ^{(n)}_j⟩ = δ_{nn'} ⟨j'|j⟩ⁿ`.
    pub fn reference_overlap(&self, setting_bra: usize, photons_bra: usize, setting_ket: usize, photons_ket: usize) -> C64 {
        if photons_bra != photons_ket {
            return C64::new(0.0, 0.0);
        }
        self.encoding.inner_product(setting_bra, setting_ket).powu(photons_bra as u32)
    }

    /// `ε^{(n)}_{j,μ}`; equal to `I_max` for every label.
    pub fn epsilon(&self, _setting: usize, _intensity: usize, _photons: usize) -> f64 {
        self.i_max
    }

    pub fn with_intensities(&self, intensities: &[f64]) -> Result<Self, ScenarioError> {
        decoy_tha_ensemble(intensities, self.i_max, &self.encoding)
    }

    pub fn with_i_max(&self, i_max: f64) -> Result<Self, ScenarioError> {
        decoy_tha_ensemble(&self.intensities, i_max, &self.encoding)
    }
}

/// Decoy ensemble with Trojan-horse leakage bounded by `i_max`.
pub fn decoy_tha_ensemble(
    intensities: &[f64],
    i_max: f64,
    encoding: &ReferenceEnsemble,
) -> Result<DecoyEnsemble, ScenarioError> {
    if !(0.0..1.0).contains(&i_max) {
        return Err(ScenarioError::IMaxOutOfRange(i_max));
    }
    if intensities.is_empty() {
        return Err(ScenarioError::NoIntensities);
    }
    for (k, &mu) in intensities.iter().enumerate() {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(ScenarioError::BadIntensity(mu));
        }
        if intensities[..k].contains(&mu) {
            return Err(ScenarioError::DuplicateIntensity(mu));
        }
    }
    Ok(DecoyEnsemble {
        encoding: encoding.with_uniform_epsilon(0.0)?,
        intensities: intensities.to_vec(),
        i_max,
    })
}

/// `I_max = η^U · I_in^U`.
pub fn i_max_from_hardware(injected_upper: f64, isolation_upper: f64) -> Result<f64, ScenarioError> {
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !(ok(injected_upper) && ok(isolation_upper)) {
        return Err(ScenarioError::BadHardwareBound(injected_upper, isolation_upper));
    }
    Ok(injected_upper * isolation_upper)
}
