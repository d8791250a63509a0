//! Asymptotic key rates from certified phase-error bounds, plus the
//! per-scenario pipelines, intensity search and sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{decoy_bb84_statistics, mdi_coherent_statistics, pm_bb84_statistics, ChannelError, ChannelParams};
use crate::gram::{
    build_decoy_phase, build_decoy_yield, build_mdi, build_pm_full, build_pm_partial, DecoyOptions, GramError, GramSdp,
    PhaseErrorDefinition,
};
use crate::hermitian::hermitian_from_embedding;
use crate::scenario::{bb84_ensemble, coherent_mdi_ensemble, decoy_tha_ensemble, ScenarioError};
use crate::sdp::{certify, solve, SdpError, SolveStatus, SolverOptions};

#[derive(Debug, Error)]
pub enum KeyRateError {
    #[error("{name} must lie in [0, 1], got {value}")]
    NotAProbability { name: &'static str, value: f64 },
    #[error("error-correction inefficiency must be at least 1, got {0}")]
    BadInefficiency(f64),
    #[error("intensity grid is empty")]
    EmptyGrid,
    #[error("intensity {0} is not a finite nonnegative number")]
    BadIntensity(f64),
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

fn probability(name: &'static str, value: f64) -> Result<f64, KeyRateError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(KeyRateError::NotAProbability { name, value })
    }
}

/// `h(x) = −x log₂x − (1−x) log₂(1−x)`, with `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64, KeyRateError> {
    probability("x", x)?;
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(x) + term(1.0 - x))
}

/// `Y_{Z∧ph} / Y_Z` clamped to `[0, 1]`. `None` means no key: nothing was
/// detected in the key basis.
pub fn phase_error_bound(joint_upper: f64, y_z: f64) -> Option<f64> {
    if !(y_z > 0.0) || !joint_upper.is_finite() {
        return None;
    }
    Some((joint_upper / y_z).clamp(0.0, 1.0))
}

fn privacy_term(e_ph: f64, e_z: f64, f_ec: f64) -> Result<f64, KeyRateError> {
    probability("e_ph", e_ph)?;
    probability("e_Z", e_z)?;
    if !(f_ec >= 1.0 && f_ec.is_finite()) {
        return Err(KeyRateError::BadInefficiency(f_ec));
    }
    if e_ph > 0.5 {
        return Ok(0.0);
    }
    Ok((1.0 - binary_entropy(e_ph)? - f_ec * binary_entropy(e_z)?).max(0.0))
}

/// `Y_Z [1 − h(e_ph) − f h(e_Z)]`, clipped at zero. Phase-error rates above
/// one half give no key.
pub fn pm_key_rate(y_z: f64, e_z: f64, e_ph: f64, f_ec: f64) -> Result<f64, KeyRateError> {
    probability("Y_Z", y_z)?;
    Ok(y_z * privacy_term(e_ph, e_z, f_ec)?)
}

/// `p_1 Y1_L [1 − h(e_ph1) − f h(e_Z)]`, clipped at zero. A nonpositive
/// single-photon yield bound gives no key.
pub fn decoy_key_rate(
    photon_probability: f64,
    yield_lower: f64,
    e_ph_upper: f64,
    e_z: f64,
    f_ec: f64,
) -> Result<f64, KeyRateError> {
    probability("p_1", photon_probability)?;
    if !(yield_lower > 0.0) {
        return Ok(0.0);
    }
    probability("Y1_L", yield_lower)?;
    Ok(photon_probability * yield_lower * privacy_term(e_ph_upper, e_z, f_ec)?)
}

/// Which form of the Gram SDP is handed to the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Reference atoms rewritten in a basis of their span. Strictly feasible.
    #[default]
    Reduced,
    /// Builder output as is.
    Direct,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub solver: SolverOptions,
    pub formulation: Formulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpRole {
    PhaseError,
    SinglePhotonYield,
}

impl SdpRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SdpRole::PhaseError => "phase_error",
            SdpRole::SinglePhotonYield => "single_photon_yield",
        }
    }
}

/// Solver and certificate diagnostics of one SDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpReport {
    pub role: SdpRole,
    pub formulation: Formulation,
    pub atoms: usize,
    pub embedded_dim: usize,
    pub constraints: usize,
    pub trace_bound: f64,
    pub reference_rank: Option<usize>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_value: f64,
    pub dual_value: f64,
    pub duality_gap: f64,
    /// Largest violation per constraint family at the returned primal point.
    pub residuals: BTreeMap<String, f64>,
    pub certified_value: f64,
    pub correction: f64,
    pub certificate_valid: bool,
}

/// Identifies an SDP within a sweep, for [`Inspect`] hooks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpContext {
    pub at: SweepPoint,
    pub mu: Option<f64>,
    pub role: SdpRole,
}

/// Hook that sees every problem actually handed to the solver.
pub type Inspect<'a> = Option<&'a (dyn Fn(&SdpContext, &GramSdp) + Sync)>;

/// Solves `sdp` (reduced first unless told otherwise) and certifies the
/// optimum.
pub fn certified_bound(sdp: &GramSdp, ctx: SdpContext, opts: &PipelineOptions, inspect: Inspect) -> Result<SdpReport, KeyRateError> {
    let role = ctx.role;
    let reduced;
    let (solved, rank) = match opts.formulation {
        Formulation::Direct => (sdp, None),
        Formulation::Reduced => {
            reduced = sdp.reduce()?;
            (reduced.sdp(), Some(reduced.rank()))
        }
    };
    if let Some(f) = inspect {
        f(&ctx, solved);
    }
    let problem = solved.to_trace_sdp()?;
    let sol = solve(&problem, &opts.solver);
    let cert = certify(&problem, &sol)?;

    let mut residuals = BTreeMap::new();
    if let Ok(gram) = hermitian_from_embedding(&sol.primal_x) {
        for (c, v) in solved.constraints().iter().zip(solved.violations(&gram)) {
            let slot = residuals.entry(c.family.to_string()).or_insert(0.0_f64);
            *slot = slot.max(v);
        }
    }
    Ok(SdpReport {
        role,
        formulation: opts.formulation,
        atoms: solved.dim(),
        embedded_dim: problem.dim(),
        constraints: problem.constraints().len(),
        trace_bound: problem.trace_bound(),
        reference_rank: rank,
        status: sol.status,
        iterations: sol.iterations,
        primal_value: sol.primal_value,
        dual_value: sol.dual_value,
        duality_gap: sol.gap,
        residuals,
        certified_value: cert.value,
        correction: cert.correction,
        certificate_valid: cert.certificate_valid,
    })
}

/// One sweep point with its certification trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRatePoint {
    pub distance_km: f64,
    pub i_max: Option<f64>,
    pub mu: Option<f64>,
    pub y_z: f64,
    pub e_z: f64,
    /// Certified lower bound on the single-photon yield (decoy only).
    pub yield_lower: Option<f64>,
    pub e_ph_upper: f64,
    pub key_rate: f64,
    pub no_key: bool,
    pub sdps: Vec<SdpReport>,
    pub error: Option<String>,
}

impl KeyRatePoint {
    fn empty(at: SweepPoint) -> Self {
        Self {
            distance_km: at.distance_km,
            i_max: at.i_max,
            mu: None,
            y_z: 0.0,
            e_z: 0.0,
            yield_lower: None,
            e_ph_upper: 1.0,
            key_rate: 0.0,
            no_key: true,
            sdps: Vec::new(),
            error: None,
        }
    }

    fn failed(at: SweepPoint, err: KeyRateError) -> Self {
        Self { error: Some(err.to_string()), ..Self::empty(at) }
    }

    /// Largest certificate correction over the point's SDPs.
    pub fn cert_correction(&self) -> f64 {
        self.sdps.iter().map(|s| s.correction).fold(0.0, f64::max)
    }

    pub fn duality_gap(&self) -> f64 {
        self.sdps.iter().map(|s| s.duality_gap).fold(0.0, f64::max)
    }

    pub fn certificate_valid(&self) -> bool {
        self.error.is_none() && !self.sdps.is_empty() && self.sdps.iter().all(|s| s.certificate_valid)
    }

    /// `error`, `invalid_certificate`, or the worst solver status.
    pub fn status(&self) -> &'static str {
        if self.error.is_some() {
            "error"
        } else if !self.certificate_valid() {
            "invalid_certificate"
        } else if self.sdps.iter().any(|s| s.status == SolveStatus::InfeasibleSuspected) {
            "infeasible_suspected"
        } else if self.sdps.iter().any(|s| s.status == SolveStatus::MaxIters) {
            "max_iters"
        } else {
            "converged"
        }
    }
}

/// Grid search over intensities with an optional one-level refinement
/// around the best grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensitySearch {
    pub grid: Vec<f64>,
    #[serde(default)]
    pub refine: bool,
}

impl IntensitySearch {
    pub fn fixed(mu: f64) -> Self {
        Self { grid: vec![mu], refine: false }
    }

    pub fn validate(&self) -> Result<(), KeyRateError> {
        if self.grid.is_empty() {
            return Err(KeyRateError::EmptyGrid);
        }
        match self.grid.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            Some(&bad) => Err(KeyRateError::BadIntensity(bad)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityOptimum {
    pub mu: f64,
    pub point: KeyRatePoint,
    /// Every evaluated intensity gave a zero rate.
    pub no_key: bool,
    pub evaluations: usize,
}

fn best_of(candidates: &[(f64, KeyRatePoint)]) -> usize {
    // ties go to the smaller intensity
    let mut best = 0;
    for (i, (mu, p)) in candidates.iter().enumerate() {
        let (best_mu, best_p) = &candidates[best];
        if p.key_rate > best_p.key_rate || (p.key_rate == best_p.key_rate && mu < best_mu) {
            best = i;
        }
    }
    best
}

/// Evaluates `eval` on the grid (in parallel) and returns the rate-maximizing
/// intensity.
pub fn optimize_intensity(
    search: &IntensitySearch,
    eval: impl Fn(f64) -> KeyRatePoint + Sync,
) -> Result<IntensityOptimum, KeyRateError> {
    search.validate()?;
    let mut grid = search.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut candidates: Vec<(f64, KeyRatePoint)> = grid.par_iter().map(|&mu| (mu, eval(mu))).collect();
    let mut evaluations = candidates.len();

    if search.refine && grid.len() > 1 {
        let i = best_of(&candidates);
        let mut extra = Vec::new();
        if i > 0 {
            extra.push(0.5 * (grid[i - 1] + grid[i]));
        }
        if i + 1 < grid.len() {
            extra.push(0.5 * (grid[i] + grid[i + 1]));
        }
        let refined: Vec<(f64, KeyRatePoint)> = extra.par_iter().map(|&mu| (mu, eval(mu))).collect();
        evaluations += refined.len();
        candidates.extend(refined);
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let no_key = candidates.iter().all(|(_, p)| !(p.key_rate > 0.0));
    let pick = if no_key { 0 } else { best_of(&candidates) };
    let (mu, mut point) = candidates.swap_remove(pick);
    point.no_key = no_key;
    Ok(IntensityOptimum { mu, point, no_key, evaluations })
}

/// Prepare-and-measure BB84 with three or four single-photon states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmScenario {
    pub n_states: usize,
    pub delta: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub omega: f64,
}

/// Coherent-light MDI with symmetric sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdiScenario {
    pub epsilon: f64,
    pub mu: IntensitySearch,
    #[serde(default)]
    pub phase_error: PhaseErrorDefinition,
}

/// Decoy-state BB84 with Trojan-horse leakage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoyScenario {
    #[serde(default)]
    pub delta: f64,
    /// Signal intensity candidates.
    pub mu: IntensitySearch,
    #[serde(default = "default_decoys")]
    pub decoy_intensities: Vec<f64>,
    pub i_max: f64,
    #[serde(default)]
    pub options: DecoyOptions,
}

fn default_decoys() -> Vec<f64> {
    vec![0.02, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Pm(PmScenario),
    Mdi(MdiScenario),
    Decoy(DecoyScenario),
}

/// Where a point is evaluated. `i_max` overrides the scenario's value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub distance_km: f64,
    pub i_max: Option<f64>,
}

impl SweepPoint {
    pub fn at_distance(distance_km: f64) -> Self {
        Self { distance_km, i_max: None }
    }
}

fn pm_point(s: &PmScenario, channel: &ChannelParams, at: SweepPoint, opts: &PipelineOptions, inspect: Inspect) -> Result<KeyRatePoint, KeyRateError> {
    let ens = bb84_ensemble(s.delta, s.n_states, s.epsilon)?;
    let stats = pm_bb84_statistics(at.distance_km, &ens, channel)?;
    let sdp = if s.epsilon == 0.0 && s.omega == 0.0 { build_pm_full(&ens, &stats)? } else { build_pm_partial(&ens, &stats, s.omega)? };
    let ctx = SdpContext { at, mu: None, role: SdpRole::PhaseError };
    let report = certified_bound(&sdp, ctx, opts, inspect)?;
    let mut point = KeyRatePoint { y_z: stats.y_z, e_z: stats.e_z, ..KeyRatePoint::empty(at) };
    finish_single(&mut point, report, channel.f_ec)?;
    Ok(point)
}

fn finish_single(point: &mut KeyRatePoint, report: SdpReport, f_ec: f64) -> Result<(), KeyRateError> {
    if report.certificate_valid {
        if let Some(e_ph) = phase_error_bound(report.certified_value, point.y_z) {
            point.e_ph_upper = e_ph;
            point.key_rate = pm_key_rate(point.y_z, point.e_z, e_ph, f_ec)?;
        }
    }
    point.no_key = !(point.key_rate > 0.0);
    point.sdps.push(report);
    Ok(())
}

fn mdi_point(s: &MdiScenario, mu: f64, channel: &ChannelParams, at: SweepPoint, opts: &PipelineOptions, inspect: Inspect) -> Result<KeyRatePoint, KeyRateError> {
    let ens = coherent_mdi_ensemble(mu, s.epsilon)?;
    let stats = mdi_coherent_statistics(at.distance_km, &ens, &ens, channel)?;
    let sdp = build_mdi(&ens, &ens, &stats, s.phase_error)?;
    let ctx = SdpContext { at, mu: Some(mu), role: SdpRole::PhaseError };
    let report = certified_bound(&sdp, ctx, opts, inspect)?;
    let mut point = KeyRatePoint { mu: Some(mu), y_z: stats.y_z, e_z: stats.e_z, ..KeyRatePoint::empty(at) };
    finish_single(&mut point, report, channel.f_ec)?;
    Ok(point)
}

fn decoy_point(s: &DecoyScenario, mu: f64, channel: &ChannelParams, at: SweepPoint, opts: &PipelineOptions, inspect: Inspect) -> Result<KeyRatePoint, KeyRateError> {
    let encoding = bb84_ensemble(s.delta, 4, 0.0)?;
    let mut intensities = vec![mu];
    intensities.extend_from_slice(&s.decoy_intensities);
    let i_max = at.i_max.unwrap_or(s.i_max);
    let ens = decoy_tha_ensemble(&intensities, i_max, &encoding)?;
    let stats = decoy_bb84_statistics(at.distance_km, &ens, channel)?;

    let ctx = |role| SdpContext { at: SweepPoint { i_max: Some(i_max), ..at }, mu: Some(mu), role };
    let yield_report = certified_bound(&build_decoy_yield(&ens, &stats, &s.options)?, ctx(SdpRole::SinglePhotonYield), opts, inspect)?;
    let phase_report = certified_bound(&build_decoy_phase(&ens, &stats, &s.options)?, ctx(SdpRole::PhaseError), opts, inspect)?;

    let mut point = KeyRatePoint { i_max: Some(i_max), mu: Some(mu), y_z: stats.y_z, e_z: stats.e_z, ..KeyRatePoint::empty(at) };
    if yield_report.certificate_valid && phase_report.certificate_valid {
        let y1 = yield_report.certified_value.min(1.0);
        point.yield_lower = Some(y1);
        if let Some(e_ph) = phase_error_bound(phase_report.certified_value, y1) {
            point.e_ph_upper = e_ph;
            let p1 = ens.photon_probability(0, s.options.target_photons);
            point.key_rate = decoy_key_rate(p1, y1, e_ph, stats.e_z, channel.f_ec)?;
        }
    }
    point.no_key = !(point.key_rate > 0.0);
    point.sdps.push(yield_report);
    point.sdps.push(phase_report);
    Ok(point)
}

impl Scenario {
    /// Full pipeline at one point, optimizing the intensity where the
    /// scenario has one. Failures are recorded in the point.
    pub fn evaluate(&self, channel: &ChannelParams, at: SweepPoint, opts: &PipelineOptions, inspect: Inspect) -> KeyRatePoint {
        match self {
            Scenario::Pm(s) => pm_point(s, channel, at, opts, inspect).unwrap_or_else(|e| KeyRatePoint::failed(at, e)),
            Scenario::Mdi(s) => best_intensity(&s.mu, at, |mu| mdi_point(s, mu, channel, at, opts, inspect)),
            Scenario::Decoy(s) => best_intensity(&s.mu, at, |mu| decoy_point(s, mu, channel, at, opts, inspect)),
        }
    }
}

fn best_intensity(
    search: &IntensitySearch,
    at: SweepPoint,
    eval: impl Fn(f64) -> Result<KeyRatePoint, KeyRateError> + Sync,
) -> KeyRatePoint {
    let at_mu = |mu: f64| eval(mu).unwrap_or_else(|e| KeyRatePoint { mu: Some(mu), ..KeyRatePoint::failed(at, e) });
    match optimize_intensity(search, at_mu) {
        Ok(best) => best.point,
        Err(e) => KeyRatePoint::failed(at, e),
    }
}

/// Evaluates every point in parallel; the output keeps the input order.
pub fn sweep(
    scenario: &Scenario,
    channel: &ChannelParams,
    points: &[SweepPoint],
    opts: &PipelineOptions,
    inspect: Inspect,
) -> Vec<KeyRatePoint> {
    points.par_iter().map(|&at| scenario.evaluate(channel, at, opts, inspect)).collect()
}
