//! Run configuration: one JSON document, fully validated before any solve.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qkdsdp::channel::ChannelParams;
use qkdsdp::gram::{DecoyOptions, PhaseErrorDefinition};
use qkdsdp::keyrate::{
    DecoyScenario, Formulation, IntensitySearch, MdiScenario, PipelineOptions, PmScenario, Scenario, SweepPoint,
};
use qkdsdp::sdp::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    #[serde(rename = "bb84_4")]
    Bb84Four,
    #[serde(rename = "bb84_3")]
    Bb84Three,
    MdiCoherent,
    DecoyTha,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    /// Phase of the phase-error objective (prepare-and-measure only).
    pub omega: Option<f64>,
    /// Intensity grid: μ for MDI, the signal intensity μ0 for decoy.
    pub mu: Option<Vec<f64>>,
    #[serde(default)]
    pub refine_mu: bool,
    pub decoy_intensities: Option<Vec<f64>>,
    pub i_max: Option<f64>,
    pub n_cut: Option<usize>,
    pub target_photons: Option<usize>,
    #[serde(default)]
    pub cross_orthogonality: bool,
    pub phase_error: Option<PhaseErrorDefinition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    // lists first: a derived struct would also accept a three-element array
    List(Vec<f64>),
    Single(f64),
    Range(Range),
}

impl Grid {
    /// Inclusive of `stop` when it lies on the grid (to within 1e-9 steps).
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::Single(v) => vec![*v],
            Grid::List(v) => v.clone(),
            Grid::Range(r) => {
                if !(r.step > 0.0) || !(r.stop >= r.start) {
                    return Vec::new();
                }
                let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize;
                (0..=n).map(|k| r.start + k as f64 * r.step).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub distance_km: Grid,
    /// Sweeps `I_max` at every distance (decoy only).
    pub i_max: Option<Grid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub channel: ChannelParams,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub formulation: Formulation,
    pub output: OutputConfig,
}

/// Config error with the location it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// A validated configuration ready to run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: RunConfig,
    pub scenario: Scenario,
    pub points: Vec<SweepPoint>,
    pub options: PipelineOptions,
    pub csv_path: PathBuf,
    pub report_path: PathBuf,
}

/// Line of the first occurrence of `"key"` in `text`, 1-based.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

struct Checker<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Checker<'_> {
    fn fail(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let line = key_line(self.text, key.rsplit('.').next().unwrap_or(key));
        ConfigError { path: self.path.to_path_buf(), line, column: None, message: format!("{key}: {}", message.into()) }
    }

    fn require<T: Clone>(&self, value: &Option<T>, key: &str, scenario: ScenarioKind) -> Result<T, ConfigError> {
        value.clone().ok_or_else(|| {
            let mut e = self.fail(key, format!("required for scenario {}", scenario_name(scenario)));
            e.line = key_line(self.text, "ensemble").or(e.line);
            e
        })
    }

    fn check(&self, ok: bool, key: &str, message: impl Into<String>) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(self.fail(key, message))
        }
    }
}

fn scenario_name(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::Bb84Four => "bb84_4",
        ScenarioKind::Bb84Three => "bb84_3",
        ScenarioKind::MdiCoherent => "mdi_coherent",
        ScenarioKind::DecoyTha => "decoy_tha",
    }
}

fn probability_like(v: f64) -> bool {
    (0.0..1.0).contains(&v)
}

/// Parses and validates `text`, read from `path`. Relative output paths are
/// resolved against the directory of `path`.
pub fn parse(path: &Path, text: &str) -> Result<Plan, ConfigError> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
    })?;
    let ck = Checker { path, text };
    config.channel.validate().map_err(|e| match e {
        qkdsdp::channel::ChannelError::InvalidParameter { name, .. } => ck.fail(&format!("channel.{name}"), e.to_string()),
        other => ck.fail("channel", other.to_string()),
    })?;

    let s = &config.solver;
    ck.check(s.gap_tol > 0.0 && s.gap_tol.is_finite(), "solver.gap_tol", "must be positive")?;
    ck.check(s.feas_tol > 0.0 && s.feas_tol.is_finite(), "solver.feas_tol", "must be positive")?;
    ck.check(s.max_iters > 0, "solver.max_iters", "must be positive")?;
    ck.check(s.prune_tol > 0.0 && s.prune_tol.is_finite(), "solver.prune_tol", "must be positive")?;

    let e = &config.ensemble;
    let kind = config.scenario;
    let mu_search = |ck: &Checker| -> Result<IntensitySearch, ConfigError> {
        let grid = ck.require(&e.mu, "ensemble.mu", kind)?;
        ck.check(!grid.is_empty(), "ensemble.mu", "grid is empty")?;
        ck.check(grid.iter().all(|m| m.is_finite() && *m > 0.0), "ensemble.mu", "intensities must be positive")?;
        Ok(IntensitySearch { grid, refine: e.refine_mu })
    };
    let scenario = match kind {
        ScenarioKind::Bb84Four | ScenarioKind::Bb84Three => {
            let delta = ck.require(&e.delta, "ensemble.delta", kind)?;
            let epsilon = ck.require(&e.epsilon, "ensemble.epsilon", kind)?;
            ck.check((0.0..std::f64::consts::PI).contains(&delta), "ensemble.delta", "must lie in [0, π)")?;
            ck.check(probability_like(epsilon), "ensemble.epsilon", "must lie in [0, 1)")?;
            let omega = e.omega.unwrap_or(0.0);
            ck.check(omega.is_finite(), "ensemble.omega", "must be finite")?;
            let n_states = if kind == ScenarioKind::Bb84Four { 4 } else { 3 };
            Scenario::Pm(PmScenario { n_states, delta, epsilon, omega })
        }
        ScenarioKind::MdiCoherent => {
            let epsilon = ck.require(&e.epsilon, "ensemble.epsilon", kind)?;
            ck.check(probability_like(epsilon), "ensemble.epsilon", "must lie in [0, 1)")?;
            Scenario::Mdi(MdiScenario { epsilon, mu: mu_search(&ck)?, phase_error: e.phase_error.unwrap_or_default() })
        }
        ScenarioKind::DecoyTha => {
            let delta = e.delta.unwrap_or(0.0);
            ck.check((0.0..std::f64::consts::PI).contains(&delta), "ensemble.delta", "must lie in [0, π)")?;
            // a swept I_max overrides the fixed one, which is then optional
            let i_max = match config.sweep.i_max {
                Some(_) => e.i_max.unwrap_or(0.0),
                None => ck.require(&e.i_max, "ensemble.i_max", kind)?,
            };
            ck.check(probability_like(i_max), "ensemble.i_max", "must lie in [0, 1)")?;
            let decoys = e.decoy_intensities.clone().unwrap_or_else(|| vec![0.02, 0.0]);
            ck.check(decoys.iter().all(|m| m.is_finite() && *m >= 0.0), "ensemble.decoy_intensities", "must be nonnegative")?;
            let mu = mu_search(&ck)?;
            ck.check(
                mu.grid.iter().all(|m| !decoys.contains(m)),
                "ensemble.mu",
                "signal intensities must differ from the decoy intensities",
            )?;
            let defaults = DecoyOptions::default();
            let options = DecoyOptions {
                n_cut: e.n_cut.unwrap_or(defaults.n_cut),
                target_photons: e.target_photons.unwrap_or(defaults.target_photons),
                cross_orthogonality: e.cross_orthogonality,
            };
            ck.check(options.target_photons <= options.n_cut, "ensemble.target_photons", "must not exceed n_cut")?;
            Scenario::Decoy(DecoyScenario { delta, mu, decoy_intensities: decoys, i_max, options })
        }
    };
    if kind != ScenarioKind::DecoyTha {
        for key in ["i_max", "decoy_intensities", "n_cut", "target_photons"] {
            ck.check(!has_field(e, key), &format!("ensemble.{key}"), format!("not used by scenario {}", scenario_name(kind)))?;
        }
    }

    let distances = config.sweep.distance_km.values();
    ck.check(!distances.is_empty(), "sweep.distance_km", "grid is empty")?;
    ck.check(distances.iter().all(|d| d.is_finite() && *d >= 0.0), "sweep.distance_km", "distances must be nonnegative")?;
    let i_max_grid = match &config.sweep.i_max {
        None => None,
        Some(grid) => {
            ck.check(kind == ScenarioKind::DecoyTha, "sweep.i_max", "only the decoy_tha scenario has I_max")?;
            let values = grid.values();
            ck.check(!values.is_empty(), "sweep.i_max", "grid is empty")?;
            ck.check(values.iter().all(|v| probability_like(*v)), "sweep.i_max", "values must lie in [0, 1)")?;
            Some(values)
        }
    };
    let points = match &i_max_grid {
        None => distances.iter().map(|&d| SweepPoint::at_distance(d)).collect(),
        Some(values) => distances
            .iter()
            .flat_map(|&d| values.iter().map(move |&i| SweepPoint { distance_km: d, i_max: Some(i) }))
            .collect(),
    };

    ck.check(!config.output.csv.as_os_str().is_empty(), "output.csv", "path is empty")?;
    ck.check(!config.output.report.as_os_str().is_empty(), "output.report", "path is empty")?;
    ck.check(config.output.csv != config.output.report, "output.report", "must differ from output.csv")?;
    let base = path.parent().unwrap_or(Path::new("."));
    let options = PipelineOptions { solver: config.solver.clone(), formulation: config.formulation };
    Ok(Plan {
        csv_path: base.join(&config.output.csv),
        report_path: base.join(&config.output.report),
        scenario,
        points,
        options,
        config,
    })
}

fn has_field(e: &EnsembleConfig, key: &str) -> bool {
    match key {
        "i_max" => e.i_max.is_some(),
        "decoy_intensities" => e.decoy_intensities.is_some(),
        "n_cut" => e.n_cut.is_some(),
        "target_photons" => e.target_photons.is_some(),
        _ => false,
    }
}
