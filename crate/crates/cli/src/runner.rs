//! Executes a validated plan and writes the CSV and JSON report.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::info;
use serde::Serialize;
use thiserror::Error;

use qkdsdp::gram::GramSdp;
use qkdsdp::keyrate::{sweep, Formulation, KeyRatePoint, SdpContext};

use crate::config::{self, ConfigError, Plan, RunConfig};

pub const CSV_HEADER: &str = "distance_km,mu,Y_Z,e_Z,e_ph_upper,key_rate,cert_correction,duality_gap,status";

pub const EXIT_OK: i32 = 0;
pub const EXIT_POINT_FAILED: i32 = 1;
pub const EXIT_BAD_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Read { .. } => EXIT_BAD_CONFIG,
            RunError::Write { .. } | RunError::Pool(_) => EXIT_POINT_FAILED,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub jobs: Option<usize>,
    pub dump_sdp: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub points: Vec<KeyRatePoint>,
    pub exit_code: i32,
    pub csv_path: PathBuf,
    pub report_path: PathBuf,
}

/// Reads, validates and runs `config_path`. Nothing is written unless the
/// configuration is valid.
pub fn run(config_path: &Path, args: &RunArgs) -> Result<RunOutcome, RunError> {
    let text = fs::read_to_string(config_path).map_err(|source| RunError::Read { path: config_path.to_path_buf(), source })?;
    let plan = config::parse(config_path, &text)?;
    execute(&plan, args)
}

fn dump_name(ctx: &SdpContext) -> String {
    let mut name = format!("L{}", ctx.at.distance_km);
    if let Some(i) = ctx.at.i_max {
        let _ = write!(name, "_imax{i}");
    }
    if let Some(mu) = ctx.mu {
        let _ = write!(name, "_mu{mu}");
    }
    format!("{name}_{}.txt", ctx.role.as_str())
}

pub fn execute(plan: &Plan, args: &RunArgs) -> Result<RunOutcome, RunError> {
    if let Some(dir) = &args.dump_sdp {
        fs::create_dir_all(dir).map_err(|source| RunError::Write { path: dir.clone(), source })?;
    }
    let dump_errors = Mutex::new(Vec::new());
    let dump = |ctx: &SdpContext, sdp: &GramSdp| {
        let Some(dir) = &args.dump_sdp else { return };
        let path = dir.join(dump_name(ctx));
        let res = fs::File::create(&path).and_then(|f| sdp.dump(io::BufWriter::new(f)));
        if let Err(source) = res {
            dump_errors.lock().expect("dump lock").push(RunError::Write { path, source });
        }
    };
    let inspect: &(dyn Fn(&SdpContext, &GramSdp) + Sync) = &dump;
    let channel = plan.config.channel;
    let compute = || sweep(&plan.scenario, &channel, &plan.points, &plan.options, Some(inspect));
    let points = match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| RunError::Pool(e.to_string()))?
            .install(compute),
        None => compute(),
    };
    if let Some(err) = dump_errors.into_inner().expect("dump lock").into_iter().next() {
        return Err(err);
    }
    for (k, p) in points.iter().enumerate() {
        info!("point {}/{}: L={} km R={:e} e_ph={:e} {}", k + 1, points.len(), p.distance_km, p.key_rate, p.e_ph_upper, p.status());
        if let Some(e) = &p.error {
            info!("point {}: {e}", k + 1);
        }
    }

    let exit_code = if points.iter().all(KeyRatePoint::certificate_valid) { EXIT_OK } else { EXIT_POINT_FAILED };
    write_file(&plan.csv_path, &csv(&points))?;
    let report = report_json(&plan.config, &points, exit_code);
    write_file(&plan.report_path, &report)?;
    Ok(RunOutcome { points, exit_code, csv_path: plan.csv_path.clone(), report_path: plan.report_path.clone() })
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| RunError::Write { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| RunError::Write { path: path.to_path_buf(), source })
}

/// One row per point, in sweep order. Floats use the shortest
/// representation that roundtrips, so identical runs give identical bytes.
pub fn csv(points: &[KeyRatePoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        let mu = p.mu.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.distance_km,
            mu,
            p.y_z,
            p.e_z,
            p.e_ph_upper,
            p.key_rate,
            p.cert_correction(),
            p.duality_gap(),
            p.status()
        );
    }
    out
}

#[derive(Serialize)]
struct PointEntry<'a> {
    index: usize,
    status: &'static str,
    certificate_valid: bool,
    cert_correction: f64,
    duality_gap: f64,
    #[serde(flatten)]
    point: &'a KeyRatePoint,
}

#[derive(Serialize)]
struct Summary {
    points: usize,
    valid_certificates: usize,
    no_key: usize,
    errors: usize,
    exit_code: i32,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    formulation: Formulation,
    summary: Summary,
    points: Vec<PointEntry<'a>>,
}

pub fn report_json(config: &RunConfig, points: &[KeyRatePoint], exit_code: i32) -> String {
    let entries: Vec<PointEntry> = points
        .iter()
        .enumerate()
        .map(|(index, p)| PointEntry {
            index,
            status: p.status(),
            certificate_valid: p.certificate_valid(),
            cert_correction: p.cert_correction(),
            duality_gap: p.duality_gap(),
            point: p,
        })
        .collect();
    let summary = Summary {
        points: points.len(),
        valid_certificates: points.iter().filter(|p| p.certificate_valid()).count(),
        no_key: points.iter().filter(|p| p.no_key).count(),
        errors: points.iter().filter(|p| p.error.is_some()).count(),
        exit_code,
    };
    let report = Report { config, formulation: config.formulation, summary, points: entries };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    text
}
