//! Scenario files, bundled scenarios, and the run/check pipeline behind the CLI.
//!
//! A run builds the plant, audits its assumptions, integrates the closed
//! loop and writes `<name>.csv` and `<name>.audit.txt` to the output
//! directory. Failures map to exit codes: 1 config, 2 passivity,
//! 3 integration, 4 audit.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::beam_fem::{self, Actuation, BeamConfig};
use crate::error::{Error, Result};
use crate::funnel::FunnelSpec;
use crate::matrix_io::{fmt_g17, read_matrix};
use crate::passive_lti::{PassiveLti, DEFAULT_PROBE};
use crate::signal::Signal;
use crate::simulator::{
    energy_balance_report, integrate, verify_funnel, ClosedLoopProblem, EnergyBalance, FunnelAudit,
    IntegratorOptions, Trajectory,
};

/// Relative tolerance of the KYP eigenvalue test.
pub const PASSIVITY_TOL: f64 = 1e-8;

/// Environment variable capping how many scenarios run at once.
pub const THREADS_ENV: &str = "FUNNEL_SIM_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub system: SystemSource,
    pub funnel: FunnelSpec,
    /// One signal per output channel.
    pub y_ref: Vec<Signal>,
    /// One signal per input channel; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_ext: Option<Vec<Signal>>,
    /// Add the bump compensator so that the controller starts from `u = 0`.
    #[serde(default)]
    pub compensate_initial_mismatch: bool,
    #[serde(default)]
    pub x0: InitialState,
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Minimum spacing of CSV rows; every accepted step when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSource {
    Beam(BeamConfig),
    Matrices(MatrixSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSet {
    pub h: MatrixSource,
    pub a: MatrixSource,
    pub b: MatrixSource,
    pub c: MatrixSource,
    pub d: MatrixSource,
}

/// A matrix file path (relative to the config file) or inline rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    File(PathBuf),
    Rows(Vec<Vec<f64>>),
}

/// `"zero"`, a matrix file with one column, or inline values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(String),
    Values(Vec<f64>),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Named("zero".into())
    }
}

fn config_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(config_err("name", "must be a non-empty file stem"));
        }
        for (path, v) in [("horizon", self.horizon), ("rtol", self.rtol), ("atol", self.atol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(path, format!("must be positive and finite, got {v}")));
            }
        }
        if let Some(s) = self.sample_interval {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(config_err("sample_interval", format!("must be non-negative, got {s}")));
            }
        }
        self.funnel.validate().map_err(|e| config_err("funnel", e.to_string()))?;
        if let InitialState::Named(s) = &self.x0 {
            if s.is_empty() {
                return Err(config_err("x0", "expected \"zero\", a file path or a list of values"));
            }
        }
        Ok(())
    }

    pub fn options(&self) -> IntegratorOptions {
        IntegratorOptions {
            rtol: self.rtol,
            atol: self.atol,
            sample_interval: self.sample_interval,
            store_states: false,
            ..Default::default()
        }
    }
}

/// Names of the compiled-in scenarios.
pub fn list_scenarios() -> Vec<&'static str> {
    vec!["beam_distributed", "beam_point", "scalar_unbounded", "scalar_bounded"]
}

fn shrinking_funnel() -> FunnelSpec {
    FunnelSpec::exp_approach(10.0, 9.5, 0.5).expect("valid funnel")
}

fn beam(name: &str, actuation: Actuation, compensate: bool) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        system: SystemSource::Beam(BeamConfig::unit(80, actuation)),
        funnel: shrinking_funnel(),
        y_ref: vec![Signal::cos(1.0)],
        u_ext: None,
        compensate_initial_mismatch: compensate,
        x0: InitialState::default(),
        horizon: 30.0,
        rtol: 1e-7,
        atol: 1e-9,
        sample_interval: Some(1e-3),
    }
}

fn scalar(name: &str, abcd: [f64; 4], funnel: FunnelSpec, y_ref: Signal, horizon: f64) -> ScenarioConfig {
    let one = |v: f64| MatrixSource::Rows(vec![vec![v]]);
    ScenarioConfig {
        name: name.into(),
        system: SystemSource::Matrices(MatrixSet {
            h: one(1.0),
            a: one(abcd[0]),
            b: one(abcd[1]),
            c: one(abcd[2]),
            d: one(abcd[3]),
        }),
        funnel,
        y_ref: vec![y_ref],
        u_ext: None,
        compensate_initial_mismatch: false,
        x0: InitialState::default(),
        horizon,
        rtol: 1e-8,
        atol: 1e-10,
        sample_interval: Some(1e-2),
    }
}

pub fn bundled(name: &str) -> Option<ScenarioConfig> {
    let cfg = match name {
        "beam_distributed" => beam(name, Actuation::Distributed { from: 1.0 / 3.0, to: 2.0 / 3.0 }, false),
        "beam_point" => beam(name, Actuation::Point { at: 0.5 }, true),
        "scalar_unbounded" => scalar(
            name,
            [-1.0, 1.0, -1.0, 1.0],
            FunnelSpec::constant(2.0).expect("valid funnel"),
            Signal::constant(1.0),
            50.0,
        ),
        "scalar_bounded" => scalar(name, [-1.0, 1.0, 1.0, 0.0], shrinking_funnel(), Signal::cos(1.0), 200.0),
        _ => return None,
    };
    Some(cfg)
}

/// A bundled scenario name, or a path to a config file.
pub fn resolve(target: &str) -> Result<(ScenarioConfig, PathBuf)> {
    if let Some(cfg) = bundled(target) {
        return Ok((cfg, PathBuf::from(".")));
    }
    let path = Path::new(target);
    if !path.is_file() {
        return Err(config_err(
            "",
            format!("`{target}` is neither a bundled scenario ({}) nor a file", list_scenarios().join(", ")),
        ));
    }
    let cfg = ScenarioConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

/// The plant in two forms: the one whose assumptions are audited and the
/// one that is integrated. They differ only for the beam, which is audited
/// in displacement/velocity coordinates and integrated in modal ones.
#[derive(Debug, Clone)]
pub struct Plant {
    pub audited: PassiveLti,
    pub simulated: PassiveLti,
    /// `x_audited = T x_simulated`, when the forms differ.
    pub transform: Option<DMatrix<f64>>,
}

impl Plant {
    pub fn build(source: &SystemSource, base: &Path) -> Result<Self> {
        match source {
            SystemSource::Beam(cfg) => {
                let sos = beam_fem::assemble(cfg).map_err(|e| config_err("system.beam", e.to_string()))?;
                let audited = sos.to_passive_lti()?;
                let modal = sos.modal_form()?;
                Ok(Self {
                    audited,
                    simulated: modal.system,
                    transform: Some(modal.transform),
                })
            }
            SystemSource::Matrices(set) => {
                let load = |name: &str, src: &MatrixSource| -> Result<DMatrix<f64>> {
                    let path = format!("system.matrices.{name}");
                    match src {
                        MatrixSource::File(p) => read_matrix(base.join(p)).map_err(|e| config_err(&path, e.to_string())),
                        MatrixSource::Rows(rows) => {
                            let cols = rows.first().map_or(0, Vec::len);
                            if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
                                return Err(config_err(&path, "rows must be non-empty and of equal length"));
                            }
                            Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
                        }
                    }
                };
                let sys = PassiveLti::new(
                    load("h", &set.h)?,
                    load("a", &set.a)?,
                    load("b", &set.b)?,
                    load("c", &set.c)?,
                    load("d", &set.d)?,
                )
                .map_err(|e| config_err("system.matrices", e.to_string()))?;
                Ok(Self {
                    audited: sys.clone(),
                    simulated: sys,
                    transform: None,
                })
            }
        }
    }

    /// Initial state in simulation coordinates, from audited coordinates.
    fn initial_state(&self, x0: &InitialState, base: &Path) -> Result<DVector<f64>> {
        let n = self.audited.n();
        let x = match x0 {
            InitialState::Named(s) if s == "zero" => return Ok(DVector::zeros(n)),
            InitialState::Named(p) => {
                let m = read_matrix(base.join(p)).map_err(|e| config_err("x0", e.to_string()))?;
                if m.ncols() != 1 {
                    return Err(config_err("x0", format!("expected a single column, got {:?}", m.shape())));
                }
                DVector::from_column_slice(m.as_slice())
            }
            InitialState::Values(v) => DVector::from_column_slice(v),
        };
        if x.len() != n {
            return Err(config_err("x0", format!("expected {n} entries, got {}", x.len())));
        }
        match &self.transform {
            None => Ok(x),
            Some(t) => t
                .clone()
                .lu()
                .solve(&x)
                .ok_or_else(|| config_err("x0", "modal transform is singular")),
        }
    }
}

/// Results of the assumption checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionAudit {
    pub state_dim: usize,
    pub io_dim: usize,
    pub max_kyp_eig: f64,
    pub kyp_scale: f64,
    pub passive: bool,
    pub probe_lambda: f64,
    pub coercivity_c: f64,
    /// Initial funnel ratio `φ(0)‖e(0)‖`.
    pub initial_ratio: f64,
}

impl AssumptionAudit {
    pub fn holds(&self) -> bool {
        self.passive && self.coercivity_c > 0.0 && self.initial_ratio < 1.0
    }
}

/// A scenario made ready for integration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ScenarioConfig,
    pub plant: Plant,
    pub problem: ClosedLoopProblem,
}

/// Why a run failed; see [`Failure::exit_code`].
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Passivity(String),
    Integration(Error),
    Audit(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Passivity(_) => 2,
            Failure::Integration(_) => 3,
            Failure::Audit(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config: {e}"),
            Failure::Passivity(m) => write!(f, "assumptions: {m}"),
            Failure::Integration(e) => write!(f, "integration: {e}"),
            Failure::Audit(m) => write!(f, "audit: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

fn classify(e: Error) -> Failure {
    match e {
        Error::Config { .. } | Error::Parse(_) | Error::Io(_) | Error::InvalidConfig(_) => Failure::Config(e),
        Error::DimensionMismatch(_) | Error::InvalidSignal(_) | Error::InvalidFunnel(_) => Failure::Config(e),
        other => Failure::Integration(other),
    }
}

/// Builds the plant and the closed-loop problem.
pub fn prepare(cfg: &ScenarioConfig, base: &Path) -> std::result::Result<Prepared, Failure> {
    cfg.validate().map_err(Failure::Config)?;
    let plant = Plant::build(&cfg.system, base).map_err(classify)?;
    let m = plant.simulated.m();
    if cfg.y_ref.len() != m {
        return Err(Failure::Config(config_err("y_ref", format!("expected {m} signals, got {}", cfg.y_ref.len()))));
    }
    let u_ext = cfg.u_ext.clone().unwrap_or_else(|| vec![Signal::zero(); m]);
    if u_ext.len() != m {
        return Err(Failure::Config(config_err("u_ext", format!("expected {m} signals, got {}", u_ext.len()))));
    }
    let x0 = plant.initial_state(&cfg.x0, base).map_err(Failure::Config)?;
    let problem = if cfg.compensate_initial_mismatch {
        // `new` would reject an infeasible start that the compensator is meant to repair.
        let raw = ClosedLoopProblem {
            system: plant.simulated.clone(),
            funnel: cfg.funnel,
            y_ref: cfg.y_ref.clone(),
            u_ext,
            x0,
            horizon: cfg.horizon,
        };
        raw.with_compensator(&DVector::zeros(m))
    } else {
        ClosedLoopProblem::new(plant.simulated.clone(), cfg.funnel, cfg.y_ref.clone(), u_ext, x0, cfg.horizon)
    }
    .map_err(classify)?;
    Ok(Prepared {
        config: cfg.clone(),
        plant,
        problem,
    })
}

/// Passivity, coercivity at the default probe and the initial funnel ratio.
pub fn audit_assumptions(prepared: &Prepared) -> std::result::Result<AssumptionAudit, Failure> {
    let sys = &prepared.plant.audited;
    let fail = |e: Error| Failure::Passivity(e.to_string());
    let verdict = sys.check_passivity(PASSIVITY_TOL).map_err(fail)?;
    let c = sys.check_coercivity(DEFAULT_PROBE).map_err(fail)?;
    let p = &prepared.problem;
    let e0 = p.initial_error().map_err(Failure::Integration)?;
    Ok(AssumptionAudit {
        state_dim: p.system.n(),
        io_dim: p.system.m(),
        max_kyp_eig: verdict.max_kyp_eig,
        kyp_scale: verdict.scale,
        passive: verdict.passive,
        probe_lambda: DEFAULT_PROBE,
        coercivity_c: c,
        initial_ratio: p.funnel.phi(0.0) * e0.norm(),
    })
}

fn require_assumptions(audit: &AssumptionAudit) -> std::result::Result<(), Failure> {
    if !audit.passive {
        return Err(Failure::Passivity(format!(
            "KYP block has eigenvalue {} > {}·(1 + {})",
            audit.max_kyp_eig, PASSIVITY_TOL, audit.kyp_scale
        )));
    }
    if !(audit.coercivity_c > 0.0) {
        return Err(Failure::Passivity(format!(
            "P(λ) + P(λ)* is not positive definite at λ = {} (min eigenvalue {})",
            audit.probe_lambda, audit.coercivity_c
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub assumptions: AssumptionAudit,
    pub funnel: FunnelAudit,
    pub energy: EnergyBalance,
    pub trajectory: Trajectory,
    pub runtime_s: f64,
    pub csv_path: PathBuf,
    pub audit_path: PathBuf,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        !self.funnel.violated && self.energy.passive()
    }
}

/// Command-line overrides of the config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub horizon: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.rtol {
            cfg.rtol = v;
        }
        if let Some(v) = self.atol {
            cfg.atol = v;
        }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig, base: &Path, out_dir: &Path) -> std::result::Result<RunReport, Failure> {
    let prepared = prepare(cfg, base)?;
    let assumptions = audit_assumptions(&prepared)?;
    require_assumptions(&assumptions)?;
    let start = Instant::now();
    let trajectory = integrate(&prepared.problem, &cfg.options()).map_err(Failure::Integration)?;
    let runtime_s = start.elapsed().as_secs_f64();
    let funnel = verify_funnel(&trajectory);
    let energy = energy_balance_report(&prepared.problem, &trajectory).map_err(Failure::Integration)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Failure::Config(e.into()))?;
    let csv_path = out_dir.join(format!("{}.csv", cfg.name));
    let audit_path = out_dir.join(format!("{}.audit.txt", cfg.name));
    let report = RunReport {
        name: cfg.name.clone(),
        assumptions,
        funnel,
        energy,
        trajectory,
        runtime_s,
        csv_path,
        audit_path,
    };
    let io = |e: std::io::Error| Failure::Integration(e.into());
    write_trajectory_csv(&report.csv_path, &report.trajectory).map_err(io)?;
    std::fs::write(&report.audit_path, audit_summary(&report)).map_err(io)?;
    if report.funnel.violated {
        return Err(Failure::Audit(format!(
            "φ·‖e‖ = {} at t = {}",
            report.funnel.max_phi_e, report.funnel.argmax_t
        )));
    }
    if !report.energy.passive() {
        return Err(Failure::Audit(format!(
            "energy slack {} below -{}",
            report.energy.slack, report.energy.quad_err
        )));
    }
    Ok(report)
}

/// Assumption audit only, as `key=value` lines.
pub fn check_config(cfg: &ScenarioConfig, base: &Path) -> std::result::Result<String, Failure> {
    let prepared = prepare(cfg, base)?;
    let audit = audit_assumptions(&prepared)?;
    let mut out = String::new();
    push_assumptions(&mut out, &cfg.name, &audit);
    require_assumptions(&audit)?;
    Ok(out)
}

fn push_assumptions(out: &mut String, name: &str, a: &AssumptionAudit) {
    let _ = writeln!(out, "scenario={name}");
    let _ = writeln!(out, "state_dim={}", a.state_dim);
    let _ = writeln!(out, "io_dim={}", a.io_dim);
    let _ = writeln!(out, "max_kyp_eig={}", fmt_g17(a.max_kyp_eig));
    let _ = writeln!(out, "kyp_scale={}", fmt_g17(a.kyp_scale));
    let _ = writeln!(out, "passive={}", a.passive);
    let _ = writeln!(out, "coercivity_lambda={}", fmt_g17(a.probe_lambda));
    let _ = writeln!(out, "coercivity_c={}", fmt_g17(a.coercivity_c));
    let _ = writeln!(out, "initial_phi_e={}", fmt_g17(a.initial_ratio));
}

pub fn audit_summary(r: &RunReport) -> String {
    let mut out = String::new();
    push_assumptions(&mut out, &r.name, &r.assumptions);
    let s = &r.trajectory.stats;
    let _ = writeln!(out, "method={:?}", s.method);
    let _ = writeln!(out, "accepted_steps={}", s.accepted);
    let _ = writeln!(out, "rejected_steps={}", s.rejected);
    let _ = writeln!(out, "funnel_rejections={}", s.funnel_rejections);
    let _ = writeln!(out, "min_step={}", fmt_g17(s.min_step));
    let _ = writeln!(out, "max_step={}", fmt_g17(s.max_step));
    let _ = writeln!(out, "samples={}", r.trajectory.len());
    let _ = writeln!(out, "max_phi_e={}", fmt_g17(r.funnel.max_phi_e));
    let _ = writeln!(out, "argmax_t={}", fmt_g17(r.funnel.argmax_t));
    let _ = writeln!(out, "funnel_ok={}", !r.funnel.violated);
    let e = &r.energy;
    let _ = writeln!(out, "energy_gain={}", fmt_g17(e.lhs));
    let _ = writeln!(out, "supply_integral={}", fmt_g17(e.rhs));
    let _ = writeln!(out, "energy_slack={}", fmt_g17(e.slack));
    let _ = writeln!(out, "quad_err={}", fmt_g17(e.quad_err));
    let _ = writeln!(out, "energy_ok={}", e.passive());
    let _ = writeln!(out, "runtime_s={:.3}", r.runtime_s);
    let _ = writeln!(out, "status={}", if r.passed() { "pass" } else { "fail" });
    out
}

/// Column names: `t, y_*, y_ref_*, e_*, inv_phi, u_*, u_fun_*, u_ext_*, energy`.
pub fn csv_header(m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for prefix in ["y", "y_ref", "e"] {
        cols.extend((0..m).map(|j| format!("{prefix}_{j}")));
    }
    cols.push("inv_phi".into());
    for prefix in ["u", "u_fun", "u_ext"] {
        cols.extend((0..m).map(|j| format!("{prefix}_{j}")));
    }
    cols.push("energy".into());
    cols
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> std::io::Result<()> {
    let m = traj.outputs.first().map_or(0, |y| y.len());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", csv_header(m).join(","))?;
    let mut row = Vec::with_capacity(4 * m + 3);
    for k in 0..traj.len() {
        row.clear();
        row.push(traj.times[k]);
        for v in [&traj.outputs[k], &traj.references[k], &traj.errors[k]] {
            row.extend(v.iter());
        }
        row.push(traj.radii[k]);
        for v in [&traj.inputs[k], &traj.u_fun[k], &traj.u_ext[k]] {
            row.extend(v.iter());
        }
        row.push(traj.energies[k]);
        let line: Vec<String> = row.iter().map(|&v| fmt_g17(v)).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()
}

/// A CSV read back into columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_trajectory_csv(path: &Path) -> Result<CsvTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", i + 1, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

/// Worker count: `FUNNEL_SIM_THREADS` if set, else the available parallelism.
pub fn thread_cap() -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(default)
}

/// Runs every job on at most `threads` workers; results keep the input order.
pub fn run_many(
    jobs: &[(ScenarioConfig, PathBuf)],
    out_dir: &Path,
    threads: usize,
) -> Vec<std::result::Result<RunReport, Failure>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<std::result::Result<RunReport, Failure>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cfg, base)) = jobs.get(i) else { break };
                let r = run_scenario(cfg, base, out_dir);
                results.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_names_resolve_and_are_unique() {
        let names = list_scenarios();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        for n in names {
            assert_eq!(bundled(n).expect("bundled").name, n);
        }
    }

    #[test]
    fn bundled_configs_round_trip_through_json() {
        for n in list_scenarios() {
            let cfg = bundled(n).unwrap();
            assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn schema_errors_carry_the_field_path() {
        let mut v: serde_json::Value = serde_json::from_str(&bundled("beam_point").unwrap().to_json()).unwrap();
        v["system"]["beam"]["n_elements"] = serde_json::json!("eighty");
        match ScenarioConfig::from_json(&v.to_string()) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "system.beam.n_elements"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_positive_tolerance_is_a_config_error() {
        let mut cfg = bundled("scalar_bounded").unwrap();
        cfg.rtol = 0.0;
        let err = prepare(&cfg, Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            csv_header(2).join(","),
            "t,y_0,y_1,y_ref_0,y_ref_1,e_0,e_1,inv_phi,u_0,u_1,u_fun_0,u_fun_1,u_ext_0,u_ext_1,energy"
        );
    }

    #[test]
    fn point_beam_starts_on_the_compensated_input() {
        let cfg = bundled("beam_point").unwrap();
        let prepared = prepare(&cfg, Path::new(".")).unwrap();
        let e0 = prepared.problem.initial_error().unwrap();
        assert_eq!(e0[0], -1.0);
        let u_ext0 = prepared.problem.u_ext[0].value(0.0);
        assert!((u_ext0 + 4.0 / 3.0).abs() < 1e-15);
    }
}
