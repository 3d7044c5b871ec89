//! Scenario files: parsing, validation, execution and result persistence.
//!
//! Units: powers and noise in mW, prices in 1/mW.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::{OpticalOsnrGame, SeparableLogGame, SeparablePricing, WirelessSirGame};
use crate::control::{regulate, ControllerSpec, FlowSettings};
use crate::design::{design_price, wireless_qos_boundary_price};
use crate::error::{GameError, Result};
use crate::model::{ConstraintSet, GameSpec, OpaqueUtility, Pricing, QuadraticUtility, Utility};
use crate::pricing::{
    lyapunov_monitor, run_penalty_loop, run_pricing_loop, welfare, PenaltyLoopConfig, PenaltySpec,
    TwoTimescaleConfig,
};
use crate::sampling::Sampling;
use crate::solver::{certify, equilibrium, solve_ne, CertificateReport, SolverSettings};
use crate::trajectory::{Sample, Trajectory};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The shipped two-channel optical link scenario.
pub const REFERENCE_SCENARIO: &str = include_str!("../fixtures/osnr_two_channel.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PricingKind {
    #[default]
    Linear,
    LinearSum,
    Quadratic,
    QuadraticSum,
    Exponential,
    ExpSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GameConfig {
    Wireless {
        gains: Vec<f64>,
        noise: f64,
        spreading_gain: f64,
        beta: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_sir: Option<Vec<f64>>,
        #[serde(default = "default_wireless_upper")]
        upper: f64,
    },
    Osnr {
        gamma: Vec<Vec<f64>>,
        n0: f64,
        a: Vec<f64>,
        beta: Vec<f64>,
        #[serde(default = "default_true")]
        linear_term: bool,
        #[serde(default = "default_osnr_upper")]
        upper: f64,
    },
    Separable {
        beta: Vec<f64>,
        k: Vec<f64>,
        #[serde(default)]
        pricing: SeparablePricing,
        #[serde(default = "default_wireless_upper")]
        upper: f64,
    },
    /// Quadratic utilities `r_i x_i − ½M_ii x_i² − Σ_{j≠i} M_ij x_i x_j`
    /// evaluated as black boxes, so every derivative is a finite difference.
    Opaque {
        linear: Vec<f64>,
        coupling: Vec<Vec<f64>>,
        #[serde(default)]
        pricing: PricingKind,
        #[serde(default = "default_scale")]
        pricing_scale: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

fn default_true() -> bool {
    true
}
fn default_wireless_upper() -> f64 {
    100.0
}
fn default_osnr_upper() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    1.0
}
fn default_samples() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    Solve {
        alpha: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
        #[serde(default)]
        solver: SolverSettings,
    },
    Certify {
        alpha: Vec<f64>,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    Design {
        target: Vec<f64>,
    },
    QosDesign {},
    Regulate {
        controller: ControllerSpec,
        x0: Vec<f64>,
        #[serde(default)]
        flow: FlowSettings,
    },
    PriceLoop {
        alpha0: Vec<f64>,
        x0: Vec<f64>,
        #[serde(rename = "loop", default)]
        loop_cfg: TwoTimescaleConfig,
        #[serde(default)]
        settled: bool,
    },
    PenaltyLoop {
        alpha0: Vec<f64>,
        target: Vec<f64>,
        #[serde(rename = "loop", default)]
        loop_cfg: PenaltyLoopConfig,
    },
    /// Full two-timescale run of the optical link from its reference start.
    Reproduce {
        alpha0: Vec<f64>,
        x0: Vec<f64>,
        #[serde(rename = "loop", default)]
        loop_cfg: TwoTimescaleConfig,
    },
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Solve { .. } => "solve",
            TaskConfig::Certify { .. } => "certify",
            TaskConfig::Design { .. } => "design",
            TaskConfig::QosDesign {} => "qos-design",
            TaskConfig::Regulate { .. } => "regulate",
            TaskConfig::PriceLoop { .. } => "price-loop",
            TaskConfig::PenaltyLoop { .. } => "penalty-loop",
            TaskConfig::Reproduce { .. } => "reproduce",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub game: GameConfig,
    pub task: TaskConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Dotted field path, empty for syntax errors.
    pub field: String,
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{l}:{c}: ")?,
            (Some(l), None) => write!(f, "{l}: ")?,
            _ => {}
        }
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

/// Line and column of the first occurrence of `"key"` in the source.
fn locate(text: &str, key: &str) -> (Option<usize>, Option<usize>) {
    let needle = format!("\"{key}\"");
    for (l, line) in text.lines().enumerate() {
        if let Some(c) = line.find(&needle) {
            return (Some(l + 1), Some(line[..c].chars().count() + 1));
        }
    }
    (None, None)
}

fn diag(text: &str, field: &str, message: impl Into<String>) -> Diagnostic {
    let key = field.rsplit('.').next().unwrap_or(field);
    let (line, column) = locate(text, key);
    Diagnostic {
        field: field.to_string(),
        message: message.into(),
        line,
        column,
    }
}

fn matrix(rows: &[Vec<f64>], n: usize, field: &str, text: &str, out: &mut Vec<Diagnostic>) -> Option<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        out.push(diag(text, field, format!("must be a {n}×{n} matrix")));
        return None;
    }
    Some(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl GameConfig {
    pub fn n_players(&self) -> usize {
        match self {
            GameConfig::Wireless { gains, .. } => gains.len(),
            GameConfig::Osnr { a, .. } => a.len(),
            GameConfig::Separable { beta, .. } => beta.len(),
            GameConfig::Opaque { linear, .. } => linear.len(),
        }
    }

    pub fn wireless(&self) -> Result<WirelessSirGame> {
        match self {
            GameConfig::Wireless {
                gains,
                noise,
                spreading_gain,
                beta,
                target_sir,
                ..
            } => {
                let g = WirelessSirGame::new(gains.clone(), *noise, *spreading_gain, beta.clone())?;
                match target_sir {
                    Some(t) => g.with_target_sir(t.clone()),
                    None => Ok(g),
                }
            }
            _ => Err(GameError::Config("task needs a wireless game".into())),
        }
    }

    pub fn build(&self) -> Result<GameSpec> {
        match self {
            GameConfig::Wireless { upper, .. } => self.wireless()?.into_game(*upper),
            GameConfig::Osnr {
                gamma,
                n0,
                a,
                beta,
                linear_term,
                upper,
            } => {
                let n = a.len();
                if gamma.len() != n || gamma.iter().any(|r| r.len() != n) {
                    return Err(GameError::Config(format!("gamma must be a {n}×{n} matrix")));
                }
                let g = DMatrix::from_fn(n, n, |i, j| gamma[i][j]);
                OpticalOsnrGame::new(g, *n0, a.clone(), beta.clone(), *linear_term)?.into_game(*upper)
            }
            GameConfig::Separable { beta, k, pricing, upper } => {
                SeparableLogGame::new(beta.clone(), k.clone(), *pricing)?.into_game(*upper)
            }
            GameConfig::Opaque {
                linear,
                coupling,
                pricing,
                pricing_scale,
                lower,
                upper,
            } => {
                let n = linear.len();
                if coupling.len() != n || coupling.iter().any(|r| r.len() != n) {
                    return Err(GameError::Config(format!("coupling must be a {n}×{n} matrix")));
                }
                let quad = QuadraticUtility::new(linear.clone(), DMatrix::from_fn(n, n, |i, j| coupling[i][j]))?;
                let utility = Utility::Opaque(OpaqueUtility::new(n, move |i, x| {
                    Utility::Quadratic(quad.clone()).value(i, x)
                }));
                let pricing = match pricing {
                    PricingKind::Linear => Pricing::Linear,
                    PricingKind::LinearSum => Pricing::LinearSum,
                    PricingKind::Quadratic => Pricing::Quadratic { scale: *pricing_scale },
                    PricingKind::QuadraticSum => Pricing::QuadraticSum,
                    PricingKind::Exponential => Pricing::Exponential,
                    PricingKind::ExpSum => Pricing::ExpSum,
                };
                GameSpec::new(utility, pricing, ConstraintSet::boxed(lower.clone(), upper.clone())?)
            }
        }
    }

    fn check(&self, text: &str, out: &mut Vec<Diagnostic>) {
        let n = self.n_players();
        if n == 0 {
            out.push(diag(text, "game", "a game needs at least one player"));
            return;
        }
        let mut len = |field: &str, v: &[f64]| {
            if v.len() != n {
                out.push(diag(text, field, format!("expected {n} entries, got {}", v.len())));
            }
        };
        match self {
            GameConfig::Wireless { beta, target_sir, .. } => {
                len("game.beta", beta);
                if let Some(t) = target_sir {
                    len("game.target_sir", t);
                }
            }
            GameConfig::Osnr { gamma, beta, .. } => {
                len("game.beta", beta);
                matrix(gamma, n, "game.gamma", text, out);
            }
            GameConfig::Separable { k, .. } => len("game.k", k),
            GameConfig::Opaque {
                coupling, lower, upper, ..
            } => {
                len("game.lower", lower);
                len("game.upper", upper);
                matrix(coupling, n, "game.coupling", text, out);
            }
        }
        if out.is_empty() {
            if let Err(e) = self.build() {
                out.push(diag(text, "game", e.to_string()));
            }
        }
    }
}

impl TaskConfig {
    fn check(&self, n: usize, game: &GameConfig, text: &str, out: &mut Vec<Diagnostic>) {
        let mut len = |field: &str, v: &[f64]| {
            if v.len() != n {
                out.push(diag(text, field, format!("expected {n} entries, got {}", v.len())));
            }
        };
        let mut settings: Vec<(&str, Result<()>)> = Vec::new();
        match self {
            TaskConfig::Solve { alpha, x0, solver } => {
                len("task.alpha", alpha);
                if let Some(x0) = x0 {
                    len("task.x0", x0);
                }
                settings.push(("task.solver", solver.validate()));
            }
            TaskConfig::Certify { alpha, samples } => {
                len("task.alpha", alpha);
                if *samples == 0 {
                    settings.push(("task.samples", Err(GameError::Config("samples must be ≥ 1".into()))));
                }
            }
            TaskConfig::Design { target } => len("task.target", target),
            TaskConfig::QosDesign {} => {
                if !matches!(game, GameConfig::Wireless { target_sir: Some(_), .. }) {
                    settings.push((
                        "game.target_sir",
                        Err(GameError::Config("qos-design needs a wireless game with target_sir".into())),
                    ));
                }
            }
            TaskConfig::Regulate { controller, x0, flow } => {
                len("task.x0", x0);
                len("task.controller.target", &controller.target);
                settings.push(("task.controller", controller.validate()));
                settings.push(("task.flow", flow.validate()));
            }
            TaskConfig::PriceLoop { alpha0, x0, loop_cfg, .. } | TaskConfig::Reproduce { alpha0, x0, loop_cfg } => {
                len("task.alpha0", alpha0);
                len("task.x0", x0);
                settings.push(("task.loop", loop_cfg.validate()));
            }
            TaskConfig::PenaltyLoop { alpha0, target, loop_cfg } => {
                len("task.alpha0", alpha0);
                len("task.target", target);
                if !matches!(game, GameConfig::Wireless { .. }) {
                    settings.push(("game.kind", Err(GameError::Config("penalty-loop needs a wireless game".into()))));
                }
                if !(loop_cfg.step > 0.0) {
                    settings.push(("task.loop.step", Err(GameError::Config("step must be > 0".into()))));
                }
            }
        }
        for (field, r) in settings {
            if let Err(e) = r {
                let msg = e.to_string();
                // point at the offending key when the message names one
                let key = ["epsilon", "dt_fast", "outer_step", "inner_steps", "step", "tol", "max_iter", "dt", "horizon", "record_every", "lambda_p", "lambda_i"]
                    .iter()
                    .find(|k| msg.starts_with(&format!("configuration error: {k} ")));
                let field = match key {
                    Some(k) => format!("{field}.{k}"),
                    None => field.to_string(),
                };
                out.push(diag(text, &field, msg));
            }
        }
    }
}

fn serde_diagnostic(e: &serde_json::Error) -> Diagnostic {
    Diagnostic {
        field: String::new(),
        message: e.to_string(),
        line: Some(e.line()),
        column: Some(e.column()),
    }
}

/// Parses and checks a scenario without running it.
pub fn parse(text: &str) -> std::result::Result<ScenarioConfig, Vec<Diagnostic>> {
    let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| vec![serde_diagnostic(&e)])?;
    let mut out = Vec::new();
    config.game.check(text, &mut out);
    config
        .task
        .check(config.game.n_players(), &config.game, text, &mut out);
    if out.is_empty() {
        Ok(config)
    } else {
        Err(out)
    }
}

/// Schema and consistency diagnostics; empty means runnable.
pub fn validate(text: &str) -> Vec<Diagnostic> {
    parse(text).err().unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    NonConvergence,
    Infeasible,
    CertificateFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub status: Status,
    pub reason: Option<String>,
    pub report: Value,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub strict: bool,
    pub seed: Option<u64>,
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const FAILED: i32 = 2;
    pub const CERTIFICATE: i32 = 3;
}

impl RunOutput {
    pub fn exit_code(&self, strict: bool) -> i32 {
        match self.status {
            Status::Ok => exit::OK,
            Status::NonConvergence | Status::Infeasible => exit::FAILED,
            Status::CertificateFailure if strict => exit::CERTIFICATE,
            Status::CertificateFailure => exit::OK,
        }
    }
}

fn single_row(game: &GameSpec, x: &[f64], alpha: &[f64]) -> Result<Trajectory> {
    let mut tr = Trajectory::new(game.n_players());
    let q = game.pseudo_gradient(alpha, x)?;
    tr.push(Sample {
        t: 0.0,
        x: x.to_vec(),
        alpha: alpha.to_vec(),
        welfare: welfare(game, x)?,
        lyapunov: 0.5 * q.iter().map(|v| v * v).sum::<f64>(),
        metrics: game.metrics(x),
    })?;
    Ok(tr)
}

fn final_state(tr: &Trajectory) -> Value {
    match tr.last() {
        Some(s) => json!({
            "t": s.t,
            "x": s.x,
            "alpha": s.alpha,
            "welfare": s.welfare,
            "metrics_db": s.metrics,
        }),
        None => Value::Null,
    }
}

fn certificate_json(r: &CertificateReport) -> Value {
    serde_json::to_value(r).unwrap_or(Value::Null)
}

/// Runs the scenario in memory. Runtime failures that are part of the
/// result (non-convergence, infeasible targets, divergence) become a status;
/// configuration problems are returned as errors.
pub fn execute(config: &ScenarioConfig, opts: RunOptions) -> Result<RunOutput> {
    let game = config.game.build()?;
    let seed = opts.seed.unwrap_or(config.seed);
    let result = execute_task(config, &game, seed);
    match result {
        Ok(out) => Ok(out),
        Err(e @ GameError::Config(_)) | Err(e @ GameError::Dimension { .. }) => Err(e),
        Err(e) => {
            let status = match e {
                GameError::InfeasibleTarget(_) => Status::Infeasible,
                _ => Status::NonConvergence,
            };
            let reason = e.to_string();
            Ok(RunOutput {
                status,
                reason: Some(reason.clone()),
                report: json!({ "name": config.name, "task": config.task.name(), "status": status, "reason": reason }),
                trajectory: None,
            })
        }
    }
}

fn execute_task(config: &ScenarioConfig, game: &GameSpec, seed: u64) -> Result<RunOutput> {
    let mut status = Status::Ok;
    let mut reason = None;
    let mut trajectory = None;
    let mut body = serde_json::Map::new();
    match &config.task {
        TaskConfig::Solve { alpha, x0, solver } => {
            let x0 = x0.clone().unwrap_or_else(|| game.constraints().center());
            let sol = solve_ne(game, alpha, &x0, solver)?;
            body.insert("iterations".into(), json!(sol.iterations));
            body.insert("residual".into(), json!(sol.residual));
            trajectory = Some(single_row(game, &sol.x, alpha)?);
        }
        TaskConfig::Certify { alpha, samples } => {
            let report = certify(game, alpha, Sampling { n_samples: *samples, seed })?;
            if !report.all_hold() {
                status = Status::CertificateFailure;
                let failed: Vec<&str> = report
                    .entries
                    .iter()
                    .filter(|e| e.applicable() && !e.holds)
                    .map(|e| e.name.as_str())
                    .collect();
                reason = Some(format!("conditions not certified: {}", failed.join(", ")));
            }
            body.insert("certificate".into(), certificate_json(&report));
            if let Ok(sol) = equilibrium(game, alpha, &SolverSettings::default()) {
                trajectory = Some(single_row(game, &sol.x, alpha)?);
            }
        }
        TaskConfig::Design { target } => {
            let d = design_price(game, target)?;
            body.insert("design".into(), serde_json::to_value(&d).unwrap_or(Value::Null));
            if d.feasible {
                trajectory = Some(single_row(game, target, &d.prices)?);
            } else {
                status = Status::Infeasible;
                reason = d.reason().map(str::to_string);
            }
        }
        TaskConfig::QosDesign {} => {
            let w = config.game.wireless()?;
            let q = wireless_qos_boundary_price(&w)?;
            body.insert("design".into(), serde_json::to_value(&q).unwrap_or(Value::Null));
            trajectory = Some(single_row(game, &q.boundary, &q.design.prices)?);
        }
        TaskConfig::Regulate { controller, x0, flow } => {
            let out = regulate(game, controller, x0, flow)?;
            body.insert("final_error".into(), json!(out.final_error));
            body.insert("steady_price".into(), json!(out.steady));
            body.insert("closed_loop_real".into(), json!(out.gains.closed_loop_real));
            trajectory = Some(out.flow.trajectory);
        }
        TaskConfig::PriceLoop {
            alpha0,
            x0,
            loop_cfg,
            settled,
        } => {
            let out = run_pricing_loop(game, alpha0, x0, loop_cfg, *settled)?;
            let mon = lyapunov_monitor(&out.trajectory);
            body.insert("clamped".into(), json!(out.clamped));
            body.insert("halvings".into(), json!(out.halvings));
            body.insert("final_rate".into(), json!(out.final_rate));
            body.insert("lyapunov_max_increase".into(), json!(mon.max_increase));
            body.insert("lyapunov_relative_increase".into(), json!(mon.relative_increase));
            let report = certify(game, alpha0, Sampling { n_samples: 100, seed })?;
            if !report.all_hold() {
                status = Status::CertificateFailure;
                reason = Some("some sufficient conditions are not certified".into());
            }
            body.insert("certificate".into(), certificate_json(&report));
            trajectory = Some(out.trajectory);
        }
        TaskConfig::PenaltyLoop {
            alpha0,
            target,
            loop_cfg,
        } => {
            let w = config.game.wireless()?;
            let out = run_penalty_loop(&w, alpha0, &PenaltySpec { target: target.clone() }, loop_cfg)?;
            let gap = *out.sir_gap.last().expect("nonempty");
            body.insert("iterations".into(), json!(out.iterations));
            body.insert("min_sir_gap".into(), json!(gap));
            if gap < -loop_cfg.tol {
                status = Status::NonConvergence;
                reason = Some(format!("QoS region not reached: min SIR gap {gap:e}"));
            }
            trajectory = Some(out.trajectory);
        }
        TaskConfig::Reproduce { alpha0, x0, loop_cfg } => {
            let out = run_pricing_loop(game, alpha0, x0, loop_cfg, false)?;
            body.insert("clamped".into(), json!(out.clamped));
            body.insert("final_rate".into(), json!(out.final_rate));
            let report = certify(game, &out.alpha, Sampling { n_samples: 100, seed })?;
            if !report.all_hold() {
                status = Status::CertificateFailure;
                reason = Some("some sufficient conditions are not certified".into());
            }
            body.insert("certificate".into(), certificate_json(&report));
            trajectory = Some(out.trajectory);
        }
    }
    let mut report = serde_json::Map::new();
    report.insert("name".into(), json!(config.name));
    report.insert("task".into(), json!(config.task.name()));
    report.insert("status".into(), json!(status));
    report.insert("reason".into(), json!(reason));
    report.insert(
        "final".into(),
        trajectory.as_ref().map(final_state).unwrap_or(Value::Null),
    );
    report.extend(body);
    Ok(RunOutput {
        status,
        reason,
        report: Value::Object(report),
        trajectory,
    })
}

fn io_err(path: &Path, e: std::io::Error) -> GameError {
    GameError::Config(format!("{}: {e}", path.display()))
}

/// Writes `trajectory.csv`, `report.json` and `manifest.json` into `dir`.
pub fn write_artifacts(dir: &Path, config: &ScenarioConfig, out: &RunOutput, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    if let Some(tr) = &out.trajectory {
        let path = dir.join("trajectory.csv");
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        tr.write_csv(std::io::BufWriter::new(file))?;
    }
    let mut echo = config.clone();
    echo.seed = seed;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": TOOL_VERSION,
        "config": echo,
    });
    for (name, value) in [("report.json", &out.report), ("manifest.json", &manifest)] {
        let path = dir.join(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| GameError::Config(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Parses, runs and persists one scenario file. Returns the exit code.
pub fn run_file(path: &Path, out_dir: Option<&Path>, opts: RunOptions) -> i32 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return exit::CONFIG;
        }
    };
    run_text(&text, &path.display().to_string(), out_dir, opts)
}

pub fn run_text(text: &str, label: &str, out_dir: Option<&Path>, opts: RunOptions) -> i32 {
    let config = match parse(text) {
        Ok(c) => c,
        Err(diags) => {
            for d in diags {
                eprintln!("{label}:{d}");
            }
            return exit::CONFIG;
        }
    };
    let seed = opts.seed.unwrap_or(config.seed);
    let out = match execute(&config, opts) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{label}: {e}");
            return exit::CONFIG;
        }
    };
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| config.output.clone());
    if let Err(e) = write_artifacts(&dir, &config, &out, seed) {
        eprintln!("{label}: {e}");
        return exit::CONFIG;
    }
    if let Some(r) = &out.reason {
        eprintln!("{label}: {r}");
    }
    out.exit_code(opts.strict)
}

/// Runs every `*.json` scenario in `dir` concurrently, each into its own
/// subdirectory named after the file. Returns the worst exit code.
pub fn run_dir(dir: &Path, out_dir: Option<&Path>, opts: RunOptions) -> i32 {
    let mut files: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect(),
        Err(e) => {
            eprintln!("{}: {e}", dir.display());
            return exit::CONFIG;
        }
    };
    files.sort();
    if files.is_empty() {
        eprintln!("{}: no scenario files", dir.display());
        return exit::CONFIG;
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| {
                s.spawn(move || {
                    let stem = f.file_stem().map(PathBuf::from).unwrap_or_default();
                    let target = match out_dir {
                        Some(o) => o.join(&stem),
                        None => match fs::read_to_string(f).ok().and_then(|t| parse(&t).ok()) {
                            Some(c) => c.output.join(&stem),
                            None => PathBuf::from("out").join(&stem),
                        },
                    };
                    run_file(f, Some(&target), opts)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(exit::FAILED))
            .max()
            .unwrap_or(exit::OK)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scenario_is_valid() {
        assert!(validate(REFERENCE_SCENARIO).is_empty(), "{:?}", validate(REFERENCE_SCENARIO));
        let c = parse(REFERENCE_SCENARIO).unwrap();
        assert_eq!(c.task.name(), "reproduce");
    }

    #[test]
    fn missing_gamma_is_named() {
        let text = r#"{"name":"x","game":{"kind":"osnr","n0":1e-6,"a":[0.5],"beta":[1]},
            "task":{"kind":"certify","alpha":[1]}}"#;
        let d = validate(text);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("gamma"), "{}", d[0]);
        assert!(d[0].line.is_some());
    }

    #[test]
    fn nonpositive_epsilon_is_flagged() {
        let text = REFERENCE_SCENARIO.replace("\"epsilon\": 0.01", "\"epsilon\": 0.0");
        let d = validate(&text);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].field, "task.loop.epsilon");
        assert!(d[0].line.is_some());
    }

    #[test]
    fn unknown_task_is_a_diagnostic() {
        let text = r#"{"name":"x","game":{"kind":"separable","beta":[3],"k":[1]},"task":{"kind":"bogus"}}"#;
        let d = validate(text);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("bogus"));
    }

    #[test]
    fn zero_sensitivity_design_is_infeasible() {
        let text = r#"{"name":"q","game":{"kind":"opaque","linear":[1],"coupling":[[1]],
            "pricing":"quadratic","lower":[0],"upper":[1]},"task":{"kind":"design","target":[0]}}"#;
        let c = parse(text).unwrap();
        let out = execute(&c, RunOptions::default()).unwrap();
        assert_eq!(out.status, Status::Infeasible);
        assert_eq!(out.exit_code(false), exit::FAILED);
        assert!(out.reason.unwrap().contains("zero pricing sensitivity"));
    }
}
