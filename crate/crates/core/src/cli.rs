//! Command-line pipeline.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::abstraction::ModelKind;
use crate::closedloop::{inter_sample_excursion, refine_and_run, safety_monitor, MonitorViolation};
use crate::config::{Precision, ProblemConfig};
use crate::dynamics::ModeId;
use crate::error::{Error, Result};
use crate::export::{load_transition_system, write_abstraction_dir, write_json, write_relation_csv, ModelMeta};
use crate::lyapunov::{min_dwell_time, CERT_TOL};
use crate::synthesis::{classification_map, dwell_projection_map, maximal_safety_controller, ClassGrid, SafetyController};
use crate::transys::{max_approx_bisim, relates_initials};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_EMPTY_CONTROLLER: i32 = 3;
pub const EXIT_MONITOR: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "symswitch", version, about = "Symbolic models and safety controllers for switched affine systems")]
pub struct Cli {
    /// Problem description (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for abstraction and synthesis (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Overrides the lattice parameter from the config.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Overrides the target precision from the config.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the Lyapunov certificate against every mode.
    Verify,
    /// Compute the largest eta for epsilon, or the epsilon reached by eta.
    Budget,
    /// Build the symbolic model and write it to --out.
    Abstract,
    /// Synthesize the maximal safety controller.
    Synthesize,
    /// Run the lazy closed loop from the configured initial state.
    Simulate {
        /// Controller JSON from `synthesize` (re-synthesized when absent).
        #[arg(long)]
        controller: Option<PathBuf>,
    },
    /// Decide approximate bisimilarity of two finite systems.
    CheckBisim {
        /// Abstraction directory or transition-system JSON.
        first: PathBuf,
        /// Abstraction directory or transition-system JSON.
        second: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::RelationViolation { .. } => EXIT_FAILURE,
        _ => EXIT_INVALID,
    }
}

/// Runs one command, writing the human-readable report to `out`, and returns
/// the process exit status.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    pool.install(|| dispatch(cli, out))
}

fn dispatch(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<i32> {
    if let Command::CheckBisim { first, second } = &cli.command {
        return cmd_check_bisim(first, second, cli.epsilon, cli.out.as_deref(), out);
    }
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = ProblemConfig::load(path)?;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
    }
    let ctx = Ctx {
        cfg: &cfg,
        out_dir: cli.out.as_deref(),
        eta: cli.eta,
        epsilon: cli.epsilon,
    };
    match &cli.command {
        Command::Verify => cmd_verify(&ctx, out),
        Command::Budget => cmd_budget(&ctx, out),
        Command::Abstract => cmd_abstract(&ctx, out),
        Command::Synthesize => cmd_synthesize(&ctx, out),
        Command::Simulate { controller } => cmd_simulate(&ctx, controller.as_deref(), out),
        Command::CheckBisim { .. } => unreachable!(),
    }
}

struct Ctx<'a> {
    cfg: &'a ProblemConfig,
    out_dir: Option<&'a Path>,
    eta: Option<f64>,
    epsilon: Option<f64>,
}

impl Ctx<'_> {
    fn precision(&self) -> Result<Precision> {
        self.cfg.resolve_precision(self.eta, self.epsilon)
    }

    fn require_out(&self) -> Result<&Path> {
        self.out_dir.ok_or_else(|| Error::Config("--out is required for this command".into()))
    }

    fn report<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if let Some(dir) = self.out_dir {
            write_json(value, &dir.join(name))?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct ModeReport {
    mode: usize,
    passed: bool,
    margin: f64,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    passed: bool,
    modes: Vec<ModeReport>,
    kappa: f64,
    a_lower: f64,
    a_upper: f64,
    gamma: f64,
    mu: f64,
    min_dwell_time: f64,
    tau_d: Option<f64>,
    dwell_ok: Option<bool>,
}

fn cmd_verify(ctx: &Ctx, out: &mut dyn Write) -> Result<i32> {
    let system = ctx.cfg.system()?;
    let cert = ctx.cfg.certificate()?;
    let checks = cert.verify(&system)?;
    let chars = cert.characteristics();
    let bound = min_dwell_time(cert.mu(), cert.kappa());
    let tau_d = ctx.cfg.dwell.as_ref().map(|d| d.tau_d);
    let dwell_ok = tau_d.map(|t| t > bound);
    for (i, c) in checks.iter().enumerate() {
        writeln!(
            out,
            "mode {}: {} (max eigenvalue {:.3e}, tolerance {CERT_TOL:e})",
            i + 1,
            if c.passed { "pass" } else { "FAIL" },
            c.margin
        )?;
    }
    writeln!(out, "kappa = {}", cert.kappa())?;
    writeln!(out, "a_lower = {:.6}  a_upper = {:.6}  gamma = {:.6}", chars.a_lower, chars.a_upper, chars.g)?;
    writeln!(out, "mu = {:.12}", cert.mu())?;
    writeln!(out, "minimum dwell time ln(mu)/kappa = {bound:.6}")?;
    if let (Some(t), Some(ok)) = (tau_d, dwell_ok) {
        writeln!(out, "tau_d = {t}: {}", if ok { "exceeds the bound" } else { "TOO SMALL" })?;
    }
    let passed = checks.iter().all(|c| c.passed) && dwell_ok.unwrap_or(true);
    writeln!(out, "verdict: {}", if passed { "pass" } else { "fail" })?;
    ctx.report(
        "verify.json",
        &VerifyReport {
            passed,
            modes: checks
                .iter()
                .enumerate()
                .map(|(i, c)| ModeReport {
                    mode: i + 1,
                    passed: c.passed,
                    margin: c.margin,
                })
                .collect(),
            kappa: cert.kappa(),
            a_lower: chars.a_lower,
            a_upper: chars.a_upper,
            gamma: chars.g,
            mu: cert.mu(),
            min_dwell_time: bound,
            tau_d,
            dwell_ok,
        },
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_INVALID })
}

fn cmd_budget(ctx: &Ctx, out: &mut dyn Write) -> Result<i32> {
    let p = ctx.precision()?;
    writeln!(out, "epsilon = {}", p.epsilon)?;
    writeln!(out, "eta = {}", p.eta)?;
    writeln!(out, "eta_max(epsilon) = {}", p.eta_max)?;
    writeln!(out, "epsilon/eta_max = {:.4}", p.epsilon / p.eta_max)?;
    ctx.report("budget.json", &p)?;
    Ok(EXIT_OK)
}

fn cmd_abstract(ctx: &Ctx, out: &mut dyn Write) -> Result<i32> {
    let dir = ctx.require_out()?;
    let p = ctx.precision()?;
    let start = Instant::now();
    let model = ctx.cfg.build_model(p.eta)?;
    let built = start.elapsed();
    let meta = write_abstraction_dir(&model, dir)?;
    print_meta(&meta, out)?;
    writeln!(out, "build time: {:.2}s", built.as_secs_f64())?;
    Ok(EXIT_OK)
}

fn print_meta(meta: &ModelMeta, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "states: {}", meta.states)?;
    writeln!(out, "transitions: {}", meta.transitions)?;
    writeln!(
        out,
        "successors per pair: min {} max {} mean {:.3}",
        meta.min_degree, meta.max_degree, meta.mean_degree
    )?;
    writeln!(out, "pairs leaving the region: {}", meta.exit_pairs)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthesisReport {
    states: usize,
    controllable: usize,
    eta: f64,
    epsilon: f64,
    build_seconds: f64,
    synthesis_seconds: f64,
    classes: Vec<(String, Vec<(String, usize)>)>,
}

fn class_counts(grid: &ClassGrid) -> Vec<(String, usize)> {
    let mut classes = grid.distinct();
    classes.sort_by_key(|c| c.to_string());
    classes.into_iter().map(|c| (c.to_string(), grid.count(c))).collect()
}

/// Class grids written by `synthesize`: one for common models, one per
/// current mode (dwell elapsed) for dwell models.
fn class_grids(model: &crate::abstraction::SymbolicModel, ctrl: &SafetyController) -> Vec<(String, ClassGrid)> {
    match model.kind() {
        ModelKind::Common => vec![("classes.csv".into(), classification_map(model, ctrl))],
        ModelKind::Dwell { steps } => (0..model.mode_count())
            .map(|p| {
                let m = ModeId::from_zero_based(p);
                (format!("classes_mode{m}.csv"), dwell_projection_map(model, ctrl, m, steps - 1))
            })
            .collect(),
    }
}

fn cmd_synthesize(ctx: &Ctx, out: &mut dyn Write) -> Result<i32> {
    let dir = ctx.require_out()?;
    let p = ctx.precision()?;
    let spec = ctx.cfg.safety_spec()?;
    let start = Instant::now();
    let model = ctx.cfg.build_model(p.eta)?;
    let built = start.elapsed();
    let start = Instant::now();
    let ctrl = maximal_safety_controller(&model, &spec);
    let synthesized = start.elapsed();
    ctrl.write_json(File::create(dir.join("controller.json"))?)?;
    let mut classes = Vec::new();
    for (name, grid) in class_grids(&model, &ctrl) {
        grid.write_csv(File::create(dir.join(&name))?)?;
        let counts = class_counts(&grid);
        let line: Vec<String> = counts.iter().map(|(c, n)| format!("{c} {n}")).collect();
        writeln!(out, "{name}: {}", line.join(", "))?;
        classes.push((name, counts));
    }
    writeln!(out, "states: {}", model.state_count())?;
    writeln!(out, "controllable: {}", ctrl.domain_size())?;
    writeln!(
        out,
        "build: {:.2}s  synthesis: {:.2}s",
        built.as_secs_f64(),
        synthesized.as_secs_f64()
    )?;
    ctx.report(
        "synthesis.json",
        &SynthesisReport {
            states: model.state_count(),
            controllable: ctrl.domain_size(),
            eta: p.eta,
            epsilon: p.epsilon,
            build_seconds: built.as_secs_f64(),
            synthesis_seconds: synthesized.as_secs_f64(),
            classes,
        },
    )?;
    if ctrl.is_empty() {
        writeln!(out, "controller is empty")?;
        return Ok(EXIT_EMPTY_CONTROLLER);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct SimulationReport {
    passed: bool,
    samples: usize,
    epsilon: f64,
    violation: Option<String>,
    max_value_over_level: f64,
    switches: usize,
    min_switch_gap: Option<usize>,
    inter_sample_keep_excess: f64,
    inter_sample_avoid_hits: usize,
}

fn cmd_simulate(ctx: &Ctx, controller: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let dir = ctx.require_out()?;
    let sim = ctx
        .cfg
        .simulation
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs a simulation section".into()))?;
    let p = ctx.precision()?;
    let system = ctx.cfg.system()?;
    let spec = ctx.cfg.safety_spec()?;
    let model = ctx.cfg.build_model(p.eta)?;
    let ctrl = match controller {
        Some(path) => SafetyController::read_json(File::open(path)?, model.state_count(), model.mode_count())?,
        None => maximal_safety_controller(&model, &spec),
    };
    if ctrl.is_empty() {
        writeln!(out, "controller is empty")?;
        return Ok(EXIT_EMPTY_CONTROLLER);
    }
    let rc = ctx.cfg.relation_certificate(&model, &p)?;
    let trace = refine_and_run(&system, &model, &ctrl, &rc, &sim.x0, sim.horizon, ctx.cfg.initial_mode()?)?;
    trace.write_csv(File::create(dir.join("trace.csv"))?)?;
    let monitor = safety_monitor(&trace, &spec, p.epsilon);
    let dense = inter_sample_excursion(&system, &trace, &spec, p.epsilon, 20)?;
    let ratio = trace
        .values
        .iter()
        .zip(&trace.levels)
        .map(|(v, l)| if *l > 0.0 { v / l } else { 0.0 })
        .fold(0.0, f64::max);
    let gaps = trace.switch_gaps();
    let violation = monitor.violation.as_ref().map(|v| match v {
        MonitorViolation::LeftKeep { step, x } => format!("step {step}: {x:?} left the keep set"),
        MonitorViolation::EnteredAvoid { step, x } => format!("step {step}: {x:?} entered the avoid set"),
    });
    writeln!(out, "samples: {}", trace.len())?;
    writeln!(out, "max V/level: {ratio:.6}")?;
    writeln!(out, "switches: {}", trace.switch_times().len())?;
    if let Some(g) = gaps.iter().min() {
        writeln!(out, "shortest gap between switches: {g} samples")?;
    }
    writeln!(
        out,
        "inter-sample (informative): keep excess {:.3e}, avoid hits {}",
        dense.max_keep_excess.max(0.0),
        dense.avoid_hits
    )?;
    match &violation {
        None => writeln!(out, "monitor: pass")?,
        Some(v) => writeln!(out, "monitor: FAIL, {v}")?,
    }
    ctx.report(
        "simulation.json",
        &SimulationReport {
            passed: monitor.passed(),
            samples: trace.len(),
            epsilon: p.epsilon,
            violation,
            max_value_over_level: ratio,
            switches: trace.switch_times().len(),
            min_switch_gap: gaps.iter().min().copied(),
            inter_sample_keep_excess: dense.max_keep_excess.max(0.0),
            inter_sample_avoid_hits: dense.avoid_hits,
        },
    )?;
    Ok(if monitor.passed() { EXIT_OK } else { EXIT_MONITOR })
}

fn cmd_check_bisim(first: &Path, second: &Path, epsilon: Option<f64>, out_dir: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let epsilon = epsilon.ok_or_else(|| Error::Config("check-bisim needs --epsilon".into()))?;
    let t1 = load_transition_system(first)?;
    let t2 = load_transition_system(second)?;
    let rel = max_approx_bisim(&t1, &t2, epsilon)?;
    let verdict = relates_initials(&t1, &t2, &rel);
    writeln!(out, "states: {} vs {}", t1.state_count(), t2.state_count())?;
    writeln!(out, "maximal relation: {} pairs", rel.len())?;
    writeln!(out, "{}", if verdict { "bisimilar" } else { "not bisimilar" })?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_relation_csv(&rel, File::create(dir.join("relation.csv"))?)?;
    }
    Ok(if verdict { EXIT_OK } else { EXIT_INVALID })
}
