//! Run orchestration: load a config, integrate, refine and certify steady
//! states, and leave a self-describing output directory behind.
//!
//! Every run writes `trajectory.csv` (one diagnostics row per accepted
//! state), a final-state snapshot, and `report.json`. Runs that reach a
//! steady state also carry a Newton-refined snapshot and a two-grid
//! certificate. A run that dies (step-size floor, mass underflow) still
//! writes the trajectory up to the failure, the offending state, and a
//! report with the error, so post-mortems need nothing but the directory.
//!
//! Exit codes: 0 for a completed run (whatever the termination), 2 for a
//! flow failure (the report is still written), 3 for configuration errors.

pub mod config;
pub mod expr;

use crate::flow::{self, Termination, TrajectoryRow};
use crate::functionals::FlowState;
use crate::snapshot::{self, SnapshotError};
use crate::steady::{self, CertifyReport, NewtonOutcome};
use config::Loaded;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("{0}")]
    Setup(String),
}

/// Everything a run produced, before any of it touches disk.
pub struct RunOutcome {
    pub rows: Vec<TrajectoryRow>,
    /// Last accepted state (the initial state if nothing was accepted).
    pub final_state: FlowState,
    /// None when the run failed before terminating.
    pub termination: Option<Termination>,
    pub accepted_steps: u64,
    pub rejections: u64,
    pub failure: Option<FailureInfo>,
    /// Attempted only on steady termination.
    pub newton: Option<Result<NewtonOutcome, String>>,
    pub certificate: Option<Result<CertifyReport, String>>,
    pub entropy_slack: f64,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FailureInfo {
    pub kind: &'static str,
    pub message: String,
    pub tau: f64,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failure.is_some() {
            2
        } else {
            0
        }
    }
}

/// Integrate the configured flow; on steady termination refine the endpoint
/// and certify the refined state. Setup-grade integrator complaints (they
/// mean the config was wrong) surface as errors; dynamical failures are data
/// in the outcome.
pub fn compute_run(loaded: &Loaded) -> Result<RunOutcome, HarnessError> {
    let start = Instant::now();
    let evolved = flow::evolve(&loaded.u0, &loaded.prob, &loaded.step);
    let mut outcome = match evolved {
        Ok((state, record)) => RunOutcome {
            rows: record.rows,
            final_state: state,
            termination: Some(record.termination),
            accepted_steps: record.accepted_steps,
            rejections: record.rejections,
            failure: None,
            newton: None,
            certificate: None,
            entropy_slack: loaded.step.entropy_slack,
            runtime_seconds: 0.0,
        },
        Err(err) => {
            let kind = match &err {
                flow::FlowError::StepFloor(_) => "step_floor",
                flow::FlowError::Breakdown(_) => "breakdown",
                other => return Err(HarnessError::Setup(other.to_string())),
            };
            let message = err.to_string();
            let failure = match err {
                flow::FlowError::StepFloor(f) | flow::FlowError::Breakdown(f) => f,
                _ => unreachable!(),
            };
            let accepted = failure.rows.len().saturating_sub(1) as u64;
            RunOutcome {
                rows: failure.rows,
                final_state: failure.state,
                termination: None,
                accepted_steps: accepted,
                rejections: failure.rejections,
                failure: Some(FailureInfo {
                    kind,
                    message,
                    tau: failure.tau,
                }),
                newton: None,
                certificate: None,
                entropy_slack: loaded.step.entropy_slack,
                runtime_seconds: 0.0,
            }
        }
    };

    if outcome.termination == Some(Termination::Steady) {
        let refined =
            steady::newton_refine(&outcome.final_state, &loaded.prob, &loaded.newton)
                .map_err(|e| e.to_string());
        if let Ok(out) = &refined {
            outcome.certificate = Some(
                steady::certify(&out.state, &loaded.prob, loaded.certify_tol)
                    .map_err(|e| e.to_string()),
            );
        }
        outcome.newton = Some(refined);
    }

    outcome.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(outcome)
}

fn trajectory_header(n: usize) -> String {
    let mut cols = vec![
        "t".to_string(),
        "tau".into(),
        "K".into(),
        "dissipation".into(),
        "grad_energy".into(),
        "residual_L2".into(),
        "residual_Linf".into(),
        "entropy_gap".into(),
        "mt_deficit_max".into(),
    ];
    for j in 1..=n {
        cols.push(format!("sup_norm_{j}"));
    }
    for j in 1..=n {
        cols.push(format!("mean_{j}"));
    }
    cols.join(",")
}

fn write_trajectory(path: &Path, rows: &[TrajectoryRow], n: usize) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# entroflow-trajectory-v1")?;
    writeln!(w, "{}", trajectory_header(n))?;
    for row in rows {
        write!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            row.t,
            row.tau,
            row.k,
            row.dissipation,
            row.grad_energy,
            row.residual_l2,
            row.residual_linf,
            row.entropy_gap,
            row.mt_deficit_max
        )?;
        for v in &row.sup_norms {
            write!(w, ",{v:.16e}")?;
        }
        for v in &row.means {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Re-read a trajectory file and check its entropy column never rises by
/// more than the slack: catches both integrator regressions and mangled
/// serialization in one go.
fn revalidate_trajectory(path: &Path, slack: f64) -> Result<(usize, bool), HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != "# entroflow-trajectory-v1" {
        return Ok((0, false));
    }
    let _header = lines.next();
    let mut ks = Vec::new();
    for line in lines {
        let k: f64 = match line.split(',').nth(2).and_then(|s| s.parse().ok()) {
            Some(v) => v,
            None => return Ok((ks.len(), false)),
        };
        ks.push(k);
    }
    let ok = ks.windows(2).all(|w| w[1] <= w[0] + slack);
    Ok((ks.len(), ok))
}

fn newton_json(newton: &Option<Result<NewtonOutcome, String>>) -> Value {
    match newton {
        None => Value::Null,
        Some(Err(e)) => json!({ "error": e }),
        Some(Ok(out)) => {
            let last = out.history.last();
            json!({
                "iterations": out.iterations,
                "converged": out.converged,
                "residual_l2": last.map(|r| r.res_l2),
                "residual_linf": last.map(|r| r.res_linf),
                "dampings": out.history.iter().map(|r| r.damping).collect::<Vec<_>>(),
            })
        }
    }
}

fn certificate_json(cert: &Option<Result<CertifyReport, String>>) -> Value {
    match cert {
        None => Value::Null,
        Some(Err(e)) => json!({ "error": e }),
        Some(Ok(rep)) => serde_json::to_value(rep).unwrap_or(Value::Null),
    }
}

/// Write trajectory, snapshots, and report into `out_dir` (created if
/// needed); returns the report that was written.
pub fn write_outputs(outcome: &RunOutcome, out_dir: &Path) -> Result<Value, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let n = outcome.final_state.n();

    let traj = out_dir.join("trajectory.csv");
    write_trajectory(&traj, &outcome.rows, n)?;
    let (csv_rows, k_nonincreasing) = revalidate_trajectory(&traj, outcome.entropy_slack)?;

    let state_name = if outcome.failure.is_some() {
        "state_failed.bin"
    } else {
        "state_final.bin"
    };
    snapshot::write_binary(&out_dir.join(state_name), &outcome.final_state)?;
    snapshot::write_csv(
        &out_dir.join(state_name.replace(".bin", ".csv")),
        &outcome.final_state,
    )?;

    let mut outputs = json!({
        "trajectory": "trajectory.csv",
        "state": state_name,
    });
    if let Some(Ok(newton)) = &outcome.newton {
        snapshot::write_binary(&out_dir.join("state_refined.bin"), &newton.state)?;
        outputs["refined_state"] = json!("state_refined.bin");
    }

    let first = outcome.rows.first();
    let last = outcome.rows.last();
    let k0 = first.map(|r| r.k);
    let kf = last.map(|r| r.k);
    let taus: Vec<f64> = outcome.rows.iter().skip(1).map(|r| r.tau).collect();
    let gap_min = outcome
        .rows
        .iter()
        .map(|r| r.entropy_gap)
        .fold(f64::INFINITY, f64::min);
    let deficit_max = outcome
        .rows
        .iter()
        .map(|r| r.mt_deficit_max)
        .fold(f64::NEG_INFINITY, f64::max);

    let report = json!({
        "schema": "entroflow-report-v1",
        "grid": {
            "dim": outcome.final_state.grid().dim(),
            "n": outcome.final_state.grid().n(),
        },
        "components": n,
        "termination": outcome.termination,
        "accepted_steps": outcome.accepted_steps,
        "rejections": outcome.rejections,
        "runtime_seconds": outcome.runtime_seconds,
        "entropy": {
            "initial": k0,
            "final": kf,
            "drop": match (k0, kf) { (Some(a), Some(b)) => json!(a - b), _ => Value::Null },
            "slack": outcome.entropy_slack,
        },
        "tau": {
            "min": taus.iter().cloned().fold(f64::INFINITY, f64::min),
            "max": taus.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        },
        "residual_final": {
            "l2": last.map(|r| r.residual_l2),
            "linf": last.map(|r| r.residual_linf),
        },
        "entropy_gap_min": gap_min,
        "mt_deficit_run_max": deficit_max,
        "trajectory_check": {
            "rows": csv_rows,
            "entropy_nonincreasing": k_nonincreasing,
        },
        "error": outcome.failure.as_ref().map(|f| json!({
            "kind": f.kind,
            "message": f.message,
            "t": outcome.final_state.t,
            "tau": f.tau,
        })),
        "newton": newton_json(&outcome.newton),
        "certification": certificate_json(&outcome.certificate),
        "outputs": outputs,
    });

    let mut w = BufWriter::new(File::create(out_dir.join("report.json"))?);
    serde_json::to_writer_pretty(&mut w, &report).map_err(std::io::Error::other)?;
    w.flush()?;
    Ok(report)
}

/// Compute and write in one call.
pub fn run_to_dir(loaded: &Loaded, out_dir: &Path) -> Result<(RunOutcome, Value), HarnessError> {
    let outcome = compute_run(loaded)?;
    let report = write_outputs(&outcome, out_dir)?;
    Ok((outcome, report))
}

/// Set `spec` ("dotted.path=value") inside a JSON tree; values parse as JSON
/// when they can and fall back to strings, so `--override h.0=1` and
/// `--override matrix=cartan` both do the expected thing.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override '{spec}' is not KEY=VALUE"))?;
    if path.is_empty() {
        return Err(format!("override '{spec}' has an empty key"));
    }
    let parsed: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = path.split('.').collect();
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if last {
            match node {
                Value::Object(map) => {
                    map.insert(part.to_string(), parsed);
                    return Ok(());
                }
                Value::Array(arr) => {
                    let idx: usize = part
                        .parse()
                        .map_err(|_| format!("'{part}' is not an array index"))?;
                    if idx >= arr.len() {
                        return Err(format!("index {idx} is out of bounds in '{path}'"));
                    }
                    arr[idx] = parsed;
                    return Ok(());
                }
                _ => return Err(format!("'{path}' does not reach into an object or array")),
            }
        }
        node = match node {
            Value::Object(map) => map
                .entry(part.to_string())
                .or_insert_with(|| json!({})),
            Value::Array(arr) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| format!("'{part}' is not an array index"))?;
                arr.get_mut(idx)
                    .ok_or_else(|| format!("index {idx} is out of bounds in '{path}'"))?
            }
            _ => return Err(format!("'{path}' does not reach into an object or array")),
        };
    }
    unreachable!("paths are nonempty");
}

// ---------------------------------------------------------------------------
// Command-line interface.

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "entroflow",
    version,
    about = "Entropy-monotone flows for coupled exponential elliptic systems on the flat torus"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a configured flow and write trajectory, snapshots, report
    Run {
        /// JSON config file
        config: PathBuf,
        /// Output directory (overrides the config's out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-path config override, e.g. --override step.t_end=1.0
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a snapshot against a config on its grid and the doubled grid
    Certify {
        /// State snapshot (.bin) to check
        snapshot: PathBuf,
        /// JSON config describing the problem the snapshot should solve
        config: PathBuf,
        /// Residual sup-norm tolerance (default: the config's certify_tol)
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Run several configs back to back (ENTROFLOW_WORKERS=k to parallelize)
    Sweep {
        /// JSON config files
        configs: Vec<PathBuf>,
    },
}

fn load_json_file(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn default_out_dir(config: &Path) -> PathBuf {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    config.with_file_name(format!("{stem}_out"))
}

/// Run one config file; returns the exit code and a one-line summary.
fn run_config_file(
    config_path: &Path,
    out_flag: Option<&Path>,
    overrides: &[String],
) -> (i32, String) {
    let name = config_path.display();
    let mut value = match load_json_file(config_path) {
        Ok(v) => v,
        Err(e) => return (3, format!("{name} => config error: {e}")),
    };
    for spec in overrides {
        if let Err(e) = apply_override(&mut value, spec) {
            return (3, format!("{name} => config error: {e}"));
        }
    }
    let loaded = match config::load_value(&value) {
        Ok(l) => l,
        Err(e) => return (3, format!("{name} => config error: {e}")),
    };
    let out_dir = out_flag
        .map(Path::to_path_buf)
        .or_else(|| loaded.out_dir.clone())
        .unwrap_or_else(|| default_out_dir(config_path));

    match run_to_dir(&loaded, &out_dir) {
        Ok((outcome, report)) => {
            let line = match &outcome.failure {
                Some(f) => format!(
                    "{name} => FAILED ({}) after {} steps; report in {}",
                    f.kind,
                    outcome.accepted_steps,
                    out_dir.display()
                ),
                None => {
                    let term = match outcome.termination {
                        Some(Termination::Steady) => "steady",
                        Some(Termination::TEnd) => "t_end",
                        Some(Termination::MaxSteps) => "max_steps",
                        None => "?",
                    };
                    let certified = match &outcome.certificate {
                        Some(Ok(c)) if c.pass => ", certified",
                        Some(_) => ", certification failed",
                        None => "",
                    };
                    format!(
                        "{name} => {term} after {} steps, K {:.6e} -> {:.6e}{certified}; outputs in {}",
                        outcome.accepted_steps,
                        report["entropy"]["initial"].as_f64().unwrap_or(f64::NAN),
                        report["entropy"]["final"].as_f64().unwrap_or(f64::NAN),
                        out_dir.display()
                    )
                }
            };
            (outcome.exit_code(), line)
        }
        Err(HarnessError::Setup(msg)) => (3, format!("{name} => config error: {msg}")),
        Err(e) => (2, format!("{name} => io error: {e}")),
    }
}

fn certify_command(snapshot_path: &Path, config_path: &Path, tol: Option<f64>) -> i32 {
    let value = match load_json_file(config_path) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e}");
            return 3;
        }
    };
    let loaded = match config::load_value(&value) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e}");
            return 3;
        }
    };
    let state = match snapshot::read_binary(snapshot_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot read snapshot {}: {e}", snapshot_path.display());
            return 3;
        }
    };
    if state.grid() != loaded.prob.grid() || state.n() != loaded.prob.n() {
        eprintln!(
            "snapshot shape (dim {}, n {}, {} fields) does not match the config (dim {}, n {}, {} fields)",
            state.grid().dim(),
            state.grid().n(),
            state.n(),
            loaded.prob.grid().dim(),
            loaded.prob.grid().n(),
            loaded.prob.n()
        );
        return 3;
    }
    match steady::certify(&state, &loaded.prob, tol.unwrap_or(loaded.certify_tol)) {
        Ok(rep) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&rep).unwrap_or_else(|_| "{}".into())
            );
            if rep.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("certification error: {e}");
            3
        }
    }
}

fn sweep_command(configs: &[PathBuf]) -> i32 {
    if configs.is_empty() {
        eprintln!("sweep needs at least one config");
        return 3;
    }
    let workers: usize = std::env::var("ENTROFLOW_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&w| w >= 1)
        .unwrap_or(1)
        .min(configs.len());

    let results: Vec<(i32, String)> = if workers == 1 {
        configs
            .iter()
            .map(|c| run_config_file(c, None, &[]))
            .collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<(i32, String)>>> =
            configs.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= configs.len() {
                        break;
                    }
                    let res = run_config_file(&configs[i], None, &[]);
                    *slots[i].lock().unwrap() = Some(res);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("worker filled every slot"))
            .collect()
    };

    let mut worst = 0;
    for (code, line) in &results {
        println!("{line}");
        worst = worst.max(*code);
    }
    worst
}

/// Entry point for the binary; returns the process exit code.
pub fn cli_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match cli.cmd {
        Cmd::Run {
            config,
            out,
            overrides,
        } => {
            let (code, line) = run_config_file(&config, out.as_deref(), &overrides);
            if code == 3 {
                eprintln!("{line}");
            } else {
                println!("{line}");
            }
            code
        }
        Cmd::Certify {
            snapshot,
            config,
            tol,
        } => certify_command(&snapshot, &config, tol),
        Cmd::Sweep { configs } => sweep_command(&configs),
    }
}
