//! `ezc`: solve, tabulate, simulate, verify and sweep the consumption-floor
//! problem as reproducible batch runs.
//!
//! Exit codes: 0 success, 1 verification failed, 2 invalid input,
//! 3 solver did not converge, 4 artifact integrity, 5 I/O.

mod artifacts;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ezc_core::dualsolver::{solve, DualSolution, SolverConfig, SolverError};
use ezc_core::io::{json, num, policy_csv, solution_csv, summary_csv, PolicyMeta, SolutionMeta};
use ezc_core::params::{derive, validate, InflationTransform, ParamsDocument};
use ezc_core::policy::{build_table, critical_wealth, PolicyTable};
use ezc_core::simulate::{dynkin_check, simulate_wealth, SimConfig};
use ezc_core::verify::{run_suite, Status, VerificationReport, VerifyConfig};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::artifacts::*;
use crate::config::{model_of, sweep_points, with_overrides, RunConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("solver did not converge: {0}")]
    Convergence(String),
    #[error("artifact integrity: {0}")]
    Integrity(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Convergence(_) => 3,
            CliError::Integrity(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ezc", version, about = "Consumption-floor portfolio choice under Epstein-Zin utility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the dual free-boundary problem: solution.csv, solution.meta.json, manifest.json.
    Solve(Common),
    /// Tabulate value and controls on a wealth grid: policy.csv, policy.meta.json.
    Policy(Common),
    /// Simulate optimal wealth paths: paths_summary.csv, dynkin.json.
    Simulate(Common),
    /// Run the verification suite: verification.json; exit 1 on any failed check.
    Verify(Common),
    /// Solve a grid of parameter points: sweep.csv.
    Sweep(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Wealth-grid intervals of the policy table.
    #[arg(long = "n-x")]
    n_x: Option<usize>,
    /// Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Monte Carlo time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Monte Carlo horizon.
    #[arg(long)]
    horizon: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EZC_LOG", "warn")).init();
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Solve(c) | Command::Policy(c) | Command::Simulate(c) | Command::Verify(c) | Command::Sweep(c) => c,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(common.jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("ezc: cannot start worker threads: {e}");
            return ExitCode::from(5);
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Policy(c) => cmd_policy(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::Verify(c) => cmd_verify(c),
        Command::Sweep(c) => cmd_sweep(c),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ezc: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    RunConfig::parse(&text)
}

/// Validates and solves one model document.
fn solve_model(doc: &ParamsDocument, solver: &SolverConfig) -> Result<(DualSolution, Option<InflationTransform>), CliError> {
    let (p, inflation) = model_of(doc);
    let report = validate(&p);
    if !report.well_posed {
        let mut msg = format!("parameters violate {}", report.describe_failures());
        if report.failed_conditions.iter().any(|c| c.name.starts_with("nu_")) {
            msg += "; well-posedness requires 0 < nu = (1-R)/(1-S) < 1";
        }
        if inflation.is_some_and(|t| t.flags.rate_nonpositive) {
            msg += "; with beta the solved rate is r - beta, which must be positive";
        }
        return Err(CliError::Validation(msg));
    }
    if !(p.a > 0.0) {
        return Err(CliError::Validation("the floor solver needs a > 0 (a = 0 is the closed-form benchmark)".into()));
    }
    let k = derive(&p).map_err(|e| CliError::Validation(e.to_string()))?;
    solve(&p, &k, solver).map(|s| (s, inflation)).map_err(|e| match e {
        SolverError::ConditionNotApplicable(_) | SolverError::InvalidConfig(_) => CliError::Validation(e.to_string()),
        _ => CliError::Convergence(e.to_string()),
    })
}

/// Attaches the inflation label to a sidecar.
fn labelled<T: Serialize>(meta: &T, inflation: &Option<InflationTransform>) -> String {
    let mut v = serde_json::to_value(meta).expect("serialisable");
    if let (Some(t), Value::Object(map)) = (inflation, &mut v) {
        map.insert(
            "inflation".into(),
            json!({
                "beta": t.beta,
                "original": t.original,
                "transformed": t.transformed,
                "flags": t.flags,
                "rescaling": "tables are in the transformed problem; at time t use x_t = e^{beta t} x, c_t = e^{beta t} c_star(x), alpha_t = e^{beta t} x pi_star(x)",
            }),
        );
    }
    json(&v)
}

fn flags_of(sol: &DualSolution, inflation: &Option<InflationTransform>) -> Vec<String> {
    let mut flags = sol.assumption_flags.clone();
    if inflation.is_some_and(|t| t.flags.negative_beta) {
        flags.push("negative_beta".into());
    }
    flags
}

struct Run {
    dir: RunDir,
    cfg: RunConfig,
    sol: DualSolution,
    inflation: Option<InflationTransform>,
    manifest: RunManifest,
}

/// Solves `cfg` into `dir`, replacing any previous run there.
fn solve_into(dir: RunDir, cfg: RunConfig) -> Result<Run, CliError> {
    let started = now();
    let (sol, inflation) = solve_model(&cfg.model, &cfg.solver)?;
    info!("solved: z_hat = {:e}, residual {:e}", sol.zhat, sol.residual_sup);
    let manifest = RunManifest {
        tool: "ezc".into(),
        version: VERSION.into(),
        config_digest: cfg.digest(),
        seed: None,
        timestamps: Timestamps { started, finished: started },
        files: Default::default(),
        assumption_flags: flags_of(&sol, &inflation),
    };
    let outputs = [
        (CONFIG, json(&cfg.document)),
        (SOLUTION, solution_csv(&sol)),
        (SOLUTION_META, labelled(&SolutionMeta::of(&sol), &inflation)),
    ];
    let manifest = dir.commit(manifest, &outputs)?;
    Ok(Run { dir, cfg, sol, inflation, manifest })
}

/// Opens the run in `--out`, re-solving from the recorded config and checking
/// that nothing on disk has drifted. Without a run, `--config` starts one.
fn open_run(c: &Common) -> Result<Run, CliError> {
    let dir = RunDir::create(&c.out)?;
    if !dir.exists(MANIFEST) {
        let Some(path) = &c.config else {
            return Err(CliError::Io(format!("no run in {}; pass --config to start one", c.out.display())));
        };
        return solve_into(dir, load_config(path)?);
    }
    let manifest = dir.manifest()?;
    if manifest.version != VERSION {
        return Err(CliError::Integrity(format!("run written by version {}, this is {VERSION}", manifest.version)));
    }
    for needed in [CONFIG, SOLUTION, SOLUTION_META] {
        if !manifest.files.contains_key(needed) {
            return Err(CliError::Integrity(format!("manifest does not list {needed}")));
        }
    }
    dir.check_inventory(&manifest)?;
    let cfg = RunConfig::parse(&dir.read(CONFIG)?)?;
    if cfg.digest() != manifest.config_digest {
        return Err(CliError::Integrity("config.json does not match the manifest digest".into()));
    }
    if let Some(path) = &c.config {
        if load_config(path)?.digest() != manifest.config_digest {
            return Err(CliError::Integrity(format!(
                "{} differs from the config this run was solved with; use a fresh --out",
                path.display()
            )));
        }
    }
    let (sol, inflation) = solve_model(&cfg.model, &cfg.solver)?;
    dir.check_same(SOLUTION, &solution_csv(&sol))?;
    dir.check_same(SOLUTION_META, &labelled(&SolutionMeta::of(&sol), &inflation))?;
    Ok(Run { dir, cfg, sol, inflation, manifest })
}

fn table_of(run: &Run, c: &Common) -> Result<PolicyTable, CliError> {
    let n_x = c.n_x.unwrap_or(run.cfg.n_x);
    build_table(&run.sol, n_x).map_err(|e| CliError::Validation(e.to_string()))
}

fn sim_config(base: SimConfig, c: &Common, table: &PolicyTable) -> Result<SimConfig, CliError> {
    let mut s = base;
    if let Some(v) = c.seed {
        s.seed = v;
    }
    if let Some(v) = c.paths {
        s.n_paths = v;
    }
    if let Some(v) = c.dt {
        s.dt = v;
    }
    if let Some(v) = c.horizon {
        s.horizon = v;
    }
    if !s.x0.is_finite() {
        s.x0 = 2.0 * table.xhat;
    }
    s.check().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(s)
}

fn cmd_solve(c: &Common) -> Result<(), CliError> {
    let Some(path) = &c.config else {
        return Err(CliError::Validation("solve needs --config".into()));
    };
    let cfg = load_config(path)?;
    solve_into(RunDir::create(&c.out)?, cfg).map(|_| ())
}

fn cmd_policy(c: &Common) -> Result<(), CliError> {
    let run = open_run(c)?;
    let table = table_of(&run, c)?;
    info!("policy table: {} rows, x_hat = {:e}", table.len(), table.xhat);
    let outputs = [(POLICY, policy_csv(&table)), (POLICY_META, labelled(&PolicyMeta::of(&table), &run.inflation))];
    run.dir.commit(RunManifest { timestamps: Timestamps { started: now(), finished: 0 }, ..run.manifest }, &outputs)?;
    Ok(())
}

fn cmd_simulate(c: &Common) -> Result<(), CliError> {
    let run = open_run(c)?;
    let table = table_of(&run, c)?;
    let sim = sim_config(run.cfg.simulate, c, &table)?;
    info!("simulating {} paths to T = {} with dt = {}", sim.n_paths, sim.horizon, sim.dt);
    let bundle = simulate_wealth(&table, &sim).map_err(|e| CliError::Validation(e.to_string()))?;
    let dynkin = dynkin_check(&table, &sim).map_err(|e| CliError::Validation(e.to_string()))?;
    let outputs = [(SUMMARY, summary_csv(&bundle.summary())), (DYNKIN, json(&dynkin))];
    let manifest = RunManifest { seed: Some(sim.seed), timestamps: Timestamps { started: now(), finished: 0 }, ..run.manifest };
    run.dir.commit(manifest, &outputs)?;
    Ok(())
}

fn verify_config(base: VerifyConfig, c: &Common, table: &PolicyTable) -> Result<VerifyConfig, CliError> {
    let mut v = base;
    let dynkin = Common { seed: c.seed, ..c.clone() };
    v.dynkin = sim_config(v.dynkin, &dynkin, table)?;
    // the transversality run keeps its own horizon and step
    let trans = Common { seed: c.seed.map(|s| s.wrapping_add(1)), dt: None, horizon: None, ..c.clone() };
    v.transversality = sim_config(v.transversality, &trans, table)?;
    Ok(v)
}

fn cmd_verify(c: &Common) -> Result<(), CliError> {
    let run = open_run(c)?;
    let table = table_of(&run, c)?;
    let cfg = verify_config(run.cfg.verify, c, &table)?;
    let report = run_suite(&run.sol, &table, &cfg);
    let manifest = RunManifest {
        seed: Some(cfg.dynkin.seed),
        timestamps: Timestamps { started: now(), finished: 0 },
        ..run.manifest
    };
    run.dir.commit(manifest, &[(VERIFICATION, json(&report))])?;
    summarise(&report)
}

fn summarise(report: &VerificationReport) -> Result<(), CliError> {
    for chk in report.checks.iter().filter(|c| c.status != Status::Pass) {
        log::warn!("{} {:?}: value {:e}, tolerance {:e} {}", chk.name, chk.status, chk.value, chk.tolerance, chk.detail);
    }
    match report.overall {
        Status::Fail => Err(CliError::VerifyFailed(report.failed().join(", "))),
        _ => Ok(()),
    }
}

/// Outcome of one sweep point.
struct SweepRow {
    model: ParamsDocument,
    seed: u64,
    converged: bool,
    zhat: f64,
    xhat: f64,
    residual_sup: f64,
    overall: String,
    error: String,
}

pub const SWEEP_COLUMNS: [&str; 16] = [
    "index",
    "mu",
    "sigma",
    "r",
    "delta",
    "R",
    "S",
    "a",
    "beta",
    "seed",
    "converged",
    "zhat",
    "xhat",
    "residual_sup",
    "overall",
    "error",
];

fn sweep_point(cfg: &RunConfig, model: ParamsDocument, seed: u64, c: &Common) -> SweepRow {
    let mut row = SweepRow {
        model,
        seed,
        converged: false,
        zhat: f64::NAN,
        xhat: f64::NAN,
        residual_sup: f64::NAN,
        overall: "fail".into(),
        error: String::new(),
    };
    let outcome = (|| -> Result<(), CliError> {
        let (sol, _) = solve_model(&model, &cfg.solver)?;
        row.converged = true;
        row.zhat = sol.zhat;
        row.xhat = critical_wealth(&sol);
        row.residual_sup = sol.residual_sup;
        let table = build_table(&sol, c.n_x.unwrap_or(cfg.n_x)).map_err(|e| CliError::Validation(e.to_string()))?;
        let vc = verify_config(cfg.verify, &Common { seed: Some(seed), ..c.clone() }, &table)?;
        row.overall = match run_suite(&sol, &table, &vc).overall {
            Status::Pass => "pass",
            Status::Warn => "warn",
            Status::Fail => "fail",
        }
        .into();
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = e.to_string().replace([',', '\n'], ";");
    }
    row
}

fn cmd_sweep(c: &Common) -> Result<(), CliError> {
    let Some(path) = &c.config else {
        return Err(CliError::Validation("sweep needs --config".into()));
    };
    let cfg = load_config(path)?;
    if cfg.sweep.is_empty() {
        return Err(CliError::Validation("config has no `sweep` section".into()));
    }
    let dir = RunDir::create(&c.out)?;
    let base_seed = c.seed.unwrap_or(cfg.verify.dynkin.seed);
    let points = sweep_points(&cfg.sweep);
    info!("sweeping {} points", points.len());
    let rows: Vec<SweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(i, pt)| sweep_point(&cfg, with_overrides(&cfg.model, pt), base_seed.wrapping_add(i as u64), c))
        .collect();
    let mut csv = SWEEP_COLUMNS.join(",") + "\n";
    for (i, r) in rows.iter().enumerate() {
        let m = &r.model;
        let mut cells = vec![i.to_string()];
        cells.extend([m.mu, m.sigma, m.r, m.delta, m.risk_aversion, m.eic, m.a, m.beta.unwrap_or(0.0)].map(num));
        cells.push(r.seed.to_string());
        cells.push(r.converged.to_string());
        cells.extend([r.zhat, r.xhat, r.residual_sup].map(num));
        cells.push(r.overall.clone());
        cells.push(r.error.clone());
        csv += &(cells.join(",") + "\n");
    }
    let manifest = RunManifest {
        tool: "ezc".into(),
        version: VERSION.into(),
        config_digest: cfg.digest(),
        seed: Some(base_seed),
        timestamps: Timestamps { started: now(), finished: 0 },
        files: Default::default(),
        assumption_flags: Vec::new(),
    };
    dir.commit(manifest, &[(CONFIG, json(&cfg.document)), (SWEEP, csv)])?;
    Ok(())
}
