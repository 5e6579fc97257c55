use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use gridsched::bc::BcOptions;
use gridsched::data;
use gridsched::estimation::{
    estimate_thevenin, update_load_params, LoadUpdateOptions, TheveninEstimate, TheveninOptions,
};
use gridsched::io::scenario_file::DEFAULT_REACTIVE_RATIO;
use gridsched::io::{load_network, load_scenario, output, read_measurements};
use gridsched::network::Network;
use gridsched::scenario::{run_scenario, CaseMode, HourRecord, HourStatus, RunOptions, Scenario, StartKind};
use gridsched::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_BUDGET: u8 = 4;

/// Schedule taps, capacitor steps and dispatchable units of a distribution
/// feeder.
#[derive(Parser)]
#[command(name = "gridsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single hourly scheduling problem.
    Solve(SolveArgs),
    /// Solve every hour of a scenario, chaining each hour to the next.
    Scenario(ScenarioArgs),
    /// Estimate the upstream Thevenin equivalent and load parameters from
    /// measurements.
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// Network file (TOML). Defaults to the bundled 33-bus feeder.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Branch-and-cut worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Maximum number of branch-and-cut nodes per hour.
    #[arg(long, default_value_t = 5000)]
    node_budget: usize,
    /// Relative gap below which a node bound prunes against the incumbent.
    #[arg(long, default_value_t = 1e-9)]
    prune_tol: f64,
    /// Constraint tolerance of the power-flow feasibility check (pu).
    #[arg(long, default_value_t = 1e-6)]
    feasibility_tol: f64,
    /// Trust-region stationarity tolerance.
    #[arg(long, default_value_t = 1e-6)]
    stationarity_tol: f64,
    /// Trust-region iteration limit per node.
    #[arg(long, default_value_t = 100)]
    max_tra_iterations: usize,
    /// Skip the LP bound test before each nonlinear node solve.
    #[arg(long)]
    no_gate: bool,
    /// Do not add cutting planes to node LPs.
    #[arg(long)]
    no_cuts: bool,
    /// Do not round relaxed node solutions into incumbents.
    #[arg(long)]
    no_heuristic: bool,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    output: PathBuf,
}

impl SolverArgs {
    fn bc(&self) -> BcOptions {
        let mut o = BcOptions {
            gate: !self.no_gate,
            cuts: !self.no_cuts,
            heuristic: !self.no_heuristic,
            workers: self.workers.max(1),
            node_budget: self.node_budget,
            prune_tolerance: self.prune_tol,
            feasibility_tolerance: self.feasibility_tol,
            ..BcOptions::default()
        };
        o.tra.eps_stationarity = self.stationarity_tol;
        o.tra.max_iterations = self.max_tra_iterations;
        o
    }

    fn network(&self) -> gridsched::Result<Network> {
        match &self.network {
            Some(p) => load_network(&read(p)?, &p.display().to_string()),
            None => data::ieee33(),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    solver: SolverArgs,
    /// lp_only, full, fixed_start, constant_power_loads or stale_load_model.
    #[arg(long, default_value = "full")]
    mode: CaseMode,
    /// Multiplier on every load.
    #[arg(long, default_value_t = 1.0)]
    load: f64,
    /// Active energy price (per MWh).
    #[arg(long, default_value_t = 50.0)]
    rho_a: f64,
    /// Reactive energy price (per MVArh). Defaults to 0.1 x rho_a.
    #[arg(long)]
    rho_r: Option<f64>,
    /// Hours in the period.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Starting set-points: zero or optimal.
    #[arg(long, default_value = "zero")]
    start: StartArg,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    solver: SolverArgs,
    /// Scenario file (TOML). Defaults to the bundled 24-hour profile.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario's mode.
    #[arg(long)]
    mode: Option<CaseMode>,
    /// Overrides the starting set-points: zero or optimal.
    #[arg(long)]
    start: Option<StartArg>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Measurement CSV: timestamp,bus,v,i,phase_offset,p,q.
    measurements: PathBuf,
    /// Network whose upstream and load models are being updated. Defaults
    /// to the bundled 33-bus feeder.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Thevenin voltage change that calls for rescheduling (pu).
    #[arg(long, default_value_t = 5e-3)]
    eps_v: f64,
    /// Thevenin impedance change that calls for rescheduling (pu).
    #[arg(long, default_value_t = 5e-3)]
    eps_z: f64,
    /// Write the JSON report here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StartArg {
    Zero,
    Optimal,
}

impl From<StartArg> for StartKind {
    fn from(s: StartArg) -> Self {
        match s {
            StartArg::Zero => StartKind::Zero,
            StartArg::Optimal => StartKind::Optimal,
        }
    }
}

fn read(p: &Path) -> gridsched::Result<String> {
    Ok(fs::read_to_string(p)?)
}

fn run_and_write(net: &Network, sc: &Scenario, opts: &RunOptions, dir: &Path) -> anyhow::Result<u8> {
    let r = run_scenario(net, sc, opts)?;
    output::write_all(dir, &r).with_context(|| format!("writing results to {}", dir.display()))?;
    println!(
        "{} hours ({}): total cost {:.4}, energy {:.3} kWh, losses {:.3} kWh, {} infeasible",
        r.hours.len(),
        r.mode.name(),
        r.total_cost(),
        r.total_energy_kwh(),
        r.total_loss_kwh(),
        r.infeasible_hours()
    );
    info!("results written to {}", dir.display());
    let code = if r.hours.iter().any(|h| h.status == HourStatus::Infeasible) {
        EXIT_INFEASIBLE
    } else if r.hours.iter().any(|h| h.status == HourStatus::BudgetExceeded) {
        EXIT_BUDGET
    } else {
        0
    };
    Ok(code)
}

fn solve(a: &SolveArgs) -> anyhow::Result<u8> {
    let net = a.solver.network()?;
    let sc = Scenario {
        name: "solve".into(),
        tau: a.tau,
        mode: a.mode,
        start: Some(a.start.into()),
        hours: vec![HourRecord {
            load: a.load,
            bus_load: BTreeMap::new(),
            rho_a: a.rho_a,
            rho_r: a.rho_r.unwrap_or(DEFAULT_REACTIVE_RATIO * a.rho_a),
            der_price: None,
            v_th_step: 0.0,
        }],
    };
    let opts = RunOptions {
        mode: None,
        start: None,
        bc: a.solver.bc(),
    };
    run_and_write(&net, &sc, &opts, &a.solver.output)
}

fn scenario(a: &ScenarioArgs) -> anyhow::Result<u8> {
    let net = a.solver.network()?;
    let sc = match &a.scenario {
        Some(p) => load_scenario(&read(p)?, &p.display().to_string())?,
        None => data::residential24()?,
    };
    let opts = RunOptions {
        mode: a.mode,
        start: a.start.map(Into::into),
        bc: a.solver.bc(),
    };
    run_and_write(&net, &sc, &opts, &a.solver.output)
}

#[derive(Serialize)]
struct LoadReport {
    bus: usize,
    p_d0: f64,
    q_d0: f64,
    zeta_p: f64,
    zeta_q: f64,
    reschedule: bool,
    clipped: bool,
}

#[derive(Serialize)]
struct EstimateReport {
    thevenin: Option<TheveninEstimate>,
    delta_v: Option<f64>,
    delta_z: Option<f64>,
    reschedule: bool,
    loads: Vec<LoadReport>,
}

fn estimate(a: &EstimateArgs) -> anyhow::Result<u8> {
    let net = match &a.network {
        Some(p) => load_network(&read(p)?, &p.display().to_string())?,
        None => data::ieee33()?,
    };
    let ctx = a.measurements.display().to_string();
    let m = read_measurements(File::open(&a.measurements).with_context(|| ctx.clone())?, &ctx)?;
    let mut report = EstimateReport {
        thevenin: None,
        delta_v: None,
        delta_z: None,
        reschedule: false,
        loads: Vec::new(),
    };
    if m.primary.len() >= 3 {
        let last = &m.primary[m.primary.len() - 3..];
        let th = estimate_thevenin(last, &TheveninOptions::default())?;
        let dv = (th.v_th - net.upstream.v_th).abs();
        let dz = (th.z_th - net.upstream.z_th).norm();
        report.reschedule |= dv >= a.eps_v || dz >= a.eps_z;
        report.delta_v = Some(dv);
        report.delta_z = Some(dz);
        report.thevenin = Some(th);
    } else if !m.primary.is_empty() {
        return Err(Error::Validation(format!("{ctx}: need 3 primary snapshots, got {}", m.primary.len())).into());
    }
    for (bus, snaps) in &m.loads {
        let idx = net
            .bus_index(*bus)
            .ok_or_else(|| Error::Validation(format!("{ctx}: unknown bus {bus}")))?;
        let load = net
            .loads
            .iter()
            .find(|l| l.bus == idx)
            .ok_or_else(|| Error::Validation(format!("{ctx}: bus {bus} has no load")))?;
        if snaps.len() < 2 {
            return Err(Error::Validation(format!("{ctx}: bus {bus} needs 2 snapshots")).into());
        }
        let pair = [snaps[snaps.len() - 2], snaps[snaps.len() - 1]];
        let u = update_load_params(load, &pair, &LoadUpdateOptions::default())?;
        report.reschedule |= u.reschedule;
        report.loads.push(LoadReport {
            bus: *bus,
            p_d0: u.load.p_d0,
            q_d0: u.load.q_d0,
            zeta_p: u.load.zeta_p,
            zeta_q: u.load.zeta_q,
            reschedule: u.reschedule,
            clipped: u.clipped,
        });
    }
    let json = serde_json::to_string_pretty(&report)?;
    match &a.output {
        Some(p) => fs::write(p, json + "\n").with_context(|| p.display().to_string())?,
        None => println!("{json}"),
    }
    Ok(0)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Validation(_) | Error::Parse { .. } | Error::Domain(_) | Error::Conditioning(_)) => EXIT_VALIDATION,
        // no operating point exists at the requested loading
        Some(Error::Divergence { .. }) => EXIT_INFEASIBLE,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Scenario(a) => scenario(a),
        Command::Estimate(a) => estimate(a),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
