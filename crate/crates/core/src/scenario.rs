//! Hour-by-hour scheduling over a horizon. Each hour is an independent
//! problem linearized around the state the previous hour left behind.

use std::collections::BTreeMap;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::bc::{solve_minlp, BcOptions, BcStats, BcStatus, MinlpProblem, NodeRecord, SolveMode};
use crate::error::{Error, Result};
use crate::network::{ControlVar, ControlVector, Network};
use crate::power_flow::{check_feasibility, evaluate_cost, losses, solve_power_flow, Prices};

/// How an hourly problem is modelled and solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseMode {
    /// Branch-and-cut over the linearized problem; no nonlinear solves.
    LpOnly,
    /// LP gate plus trust-region solves, from an optimal starting state.
    Full,
    /// As `Full`, starting from all-zero set-points.
    FixedStart,
    /// Loads are constant power, in the model and in reality.
    ConstantPowerLoads,
    /// Optimized as if loads were constant power; evaluated with the real
    /// voltage-dependent loads.
    StaleLoadModel,
}

impl CaseMode {
    pub fn all() -> [CaseMode; 5] {
        [
            CaseMode::LpOnly,
            CaseMode::Full,
            CaseMode::FixedStart,
            CaseMode::ConstantPowerLoads,
            CaseMode::StaleLoadModel,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseMode::LpOnly => "lp_only",
            CaseMode::Full => "full",
            CaseMode::FixedStart => "fixed_start",
            CaseMode::ConstantPowerLoads => "constant_power_loads",
            CaseMode::StaleLoadModel => "stale_load_model",
        }
    }

    fn solve_mode(self) -> SolveMode {
        match self {
            CaseMode::LpOnly => SolveMode::LpOnly,
            _ => SolveMode::Full,
        }
    }

    fn default_start(self) -> StartKind {
        match self {
            CaseMode::FixedStart => StartKind::Zero,
            _ => StartKind::Optimal,
        }
    }
}

impl std::str::FromStr for CaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseMode::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown mode '{s}'")))
    }
}

/// State the horizon starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// The optimal schedule of the hour preceding the horizon, taken to
    /// have the conditions of the last hour (a daily cycle).
    Optimal,
    /// Nominal taps, no capacitor steps, no dispatch.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    /// Multiplier on every load.
    pub load: f64,
    /// Extra multipliers by bus id.
    pub bus_load: BTreeMap<usize, f64>,
    /// Active energy price (currency per MWh).
    pub rho_a: f64,
    /// Reactive energy price (currency per MVArh).
    pub rho_r: f64,
    /// Overrides the price of every dispatchable unit.
    pub der_price: Option<f64>,
    /// Change of the upstream Thevenin voltage from this hour on.
    pub v_th_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Hours per period.
    pub tau: f64,
    pub mode: CaseMode,
    pub start: Option<StartKind>,
    pub hours: Vec<HourRecord>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.hours.is_empty() {
            return Err(Error::validation("scenario horizon is empty"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::validation("tau_hours must be positive"));
        }
        for (h, r) in self.hours.iter().enumerate() {
            let ok = r.load >= 0.0
                && r.bus_load.values().all(|m| *m >= 0.0)
                && r.rho_a.is_finite()
                && r.rho_r.is_finite()
                && r.v_th_step.is_finite();
            if !ok {
                return Err(Error::validation(format!(
                    "hour {}: multipliers must be non-negative and prices finite",
                    h + 1
                )));
            }
        }
        Ok(())
    }
}

/// Network of one hour: scaled loads, shifted upstream voltage, optional
/// DER price and constant-power loads.
pub fn hour_network(base: &Network, hour: &HourRecord, v_th_shift: f64, constant_power: bool) -> Result<Network> {
    let mut net = base.clone();
    for l in &mut net.loads {
        let id = base.buses[l.bus].id;
        let m = hour.load * hour.bus_load.get(&id).copied().unwrap_or(1.0);
        l.p_d0 *= m;
        l.q_d0 *= m;
        if constant_power {
            l.zeta_p = 0.0;
            l.zeta_q = 0.0;
        }
    }
    for id in hour.bus_load.keys() {
        if base.bus_index(*id).is_none() {
            return Err(Error::validation(format!("bus_load refers to unknown bus {id}")));
        }
    }
    if let Some(p) = hour.der_price {
        for d in &mut net.devices {
            if d.dispatchable_active() {
                d.price = p;
            }
        }
    }
    net.upstream.v_th += v_th_shift;
    net.validate()?;
    Ok(net)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the scenario's mode.
    pub mode: Option<CaseMode>,
    /// Overrides the mode's starting state.
    pub start: Option<StartKind>,
    pub bc: BcOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: None,
            start: None,
            bc: BcOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HourStatus {
    Optimal,
    BudgetExceeded,
    /// No schedule found; the previous set-points were kept.
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
pub struct HourResult {
    /// 1-based.
    pub hour: usize,
    pub load: f64,
    pub rho_a: f64,
    pub rho_r: f64,
    pub status: HourStatus,
    /// The reported schedule satisfies every constraint in a fresh power
    /// flow of the real network.
    pub feasible: bool,
    pub violations: usize,
    pub anchor: ControlVector,
    pub controls: ControlVector,
    /// Decision variables of `controls` in layout order.
    pub decision: Vec<f64>,
    /// Real cost (currency).
    pub cost: f64,
    /// Objective value the optimizer reported for its own model.
    pub model_cost: Option<f64>,
    pub energy_demand_kwh: f64,
    pub loss_copper_kwh: f64,
    pub loss_core_kwh: f64,
    pub voltages: Vec<f64>,
    pub stats: BcStats,
    #[serde(skip)]
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleResult {
    pub scenario: String,
    pub mode: CaseMode,
    pub start: StartKind,
    pub bus_ids: Vec<usize>,
    pub device_names: Vec<String>,
    /// Name of each entry of `HourResult::decision`.
    pub control_labels: Vec<String>,
    pub hours: Vec<HourResult>,
}

impl ScheduleResult {
    pub fn total_cost(&self) -> f64 {
        self.hours.iter().map(|h| h.cost).sum()
    }

    pub fn total_loss_kwh(&self) -> f64 {
        self.hours.iter().map(|h| h.loss_copper_kwh + h.loss_core_kwh).sum()
    }

    pub fn total_energy_kwh(&self) -> f64 {
        self.hours.iter().map(|h| h.energy_demand_kwh).sum()
    }

    pub fn infeasible_hours(&self) -> usize {
        self.hours.iter().filter(|h| !h.feasible).count()
    }
}

pub fn control_labels(net: &Network) -> Vec<String> {
    net.control_layout()
        .into_iter()
        .map(|v| match v {
            ControlVar::Tap(t) => format!("tap_{}", t + 1),
            ControlVar::Step(k) => format!("step_{}", k + 1),
            ControlVar::ActivePower(k) => format!("p_g_{}", net.devices[k].name),
            ControlVar::ReactivePower(k) => format!("q_g_{}", net.devices[k].name),
            ControlVar::VoltageSetpoint(k) => format!("v_set_{}", net.devices[k].name),
        })
        .collect()
}

fn prices(h: &HourRecord) -> Prices {
    Prices {
        active: h.rho_a,
        reactive: h.rho_r,
    }
}

fn start_controls(base: &Network, sc: &Scenario, mode: CaseMode, kind: StartKind, opts: &RunOptions) -> Result<ControlVector> {
    let zero = base.zero_controls();
    if kind == StartKind::Zero {
        return Ok(zero);
    }
    let last = sc.hours.last().expect("validated horizon");
    let shift: f64 = sc.hours.iter().map(|h| h.v_th_step).sum();
    let constant = matches!(mode, CaseMode::ConstantPowerLoads | CaseMode::StaleLoadModel);
    let net = hour_network(base, last, shift, constant)?;
    let problem = MinlpProblem {
        net: &net,
        prices: prices(last),
        tau: sc.tau,
        anchor: zero.clone(),
    };
    let bc = BcOptions {
        mode: SolveMode::Full,
        ..opts.bc.clone()
    };
    let r = solve_minlp(&problem, &bc)?;
    Ok(match r.incumbent {
        Some(i) => i.controls,
        None => {
            warn!("no feasible starting schedule; starting from nominal set-points");
            zero
        }
    })
}

/// Solve every hour in order; each hour starts from the previous hour's
/// applied schedule.
pub fn run_scenario(base: &Network, sc: &Scenario, opts: &RunOptions) -> Result<ScheduleResult> {
    sc.validate()?;
    let mode = opts.mode.unwrap_or(sc.mode);
    let start = opts.start.or(sc.start).unwrap_or(mode.default_start());
    let mut anchor = start_controls(base, sc, mode, start, opts)?;
    let bc = BcOptions {
        mode: mode.solve_mode(),
        ..opts.bc.clone()
    };
    let mut out = Vec::with_capacity(sc.hours.len());
    let mut shift = 0.0;
    for (h, rec) in sc.hours.iter().enumerate() {
        shift += rec.v_th_step;
        let constant_model = matches!(mode, CaseMode::ConstantPowerLoads | CaseMode::StaleLoadModel);
        let model = hour_network(base, rec, shift, constant_model)?;
        let truth = match mode {
            CaseMode::StaleLoadModel => hour_network(base, rec, shift, false)?,
            _ => model.clone(),
        };
        let problem = MinlpProblem {
            net: &model,
            prices: prices(rec),
            tau: sc.tau,
            anchor: anchor.clone(),
        };
        let r = solve_minlp(&problem, &bc)?;
        let (status, controls, model_cost) = match (&r.status, r.incumbent) {
            (BcStatus::BudgetExceeded, None) => (HourStatus::BudgetExceeded, anchor.clone(), None),
            (BcStatus::Infeasible, _) | (_, None) => (HourStatus::Infeasible, anchor.clone(), None),
            (BcStatus::Optimal, Some(i)) => (HourStatus::Optimal, i.controls, Some(i.objective)),
            (BcStatus::BudgetExceeded, Some(i)) => (HourStatus::BudgetExceeded, i.controls, Some(i.objective)),
        };
        let op = solve_power_flow(&truth, &controls, None)?;
        let violations = check_feasibility(&truth, &op, bc.feasibility_tolerance).len();
        let cost = evaluate_cost(&truth, &op, &prices(rec), sc.tau);
        let l = losses(&truth, &op, &controls)?;
        let kwh = truth.s_base_mva * 1e3 * sc.tau;
        info!(
            "hour {}: {:?} cost {:.3} feasible {} ({} nodes, {} NLP)",
            h + 1,
            status,
            cost,
            violations == 0,
            r.stats.nodes_opened,
            r.stats.nlp_solves
        );
        out.push(HourResult {
            hour: h + 1,
            load: rec.load,
            rho_a: rec.rho_a,
            rho_r: rec.rho_r,
            status,
            feasible: violations == 0 && status != HourStatus::Infeasible,
            violations,
            anchor: anchor.clone(),
            controls: controls.clone(),
            decision: base.flatten(&controls),
            cost,
            model_cost,
            energy_demand_kwh: l.demand * kwh,
            loss_copper_kwh: l.copper() * kwh,
            loss_core_kwh: l.core * kwh,
            voltages: op.v_magnitudes(),
            stats: r.stats,
            nodes: r.nodes,
        });
        anchor = controls;
    }
    Ok(ScheduleResult {
        scenario: sc.name.clone(),
        mode,
        start,
        bus_ids: base.buses.iter().map(|b| b.id).collect(),
        device_names: base.devices.iter().map(|d| d.name.clone()).collect(),
        control_labels: control_labels(base),
        hours: out,
    })
}
