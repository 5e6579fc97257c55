//! Best-first branch-and-cut over the integer controls (taps, capacitor
//! steps). Every node first solves an LP built from the linearized problem;
//! only nodes that survive it are handed to the trust-region solver.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dsp::{Dsp, LinearDsp};
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpOutcome, LpProblem};
use crate::network::{ControlVector, Network};
use crate::perturbed::assemble;
use crate::power_flow::{check_feasibility, evaluate_cost, solve_power_flow, OperatingPoint, Prices};
use crate::tra::{solve_nlp, FixedVars, NlpModel, NlpStatus, TraOptions};

const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    /// LP gate, trust-region solves at surviving nodes.
    Full,
    /// Branch-and-cut over the linearized problem only; schedules are not
    /// guaranteed to satisfy the nonlinear constraints.
    LpOnly,
}

#[derive(Debug, Clone)]
pub struct BcOptions {
    pub mode: SolveMode,
    /// Solve the node LP before any trust-region work.
    pub gate: bool,
    pub cuts: bool,
    pub max_cut_rounds: usize,
    pub heuristic: bool,
    pub workers: usize,
    /// Maximum number of opened nodes.
    pub node_budget: usize,
    /// Relative tolerance of bound pruning.
    pub prune_tolerance: f64,
    /// Violation tolerance of the power-flow verification.
    pub feasibility_tolerance: f64,
    pub tra: TraOptions,
}

impl Default for BcOptions {
    fn default() -> Self {
        Self {
            mode: SolveMode::Full,
            gate: true,
            cuts: true,
            max_cut_rounds: 5,
            heuristic: true,
            workers: 1,
            node_budget: 5000,
            prune_tolerance: 1e-9,
            feasibility_tolerance: 1e-6,
            tra: TraOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Open,
    PrunedBound,
    PrunedInfeasible,
    Branched,
    IntegerFeasible,
}

/// A node of the search tree. Bounds are absolute boxes over the integer
/// positions of the control layout.
#[derive(Debug, Clone)]
pub struct BcNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Relaxed objective of the parent; `-inf` at the root.
    pub parent_bound: f64,
    /// Point the node LP is linearized at; the parent solution moved into
    /// this node's box.
    pub start: Vec<f64>,
    pub lp_solution: Option<Vec<f64>>,
    pub status: NodeStatus,
}

impl BcNode {
    fn root(start: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            id: 0,
            parent: None,
            depth: 0,
            lower,
            upper,
            parent_bound: f64::NEG_INFINITY,
            start,
            lp_solution: None,
            status: NodeStatus::Open,
        }
    }
}

struct Queued(BcNode);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // max-heap: smaller bound first, then smaller id
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .parent_bound
            .total_cmp(&self.0.parent_bound)
            .then(other.0.id.cmp(&self.0.id))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Incumbent {
    pub x: Vec<f64>,
    pub controls: ControlVector,
    pub objective: f64,
    /// False when the point only satisfies the linearized constraints.
    pub verified: bool,
    #[serde(skip)]
    pub operating_point: Option<OperatingPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum GateOutcome {
    PruneBound { bound: f64 },
    PruneInfeasible,
    Continue { bound: f64 },
    /// LP failed; the node is kept.
    Failed,
    /// Gate disabled.
    Skipped,
    /// Parent bound already dominated when the node was popped.
    ParentBound,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub parent_bound: f64,
    pub gate: GateOutcome,
    pub cuts: usize,
    pub nlp_objective: Option<f64>,
    pub status: NodeStatus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BcStats {
    pub nodes_opened: usize,
    pub pruned_bound: usize,
    pub pruned_infeasible: usize,
    pub branched: usize,
    pub integer_feasible: usize,
    pub lp_solves: usize,
    pub nlp_solves: usize,
    pub cuts: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BcStatus {
    Optimal,
    BudgetExceeded,
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
pub struct BcResult {
    pub status: BcStatus,
    pub optimal: bool,
    pub incumbent: Option<Incumbent>,
    pub nodes: Vec<NodeRecord>,
    pub stats: BcStats,
}

/// One hourly problem handed to the search.
#[derive(Debug, Clone)]
pub struct MinlpProblem<'a> {
    pub net: &'a Network,
    pub prices: Prices,
    pub tau: f64,
    /// Operating state the problem is linearized around first.
    pub anchor: ControlVector,
}

impl<'a> MinlpProblem<'a> {
    fn dsp(&self) -> Dsp<'a> {
        Dsp::new(self.net, self.prices, self.tau, self.anchor.clone())
    }
}

/// A linear inequality `coeffs . x <= rhs` over the control layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cut {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl Cut {
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.rhs
    }
}

/// `x_var <= floor` or `x_var >= floor + 1`; not valid on its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Disjunction {
    pub var: usize,
    pub value: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Separation {
    pub cuts: Vec<Cut>,
    pub disjunctions: Vec<Disjunction>,
}

pub fn fractionality(v: f64) -> f64 {
    (v - v.round()).abs()
}

fn fractional_indices(x: &[f64], ints: &[usize]) -> Vec<usize> {
    ints.iter()
        .copied()
        .filter(|&j| fractionality(x[j]) > INTEGRALITY_TOL)
        .collect()
}

/// Bound disjunctions for every fractional integer and Chvatal-Gomory
/// rounding cuts from rows of `lp` that are tight at `x`. A row's
/// continuous part is bounded by the box, which leaves an integer knapsack
/// over the node lattice; each cut is violated by `x`.
pub fn cutting_planes(lp: &LpProblem, ints: &[usize], x: &[f64]) -> Separation {
    let mut out = Separation::default();
    let frac = fractional_indices(x, ints);
    if frac.is_empty() {
        return out;
    }
    for &j in &frac {
        out.disjunctions.push(Disjunction {
            var: j,
            value: x[j],
            floor: x[j].floor(),
        });
    }
    let n = x.len();
    let is_int: Vec<bool> = (0..n).map(|j| ints.contains(&j)).collect();
    for r in 0..lp.a_in.nrows() {
        let a = lp.a_in.row(r);
        let slack = lp.b_in[r] - (0..n).map(|j| a[j] * x[j]).sum::<f64>();
        if slack > 1e-7 * (1.0 + lp.b_in[r].abs()) {
            continue;
        }
        // sum_int |a_i| y_i <= beta with y_i = x_i - l_i or u_i - x_i
        let mut beta = lp.b_in[r];
        let mut touches_fraction = false;
        for j in 0..n {
            let aj = a[j];
            if aj == 0.0 {
                continue;
            }
            let (l, u) = (lp.lower[j], lp.upper[j]);
            let low = if aj > 0.0 { aj * l } else { aj * u };
            if !low.is_finite() {
                beta = f64::NAN;
                break;
            }
            beta -= low;
            if is_int[j] && frac.contains(&j) {
                touches_fraction = true;
            }
        }
        if !beta.is_finite() || !touches_fraction {
            continue;
        }
        let y: Vec<f64> = (0..n)
            .map(|j| if a[j] > 0.0 { x[j] - lp.lower[j] } else { lp.upper[j] - x[j] })
            .collect();
        for &k in ints {
            let ck = a[k].abs();
            if ck < 1e-9 {
                continue;
            }
            let t = 1.0 / ck;
            let mut coeffs = vec![0.0; n];
            let mut rhs = (t * beta).floor();
            let mut lhs = 0.0;
            for &i in ints {
                let ai = a[i];
                if ai == 0.0 {
                    continue;
                }
                let f = (t * ai.abs()).floor();
                if f == 0.0 {
                    continue;
                }
                lhs += f * y[i];
                if ai > 0.0 {
                    coeffs[i] = f;
                    rhs += f * lp.lower[i];
                } else {
                    coeffs[i] = -f;
                    rhs -= f * lp.upper[i];
                }
            }
            if lhs > (t * beta).floor() + 1e-7 && !out.cuts.iter().any(|c| c.coeffs == coeffs && c.rhs == rhs) {
                out.cuts.push(Cut { coeffs, rhs });
            }
        }
    }
    out
}

/// Most fractional integer (closest to one half); ties go to the larger
/// `weights` entry, then the lower index.
pub fn select_branch_variable(x: &[f64], ints: &[usize], weights: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in fractional_indices(x, ints) {
        let d = (x[j] - x[j].floor() - 0.5).abs();
        best = match best {
            None => Some((j, d)),
            Some((b, db)) => {
                if d < db - 1e-12 || ((d - db).abs() <= 1e-12 && weights[j] > weights[b]) {
                    Some((j, d))
                } else {
                    Some((b, db))
                }
            }
        };
    }
    best.map(|(j, _)| j)
}

/// Child boxes `x_j <= floor(v)` and `x_j >= ceil(v)`.
pub fn branch(node: &BcNode, var: usize, value: f64) -> Result<(BcNode, BcNode)> {
    if fractionality(value) <= INTEGRALITY_TOL {
        return Err(Error::domain(format!("branching on integral value {value}")));
    }
    let mut low = node.clone();
    let mut high = node.clone();
    low.upper[var] = value.floor().max(node.lower[var]);
    high.lower[var] = value.ceil().min(node.upper[var]);
    for c in [&mut low, &mut high] {
        c.parent = Some(node.id);
        c.depth = node.depth + 1;
        c.lp_solution = None;
        c.status = NodeStatus::Open;
    }
    Ok((low, high))
}

/// Node LP: linearized cost and rows at `lin`, node box, optional cuts.
pub fn node_lp(lin: &LinearDsp, lower: &[f64], upper: &[f64], cuts: &[Cut]) -> LpProblem {
    let mut lp = lin.lp(lower, upper);
    if !cuts.is_empty() {
        let n = lower.len();
        let m = lp.a_in.nrows();
        let mut a = DMatrix::zeros(m + cuts.len(), n);
        a.rows_mut(0, m).copy_from(&lp.a_in);
        let mut b = DVector::zeros(m + cuts.len());
        b.rows_mut(0, m).copy_from(&lp.b_in);
        for (k, c) in cuts.iter().enumerate() {
            for j in 0..n {
                a[(m + k, j)] = c.coeffs[j];
            }
            b[m + k] = c.rhs;
        }
        lp.a_in = a;
        lp.b_in = b;
    }
    lp
}

#[derive(Debug, Clone)]
pub struct GateResult {
    pub outcome: GateOutcome,
    pub lp_solution: Option<Vec<f64>>,
    pub lp_solves: usize,
    pub cuts: Vec<Cut>,
    pub disjunctions: Vec<Disjunction>,
}

/// Solve the node LP, tightening with cuts while the vertex is fractional.
/// The bound is in currency (the linearized cost at the LP point).
pub fn expedite_gate(
    lin: &LinearDsp,
    lower: &[f64],
    upper: &[f64],
    ints: &[usize],
    z_star: Option<f64>,
    opts: &BcOptions,
) -> GateResult {
    let mut cuts: Vec<Cut> = Vec::new();
    let mut disjunctions = Vec::new();
    let mut lp_solves = 0;
    let mut last: Option<(Vec<f64>, f64)> = None;
    let rounds = if opts.cuts { opts.max_cut_rounds } else { 0 };
    for round in 0..=rounds {
        let lp = node_lp(lin, lower, upper, &cuts);
        if lp.lower.iter().zip(&lp.upper).any(|(l, u)| l > u) {
            return GateResult {
                outcome: GateOutcome::PruneInfeasible,
                lp_solution: None,
                lp_solves,
                cuts,
                disjunctions,
            };
        }
        lp_solves += 1;
        let (x, bound) = match solve_lp(&lp) {
            Ok(LpOutcome::Optimal { x, .. }) => {
                let x = x.as_slice().to_vec();
                let bound = lin.cost_at(&x);
                (x, bound)
            }
            Ok(LpOutcome::Infeasible) => {
                // cuts are valid on the lattice, so a cut LP without a point
                // proves the node empty as well
                return GateResult {
                    outcome: GateOutcome::PruneInfeasible,
                    lp_solution: None,
                    lp_solves,
                    cuts,
                    disjunctions,
                };
            }
            Ok(LpOutcome::Unbounded) | Err(_) => {
                if let Some((x, bound)) = last {
                    return GateResult {
                        outcome: GateOutcome::Continue { bound },
                        lp_solution: Some(x),
                        lp_solves,
                        cuts,
                        disjunctions,
                    };
                }
                return GateResult {
                    outcome: GateOutcome::Failed,
                    lp_solution: None,
                    lp_solves,
                    cuts,
                    disjunctions,
                };
            }
        };
        if let Some(z) = z_star {
            if bound >= z - opts.prune_tolerance * z.abs() {
                return GateResult {
                    outcome: GateOutcome::PruneBound { bound },
                    lp_solution: Some(x),
                    lp_solves,
                    cuts,
                    disjunctions,
                };
            }
        }
        let done = round == rounds || fractional_indices(&x, ints).is_empty();
        if done {
            return GateResult {
                outcome: GateOutcome::Continue { bound },
                lp_solution: Some(x),
                lp_solves,
                cuts,
                disjunctions,
            };
        }
        let sep = cutting_planes(&lp, ints, &x);
        if disjunctions.is_empty() {
            disjunctions = sep.disjunctions;
        }
        last = Some((x, bound));
        if sep.cuts.is_empty() {
            let (x, bound) = last.take().expect("set above");
            return GateResult {
                outcome: GateOutcome::Continue { bound },
                lp_solution: Some(x),
                lp_solves,
                cuts,
                disjunctions,
            };
        }
        cuts.extend(sep.cuts.into_iter().take(10));
    }
    unreachable!("loop returns on its last round")
}

/// Round half away from zero into `[lower, upper]`.
pub fn round_integers(x: &[f64], ints: &[usize], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for &j in ints {
        y[j] = x[j].round().clamp(lower[j].ceil(), upper[j].floor());
    }
    y
}

/// Outcome of a fixed-integer solve.
#[derive(Debug, Clone)]
pub struct FixedSolve {
    pub x: Vec<f64>,
    pub objective: f64,
    pub operating_point: OperatingPoint,
}

/// Trust-region solve over the continuous controls with every integer held
/// at its value in `x`, followed by an independent power-flow check.
pub fn solve_fixed_integers(
    problem: &MinlpProblem,
    x: &[f64],
    ints: &[usize],
    opts: &BcOptions,
) -> Result<Option<FixedSolve>> {
    let mut dsp = problem.dsp();
    let fixed: Vec<Option<f64>> = (0..x.len())
        .map(|j| if ints.contains(&j) { Some(x[j]) } else { None })
        .collect();
    let free: Vec<f64> = (0..x.len()).filter(|j| !ints.contains(j)).map(|j| x[j]).collect();
    let mut view = FixedVars::new(&mut dsp, fixed);
    let y = if view.dim() == 0 {
        Vec::new()
    } else {
        let sol = match solve_nlp(&mut view, &free, &opts.tra) {
            Ok(s) => s,
            Err(e) => {
                debug!("fixed-integer solve failed: {e}");
                return Ok(None);
            }
        };
        if sol.status == NlpStatus::Infeasible {
            return Ok(None);
        }
        sol.x
    };
    let full = view.expand(&y);
    Ok(verify(problem, &full, opts.feasibility_tolerance).map(|(op, objective)| FixedSolve {
        x: full,
        objective,
        operating_point: op,
    }))
}

/// Cold-start power flow and constraint check; returns the cost if feasible.
pub fn verify(problem: &MinlpProblem, x: &[f64], tol: f64) -> Option<(OperatingPoint, f64)> {
    let c = problem.net.unflatten(&problem.anchor, x);
    let op = solve_power_flow(problem.net, &c, None).ok()?;
    if !check_feasibility(problem.net, &op, tol).is_empty() {
        return None;
    }
    let cost = evaluate_cost(problem.net, &op, &problem.prices, problem.tau);
    Some((op, cost))
}

type Memo = HashMap<Vec<i64>, Option<FixedSolve>>;

fn lattice_key(x: &[f64], ints: &[usize]) -> Vec<i64> {
    ints.iter().map(|&j| x[j].round() as i64).collect()
}

/// Round, fix and re-solve. Results are memoized per integer assignment.
pub fn heuristic_round(
    problem: &MinlpProblem,
    x: &[f64],
    ints: &[usize],
    lower: &[f64],
    upper: &[f64],
    opts: &BcOptions,
    memo: &Mutex<Memo>,
    nlp_solves: &mut usize,
) -> Result<Option<FixedSolve>> {
    let y = round_integers(x, ints, lower, upper);
    let key = lattice_key(&y, ints);
    if let Some(hit) = memo.lock().expect("memo lock").get(&key) {
        return Ok(hit.clone());
    }
    *nlp_solves += 1;
    let res = solve_fixed_integers(problem, &y, ints, opts)?;
    memo.lock().expect("memo lock").insert(key, res.clone());
    Ok(res)
}

/// Effect of one integer step on the bus voltages at `x`.
pub fn sensitivity_weights(problem: &MinlpProblem, x: &[f64]) -> Result<Vec<f64>> {
    let c = problem.net.unflatten(&problem.anchor, x);
    let op = solve_power_flow(problem.net, &c, None)?;
    let model = assemble(problem.net, &op, &c)?;
    Ok((0..x.len())
        .map(|j| {
            (0..problem.net.n_buses())
                .map(|b| model.dv(b, j).norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

struct Shared {
    queue: BinaryHeap<Queued>,
    incumbent: Option<Incumbent>,
    records: Vec<NodeRecord>,
    stats: BcStats,
    next_id: usize,
    active: usize,
    budget_hit: bool,
    error: Option<Error>,
}

struct NodeWork {
    record: NodeRecord,
    children: Vec<BcNode>,
    candidates: Vec<Incumbent>,
    lp_solves: usize,
    nlp_solves: usize,
}

struct Context<'p, 'a> {
    problem: &'p MinlpProblem<'a>,
    opts: &'p BcOptions,
    ints: Vec<usize>,
    weights: Vec<f64>,
    /// Continuous box of the original problem.
    lower: Vec<f64>,
    upper: Vec<f64>,
    root_lin: Option<LinearDsp>,
    memo: Mutex<Memo>,
}

impl Context<'_, '_> {
    fn incumbent_from(&self, s: FixedSolve) -> Incumbent {
        Incumbent {
            controls: self.problem.net.unflatten(&self.problem.anchor, &s.x),
            x: s.x,
            objective: s.objective,
            verified: true,
            operating_point: Some(s.operating_point),
        }
    }

    fn process(&self, node: &BcNode, z_star: Option<f64>) -> Result<NodeWork> {
        let mut work = NodeWork {
            record: NodeRecord {
                id: node.id,
                parent: node.parent,
                depth: node.depth,
                lower: self.ints.iter().map(|&j| node.lower[j]).collect(),
                upper: self.ints.iter().map(|&j| node.upper[j]).collect(),
                parent_bound: node.parent_bound,
                gate: GateOutcome::Skipped,
                cuts: 0,
                nlp_objective: None,
                status: NodeStatus::Open,
            },
            children: Vec::new(),
            candidates: Vec::new(),
            lp_solves: 0,
            nlp_solves: 0,
        };
        let dominated = |v: f64| z_star.is_some_and(|z| v >= z - self.opts.prune_tolerance * z.abs());
        if dominated(node.parent_bound) {
            work.record.gate = GateOutcome::ParentBound;
            work.record.status = NodeStatus::PrunedBound;
            return Ok(work);
        }
        if node.lower.iter().zip(&node.upper).any(|(l, u)| l > u) {
            work.record.status = NodeStatus::PrunedInfeasible;
            return Ok(work);
        }

        let mut start = node.start.clone();
        if self.opts.gate || self.opts.mode == SolveMode::LpOnly {
            let lin = match &self.root_lin {
                Some(l) => Some(l.clone()),
                None => {
                    let mut dsp = self.problem.dsp();
                    match dsp.linearize(&node.start) {
                        Ok(l) => Some(l),
                        Err(e) => {
                            debug!("node {} linearization failed: {e}", node.id);
                            None
                        }
                    }
                }
            };
            let gate = match &lin {
                Some(lin) => expedite_gate(lin, &node.lower, &node.upper, &self.ints, z_star, self.opts),
                None => GateResult {
                    outcome: GateOutcome::Failed,
                    lp_solution: None,
                    lp_solves: 0,
                    cuts: Vec::new(),
                    disjunctions: Vec::new(),
                },
            };
            work.lp_solves += gate.lp_solves;
            work.record.gate = gate.outcome;
            work.record.cuts = gate.cuts.len();
            match gate.outcome {
                GateOutcome::PruneBound { .. } => {
                    work.record.status = NodeStatus::PrunedBound;
                    return Ok(work);
                }
                GateOutcome::PruneInfeasible => {
                    work.record.status = NodeStatus::PrunedInfeasible;
                    return Ok(work);
                }
                _ => {}
            }
            if let Some(x) = gate.lp_solution {
                start = x;
            }
            if self.opts.mode == SolveMode::LpOnly {
                let GateOutcome::Continue { bound } = gate.outcome else {
                    // without a solver fallback a failed LP ends the node
                    work.record.status = NodeStatus::PrunedInfeasible;
                    return Ok(work);
                };
                return Ok(self.settle(node, start, bound, work, lin.as_ref()));
            }
        }

        // relaxed node problem
        let mut dsp = self.problem.dsp();
        dsp.lower = node.lower.clone();
        dsp.upper = node.upper.clone();
        work.nlp_solves += 1;
        let sol = match solve_nlp(&mut dsp, &start, &self.opts.tra) {
            Ok(s) => s,
            Err(e) => {
                debug!("node {} solver error: {e}", node.id);
                work.record.status = NodeStatus::PrunedInfeasible;
                return Ok(work);
            }
        };
        if sol.status == NlpStatus::Infeasible {
            work.record.status = NodeStatus::PrunedInfeasible;
            return Ok(work);
        }
        let objective = sol.objective * dsp.cost_unit();
        work.record.nlp_objective = Some(objective);
        if dominated(objective) {
            work.record.status = NodeStatus::PrunedBound;
            return Ok(work);
        }
        if fractional_indices(&sol.x, &self.ints).is_empty() {
            let y = round_integers(&sol.x, &self.ints, &node.lower, &node.upper);
            match verify(self.problem, &y, self.opts.feasibility_tolerance) {
                Some((op, cost)) => {
                    work.candidates.push(Incumbent {
                        controls: self.problem.net.unflatten(&self.problem.anchor, &y),
                        x: y,
                        objective: cost,
                        verified: true,
                        operating_point: Some(op),
                    });
                    work.record.status = NodeStatus::IntegerFeasible;
                }
                None => work.record.status = NodeStatus::PrunedInfeasible,
            }
            return Ok(work);
        }
        if self.opts.heuristic {
            let mut n = 0;
            if let Some(s) = heuristic_round(self.problem, &sol.x, &self.ints, &node.lower, &node.upper, self.opts, &self.memo, &mut n)? {
                work.candidates.push(self.incumbent_from(s));
            }
            work.nlp_solves += n;
        }
        Ok(self.split(node, sol.x, objective, work))
    }

    /// LP-only node completion: the LP vertex is the node solution.
    fn settle(&self, node: &BcNode, x: Vec<f64>, bound: f64, mut work: NodeWork, lin: Option<&LinearDsp>) -> NodeWork {
        if fractional_indices(&x, &self.ints).is_empty() {
            let y = round_integers(&x, &self.ints, &node.lower, &node.upper);
            let verified = verify(self.problem, &y, self.opts.feasibility_tolerance);
            let objective = lin.map_or(bound, |l| l.cost_at(&y));
            work.candidates.push(Incumbent {
                controls: self.problem.net.unflatten(&self.problem.anchor, &y),
                x: y,
                objective,
                verified: verified.is_some(),
                operating_point: verified.map(|(op, _)| op),
            });
            work.record.status = NodeStatus::IntegerFeasible;
            return work;
        }
        self.split(node, x, bound, work)
    }

    fn split(&self, node: &BcNode, x: Vec<f64>, bound: f64, mut work: NodeWork) -> NodeWork {
        let var = select_branch_variable(&x, &self.ints, &self.weights).expect("fractional point");
        let (mut lo, mut hi) = branch(node, var, x[var]).expect("fractional value");
        for c in [&mut lo, &mut hi] {
            c.parent_bound = bound;
            // the parent point projected onto the child box
            c.start = x.clone();
            c.start[var] = x[var].clamp(c.lower[var], c.upper[var]);
        }
        work.children = vec![lo, hi];
        work.record.status = NodeStatus::Branched;
        work
    }
}

/// Branch-and-cut from `problem.anchor`. The anchor must be a solvable
/// operating state.
pub fn solve_minlp(problem: &MinlpProblem, opts: &BcOptions) -> Result<BcResult> {
    let t0 = Instant::now();
    let mut dsp = problem.dsp();
    let x0 = dsp.flatten(&problem.anchor);
    problem.net.check_controls(&problem.anchor)?;
    dsp.operating_point(&x0)?;
    let ints = dsp.integer_indices();
    let root_lin = match opts.mode {
        SolveMode::LpOnly => Some(dsp.linearize(&x0)?),
        SolveMode::Full => None,
    };
    let weights = sensitivity_weights(problem, &x0)?;
    let ctx = Context {
        problem,
        opts,
        ints,
        weights,
        lower: dsp.lower.clone(),
        upper: dsp.upper.clone(),
        root_lin,
        memo: Mutex::new(HashMap::new()),
    };
    let root = BcNode::root(x0, ctx.lower.clone(), ctx.upper.clone());
    let mut queue = BinaryHeap::new();
    queue.push(Queued(root));
    let shared = Mutex::new(Shared {
        queue,
        incumbent: None,
        records: Vec::new(),
        stats: BcStats::default(),
        next_id: 1,
        active: 0,
        budget_hit: false,
        error: None,
    });
    let ready = Condvar::new();
    let workers = opts.workers.max(1);
    if workers == 1 {
        worker(&ctx, &shared, &ready);
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| worker(&ctx, &shared, &ready));
            }
        });
    }
    let mut sh = shared.into_inner().expect("search state");
    if let Some(e) = sh.error.take() {
        return Err(e);
    }
    sh.stats.wall_time_s = t0.elapsed().as_secs_f64();
    sh.records.sort_by_key(|r| r.id);
    let status = if sh.budget_hit {
        BcStatus::BudgetExceeded
    } else if sh.incumbent.is_none() {
        BcStatus::Infeasible
    } else {
        BcStatus::Optimal
    };
    info!(
        "branch-and-cut {:?}: {} nodes, {} LP, {} NLP, {:.3}s",
        status, sh.stats.nodes_opened, sh.stats.lp_solves, sh.stats.nlp_solves, sh.stats.wall_time_s
    );
    Ok(BcResult {
        status,
        optimal: status == BcStatus::Optimal,
        incumbent: sh.incumbent,
        nodes: sh.records,
        stats: sh.stats,
    })
}

fn worker(ctx: &Context, shared: &Mutex<Shared>, ready: &Condvar) {
    loop {
        let (node, z) = {
            let mut sh = shared.lock().expect("search state");
            loop {
                if sh.error.is_some() || sh.budget_hit {
                    ready.notify_all();
                    return;
                }
                if !sh.queue.is_empty() {
                    break;
                }
                if sh.active == 0 {
                    ready.notify_all();
                    return;
                }
                sh = ready.wait(sh).expect("search state");
            }
            if sh.stats.nodes_opened >= ctx.opts.node_budget {
                sh.budget_hit = true;
                ready.notify_all();
                return;
            }
            let Queued(node) = sh.queue.pop().expect("non-empty queue");
            sh.stats.nodes_opened += 1;
            sh.active += 1;
            let z = sh.incumbent.as_ref().map(|i| i.objective);
            (node, z)
        };
        let work = ctx.process(&node, z);
        let mut sh = shared.lock().expect("search state");
        sh.active -= 1;
        match work {
            Err(e) => {
                sh.error = Some(e);
            }
            Ok(w) => {
                sh.stats.lp_solves += w.lp_solves;
                sh.stats.nlp_solves += w.nlp_solves;
                sh.stats.cuts += w.record.cuts;
                match w.record.status {
                    NodeStatus::PrunedBound => sh.stats.pruned_bound += 1,
                    NodeStatus::PrunedInfeasible => sh.stats.pruned_infeasible += 1,
                    NodeStatus::Branched => sh.stats.branched += 1,
                    NodeStatus::IntegerFeasible => sh.stats.integer_feasible += 1,
                    NodeStatus::Open => unreachable!("processed node left open"),
                }
                for cand in w.candidates {
                    let better = sh.incumbent.as_ref().is_none_or(|i| cand.objective < i.objective);
                    if better {
                        debug!("incumbent {:.6} at node {}", cand.objective, node.id);
                        sh.incumbent = Some(cand);
                    }
                }
                for mut child in w.children {
                    child.id = sh.next_id;
                    sh.next_id += 1;
                    sh.queue.push(Queued(child));
                }
                sh.records.push(w.record);
            }
        }
        ready.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::four_bus;

    fn toy() -> MinlpProblem<'static> {
        let net: &'static Network = Box::leak(Box::new(four_bus()));
        MinlpProblem {
            net,
            prices: Prices { active: 50.0, reactive: 5.0 },
            tau: 1.0,
            anchor: net.zero_controls(),
        }
    }

    fn node(lower: Vec<f64>, upper: Vec<f64>) -> BcNode {
        BcNode::root(vec![0.0; lower.len()], lower, upper)
    }

    #[test]
    fn most_fractional_wins() {
        let x = [0.5, 0.9, 0.3];
        assert_eq!(select_branch_variable(&x, &[0, 1], &[0.0, 1.0, 0.0]), Some(0));
        assert_eq!(select_branch_variable(&[1.0, 2.0], &[0, 1], &[1.0, 1.0]), None);
        // tie broken by weight
        assert_eq!(select_branch_variable(&[0.5, 1.5], &[0, 1], &[1.0, 2.0]), Some(1));
    }

    #[test]
    fn branch_splits_at_floor_and_ceil() {
        let n = node(vec![-5.0, 0.0], vec![5.0, 4.0]);
        let (lo, hi) = branch(&n, 0, 2.4).unwrap();
        assert_eq!(lo.upper[0], 2.0);
        assert_eq!(hi.lower[0], 3.0);
        assert_eq!(lo.lower, n.lower);
        assert_eq!(hi.upper, n.upper);
        assert!(branch(&n, 0, 2.0).is_err());
    }

    #[test]
    fn children_partition_the_lattice() {
        let n = node(vec![-2.0, 0.0], vec![2.0, 4.0]);
        for v in [-1.5, -0.2, 0.7, 1.01] {
            let (lo, hi) = branch(&n, 0, v).unwrap();
            for t in -2..=2 {
                for s in 0..=4 {
                    let inside = |b: &BcNode| {
                        (t as f64) >= b.lower[0] && (t as f64) <= b.upper[0] && (s as f64) >= b.lower[1] && (s as f64) <= b.upper[1]
                    };
                    assert!(inside(&lo) ^ inside(&hi), "point ({t},{s}) split {v}");
                }
            }
        }
    }

    #[test]
    fn rounding_ties_go_away_from_zero() {
        let y = round_integers(&[1.5, -1.5, 0.4], &[0, 1], &[-5.0, -5.0, 0.0], &[5.0, 5.0, 1.0]);
        assert_eq!(y[..2], [2.0, -2.0]);
        assert_eq!(y[2], 0.4);
        // clipped into the box
        assert_eq!(round_integers(&[2.6], &[0], &[0.0], &[2.0]), vec![2.0]);
    }

    #[test]
    fn integral_vertex_has_no_cuts() {
        let lp = LpProblem::new(DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(cutting_planes(&lp, &[0, 1], &[1.0, 3.0]), Separation::default());
    }

    #[test]
    fn fractional_tap_records_disjunction() {
        let lp = LpProblem::new(DVector::from_vec(vec![1.0, 1.0]));
        let sep = cutting_planes(&lp, &[0, 1], &[2.4, 1.0]);
        assert_eq!(sep.disjunctions, vec![Disjunction { var: 0, value: 2.4, floor: 2.0 }]);
    }

    #[test]
    fn knapsack_cut_separates_vertex() {
        // 2 x0 + 2 x1 <= 3 over [0,3]^2; vertex (1.5, 0) is cut by x0 + x1 <= 1
        let mut lp = LpProblem::new(DVector::from_vec(vec![-1.0, 0.0]));
        lp.a_in = DMatrix::from_row_slice(1, 2, &[2.0, 2.0]);
        lp.b_in = DVector::from_vec(vec![3.0]);
        lp.lower = vec![0.0, 0.0];
        lp.upper = vec![3.0, 3.0];
        let sep = cutting_planes(&lp, &[0, 1], &[1.5, 0.0]);
        assert!(!sep.cuts.is_empty());
        for c in &sep.cuts {
            assert!(c.violation(&[1.5, 0.0]) > 0.0);
            for a in 0..=3 {
                for b in 0..=3 {
                    if 2 * a + 2 * b <= 3 {
                        assert!(c.violation(&[a as f64, b as f64]) <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gate_outcomes() {
        let p = toy();
        let mut dsp = p.dsp();
        let x0 = dsp.flatten(&p.anchor);
        let lin = dsp.linearize(&x0).unwrap();
        let ints = dsp.integer_indices();
        let opts = BcOptions::default();
        let free = expedite_gate(&lin, &dsp.lower, &dsp.upper, &ints, None, &opts);
        let GateOutcome::Continue { bound } = free.outcome else {
            panic!("{:?}", free.outcome)
        };
        assert!(free.lp_solution.is_some());
        let dominated = expedite_gate(&lin, &dsp.lower, &dsp.upper, &ints, Some(bound - 10.0), &opts);
        assert!(matches!(dominated.outcome, GateOutcome::PruneBound { .. }));
        let below = expedite_gate(&lin, &dsp.lower, &dsp.upper, &ints, Some(bound + 10.0), &opts);
        assert!(matches!(below.outcome, GateOutcome::Continue { .. }));
        let (mut lo, mut hi) = (dsp.lower.clone(), dsp.upper.clone());
        lo[0] = 3.0;
        hi[0] = 3.0;
        let out = expedite_gate(&lin, &lo, &hi, &ints, None, &opts);
        assert_eq!(out.outcome, GateOutcome::PruneInfeasible);
    }

    #[test]
    fn singleton_box_is_one_solve() {
        let p = toy();
        let mut net = p.net.clone();
        net.transformers.units[0].tap_min = 1;
        net.transformers.units[0].tap_max = 1;
        net.capacitors[0].step_count_max = 0;
        let mut anchor = net.zero_controls();
        anchor.taps[0] = 1.0;
        let q = MinlpProblem { net: &net, prices: p.prices, tau: 1.0, anchor };
        let r = solve_minlp(&q, &BcOptions::default()).unwrap();
        assert_eq!(r.status, BcStatus::Optimal);
        assert_eq!(r.stats.nlp_solves, 1);
        assert_eq!(r.stats.nodes_opened, 1);
    }
}
