//! Trust-region solver for smooth NLPs with equality rows, inequality rows
//! and a box, using a vertical (feasibility) / horizontal (optimality) step
//! split and the merit function `phi = f + eta ||g||`.
//!
//! Inequalities `c(x) <= 0` count as violated by `max(0, c)`; the violation
//! vector `g` stacks the equality residuals and these positive parts.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpOptions, QpProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

impl Evaluation {
    pub fn violation(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.eq.len() + self.ineq.len());
        v.rows_mut(0, self.eq.len()).copy_from(&self.eq);
        for (k, c) in self.ineq.iter().enumerate() {
            v[self.eq.len() + k] = c.max(0.0);
        }
        v
    }

    pub fn violation_norm(&self) -> f64 {
        self.violation().norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grad: DVector<f64>,
    pub jac_eq: DMatrix<f64>,
    pub jac_in: DMatrix<f64>,
}

pub trait NlpModel {
    fn dim(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Trust-region weights `D`: the ball reads `||D d|| <= alpha`.
    fn scale(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }
    /// Objective and constraint values; an error marks the point as
    /// unevaluable (for example a diverged power flow).
    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation>;
    fn gradients(&mut self, x: &[f64]) -> Result<Gradients>;
    /// Hessian of the Lagrangian, if the model provides one.
    fn hessian(&mut self, _x: &[f64], _lambda_eq: &[f64], _lambda_in: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Central differences of the Lagrangian gradient.
    #[default]
    FiniteDifference,
    /// [`NlpModel::hessian`], falling back to differences when absent.
    Model,
}

#[derive(Debug, Clone, Copy)]
pub struct TraOptions {
    pub eps_stationarity: f64,
    pub eps_feasibility: f64,
    pub alpha0: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub max_iterations: usize,
    pub eta0: f64,
    pub xi: f64,
    /// Rows within this distance of their limit count as active when
    /// estimating multipliers.
    pub active_tolerance: f64,
    pub hessian: HessianMode,
    pub fd_step: f64,
}

impl Default for TraOptions {
    fn default() -> Self {
        Self {
            eps_stationarity: 1e-6,
            eps_feasibility: 1e-8,
            alpha0: 0.1,
            alpha_min: 1e-8,
            alpha_max: 1.0,
            max_iterations: 100,
            eta0: 10.0,
            xi: 0.8,
            active_tolerance: 1e-6,
            hessian: HessianMode::FiniteDifference,
            fd_step: 1e-5,
        }
    }
}

/// Mutable solver state; kept between calls when warm-starting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionState {
    pub alpha: f64,
    pub eta: f64,
    pub itr: usize,
}

impl TrustRegionState {
    pub fn new(opts: &TraOptions) -> Self {
        Self {
            alpha: opts.alpha0,
            eta: opts.eta0.max(1.0),
            itr: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Optimal,
    IterationLimit,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub itr: usize,
    pub alpha: f64,
    pub pi: f64,
    pub merit: f64,
    /// Merit at the trial point under the same penalty.
    pub merit_trial: f64,
    pub violation: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub evaluation: Evaluation,
    pub multipliers: Multipliers,
    pub status: NlpStatus,
    pub iterations: usize,
    pub state: TrustRegionState,
    pub trace: Vec<TraceEntry>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// `||grad f + J' lambda||` in the model's own variables, the
    /// stationarity measure.
    pub residual: f64,
}

impl Multipliers {
    pub fn max_abs(&self) -> f64 {
        self.eq
            .amax()
            .max(if self.ineq.is_empty() { 0.0 } else { self.ineq.amax() })
    }
}

/// Least-squares multipliers on the active set: equality rows, inequality
/// rows within `active_tol` of zero and box bounds within `active_tol` (in
/// scaled units). Minimum-norm via SVD; negative inequality multipliers are
/// dropped one at a time.
#[allow(clippy::too_many_arguments)]
pub fn estimate_multipliers(
    x: &[f64],
    eval: &Evaluation,
    grads: &Gradients,
    lower: &[f64],
    upper: &[f64],
    scale: &[f64],
    active_tol: f64,
) -> Multipliers {
    let n = x.len();
    let me = eval.eq.len();
    let mi = eval.ineq.len();
    // columns: (kind, index, sign constraint) with gradient in scaled space
    #[derive(Clone, Copy)]
    enum Col {
        Eq(usize),
        In(usize),
        Lo(usize),
        Up(usize),
    }
    let mut cols: Vec<Col> = (0..me).map(Col::Eq).collect();
    for k in 0..mi {
        if eval.ineq[k] >= -active_tol {
            cols.push(Col::In(k));
        }
    }
    for i in 0..n {
        if lower[i].is_finite() && (x[i] - lower[i]) * scale[i] <= active_tol {
            cols.push(Col::Lo(i));
        }
        if upper[i].is_finite() && (upper[i] - x[i]) * scale[i] <= active_tol {
            cols.push(Col::Up(i));
        }
    }
    let g = DVector::from_fn(n, |i, _| grads.grad[i] / scale[i]);
    let column = |c: Col| -> DVector<f64> {
        match c {
            Col::Eq(k) => DVector::from_fn(n, |i, _| grads.jac_eq[(k, i)] / scale[i]),
            Col::In(k) => DVector::from_fn(n, |i, _| grads.jac_in[(k, i)] / scale[i]),
            Col::Lo(j) => DVector::from_fn(n, |i, _| if i == j { -1.0 / scale[i] } else { 0.0 }),
            Col::Up(j) => DVector::from_fn(n, |i, _| if i == j { 1.0 / scale[i] } else { 0.0 }),
        }
    };
    loop {
        let mut lam = DVector::zeros(cols.len());
        let mut res = g.clone();
        if !cols.is_empty() {
            let mut a = DMatrix::zeros(n, cols.len());
            for (j, c) in cols.iter().enumerate() {
                a.set_column(j, &column(*c));
            }
            let svd = a.clone().svd(true, true);
            let tol = 1e-12 * svd.singular_values.max().max(1e-300);
            lam = svd.solve(&(-&g), tol).unwrap_or_else(|_| DVector::zeros(cols.len()));
            res = &g + &a * &lam;
        }
        // drop the most negative sign-constrained multiplier
        let worst = cols
            .iter()
            .enumerate()
            .filter(|(_, c)| !matches!(c, Col::Eq(_)))
            .map(|(j, _)| (j, lam[j]))
            .filter(|(_, l)| *l < -1e-12)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = worst {
            cols.remove(j);
            continue;
        }
        let mut m = Multipliers {
            eq: DVector::zeros(me),
            ineq: DVector::zeros(mi),
            lower: DVector::zeros(n),
            upper: DVector::zeros(n),
            residual: res.component_mul(&DVector::from_column_slice(scale)).norm(),
        };
        for (j, c) in cols.iter().enumerate() {
            match *c {
                Col::Eq(k) => m.eq[k] = lam[j],
                Col::In(k) => m.ineq[k] = lam[j],
                Col::Lo(i) => m.lower[i] = lam[j],
                Col::Up(i) => m.upper[i] = lam[j],
            }
        }
        return m;
    }
}

/// Rows that can reach zero within a ball of radius `r`.
fn reachable_rows(c: &DVector<f64>, jac: &DMatrix<f64>, scale: &[f64], r: f64) -> Vec<usize> {
    (0..c.len())
        .filter(|&k| {
            let reach = (0..scale.len())
                .map(|i| (jac[(k, i)] / scale[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            c[k] + 1.01 * r * reach >= 0.0
        })
        .collect()
}

fn step_box(x: &[f64], lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        x.iter().zip(lower).map(|(x, l)| l - x).collect(),
        x.iter().zip(upper).map(|(x, u)| u - x).collect(),
    )
}

/// Result of the feasibility step.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalStep {
    pub d: DVector<f64>,
    /// Attained residual of each equality row.
    pub beta_eq: DVector<f64>,
    /// Attained violation of each inequality row (zero for unreachable rows).
    pub beta_in: DVector<f64>,
}

/// `min ||g_lin(d)||^2` within `||D d|| <= xi alpha` and the box.
#[allow(clippy::too_many_arguments)]
pub fn vertical_subproblem(
    x: &[f64],
    eval: &Evaluation,
    grads: &Gradients,
    lower: &[f64],
    upper: &[f64],
    scale: &[f64],
    radius: f64,
) -> Result<VerticalStep> {
    let n = x.len();
    let me = eval.eq.len();
    let mi = eval.ineq.len();
    if eval.violation_norm() == 0.0 {
        return Ok(VerticalStep {
            d: DVector::zeros(n),
            beta_eq: DVector::zeros(me),
            beta_in: DVector::zeros(mi),
        });
    }
    let rows = reachable_rows(&eval.ineq, &grads.jac_in, scale, radius);
    let nt = rows.len();
    let nv = n + nt;
    // sum_eq (g + J d)^2 + sum t^2, t >= c + J d, t >= 0
    let mut h = DMatrix::zeros(nv, nv);
    let mut q = DVector::zeros(nv);
    if me > 0 {
        let je = &grads.jac_eq;
        h.view_mut((0, 0), (n, n)).copy_from(&(je.transpose() * je * 2.0));
        q.rows_mut(0, n).copy_from(&(je.transpose() * &eval.eq * 2.0));
    }
    for k in 0..nt {
        h[(n + k, n + k)] = 2.0;
    }
    let mut p = QpProblem::new(h, q);
    let mut a = DMatrix::zeros(nt, nv);
    let mut b = DVector::zeros(nt);
    for (r, &k) in rows.iter().enumerate() {
        for i in 0..n {
            a[(r, i)] = grads.jac_in[(k, i)];
        }
        a[(r, n + r)] = -1.0;
        b[r] = -eval.ineq[k];
    }
    p.a_in = a;
    p.b_in = b;
    let (lo, hi) = step_box(x, lower, upper);
    p.lower[..n].copy_from_slice(&lo);
    p.upper[..n].copy_from_slice(&hi);
    for k in 0..nt {
        p.lower[n + k] = 0.0;
    }
    let mut d2 = scale.to_vec();
    // slack columns are outside the ball; a tiny weight keeps the ball a
    // valid convex row over all variables
    d2.extend(std::iter::repeat_n(0.0, nt));
    p.ball = Some((d2, radius));
    let sol = solve_qp(&p, &QpOptions::default())?;
    let d = sol.x.rows(0, n).into_owned();
    let beta_eq = if me > 0 {
        &eval.eq + &grads.jac_eq * &d
    } else {
        DVector::zeros(0)
    };
    let lin = &eval.ineq + &grads.jac_in * &d;
    let beta_in = DVector::from_fn(mi, |k, _| lin[k].max(0.0));
    Ok(VerticalStep { d, beta_eq, beta_in })
}

/// `min g'd + d'Hd/2` s.t. `J_eq d = J_eq d_v`, `c + J_in d <= beta_in`,
/// the box and `||D d|| <= alpha`.
#[allow(clippy::too_many_arguments)]
pub fn horizontal_subproblem(
    x: &[f64],
    eval: &Evaluation,
    grads: &Gradients,
    hessian: &DMatrix<f64>,
    vertical: &VerticalStep,
    lower: &[f64],
    upper: &[f64],
    scale: &[f64],
    alpha: f64,
) -> Result<DVector<f64>> {
    let n = x.len();
    let mut p = QpProblem::new(hessian.clone(), grads.grad.clone());
    if !eval.eq.is_empty() {
        p.a_eq = grads.jac_eq.clone();
        p.b_eq = &grads.jac_eq * &vertical.d;
    }
    let rows = reachable_rows(&eval.ineq, &grads.jac_in, scale, alpha);
    let mut a = DMatrix::zeros(rows.len(), n);
    let mut b = DVector::zeros(rows.len());
    for (r, &k) in rows.iter().enumerate() {
        a.set_row(r, &grads.jac_in.row(k));
        b[r] = vertical.beta_in[k] - eval.ineq[k];
    }
    p.a_in = a;
    p.b_in = b;
    let (lo, hi) = step_box(x, lower, upper);
    p.lower = lo;
    p.upper = hi;
    p.ball = Some((scale.to_vec(), alpha));
    match solve_qp(&p, &QpOptions::default()) {
        Ok(sol) => Ok(sol.x),
        Err(e) => {
            // the vertical step is only accurate to the solver tolerance
            debug!("horizontal step retried with relaxed rows: {e}");
            p.b_in.iter_mut().for_each(|b| *b += 1e-10 * (1.0 + b.abs()));
            Ok(solve_qp(&p, &QpOptions::default())?.x)
        }
    }
}

pub fn merit(eval: &Evaluation, eta: f64) -> f64 {
    eval.f + eta * eval.violation_norm()
}

/// Model of the merit function along `d`: quadratic objective plus the
/// penalized norm of the linearized violations.
pub fn merit_model(eval: &Evaluation, grads: &Gradients, hessian: &DMatrix<f64>, d: &DVector<f64>, eta: f64) -> f64 {
    let lin = Evaluation {
        f: 0.0,
        eq: &eval.eq + &grads.jac_eq * d,
        ineq: &eval.ineq + &grads.jac_in * d,
    };
    grads.grad.dot(d) + 0.5 * d.dot(&(hessian * d)) + eta * lin.violation_norm()
}

/// Ratio of actual to predicted merit reduction. A non-positive prediction
/// yields 1 when the merit did not rise and 0 otherwise.
pub fn merit_ratio(phi_old: f64, phi_new: f64, predicted: f64) -> f64 {
    let actual = phi_old - phi_new;
    if !phi_new.is_finite() {
        return f64::NEG_INFINITY;
    }
    if predicted <= 1e-14 * (1.0 + phi_old.abs()) {
        return if actual >= 0.0 { 1.0 } else { 0.0 };
    }
    actual / predicted
}

/// Central-difference Hessian of the Lagrangian, projected onto the PSD cone.
fn fd_hessian(
    model: &mut dyn NlpModel,
    x: &[f64],
    lam: &Multipliers,
    lower: &[f64],
    upper: &[f64],
    scale: &[f64],
    step: f64,
    evaluations: &mut usize,
) -> DMatrix<f64> {
    let n = x.len();
    let lag = |g: &Gradients| -> DVector<f64> {
        let mut v = g.grad.clone();
        if !lam.eq.is_empty() {
            v += g.jac_eq.transpose() * &lam.eq;
        }
        if !lam.ineq.is_empty() {
            v += g.jac_in.transpose() * &lam.ineq;
        }
        v
    };
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let hi = step / scale[i];
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] = (x[i] + hi).min(upper[i]);
        xm[i] = (x[i] - hi).max(lower[i]);
        let width = xp[i] - xm[i];
        if width <= 0.0 {
            continue;
        }
        let mut grad_at = |pt: &[f64]| -> Option<DVector<f64>> {
            *evaluations += 1;
            model.gradients(pt).ok().map(|g| lag(&g))
        };
        if let (Some(gp), Some(gm)) = (grad_at(&xp), grad_at(&xm)) {
            h.set_column(i, &((gp - gm) / width));
        }
    }
    psd_projection(&((&h + h.transpose()) * 0.5))
}

pub fn psd_projection(h: &DMatrix<f64>) -> DMatrix<f64> {
    if h.nrows() == 0 {
        return h.clone();
    }
    let eig = SymmetricEigen::new(h.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn converged(lam: &Multipliers, eval: &Evaluation, opts: &TraOptions) -> bool {
    lam.residual < opts.eps_stationarity && eval.violation_norm() < opts.eps_feasibility
}

/// Trust-region solve from `x0` (projected onto the box).
pub fn solve_nlp(model: &mut dyn NlpModel, x0: &[f64], opts: &TraOptions) -> Result<NlpSolution> {
    solve_nlp_from(model, x0, TrustRegionState::new(opts), opts)
}

pub fn solve_nlp_from(
    model: &mut dyn NlpModel,
    x0: &[f64],
    mut state: TrustRegionState,
    opts: &TraOptions,
) -> Result<NlpSolution> {
    let n = model.dim();
    if x0.len() != n {
        return Err(Error::Domain(format!("start has {} entries, model has {n}", x0.len())));
    }
    let (lower, upper) = model.bounds();
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Err(Error::Domain("empty variable bounds".into()));
    }
    let scale = model.scale();
    state.alpha = state.alpha.clamp(opts.alpha_min, opts.alpha_max);
    state.eta = state.eta.max(1.0);
    let mut x: Vec<f64> = x0
        .iter()
        .zip(lower.iter().zip(&upper))
        .map(|(v, (l, u))| v.clamp(*l, *u))
        .collect();
    let mut evaluations = 1;
    let mut eval = model.evaluate(&x)?;
    let mut grads = model.gradients(&x)?;
    let mut lam = estimate_multipliers(&x, &eval, &grads, &lower, &upper, &scale, opts.active_tolerance);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let status;
    let mut hessian: Option<DMatrix<f64>> = None;

    loop {
        if converged(&lam, &eval, opts) {
            status = NlpStatus::Optimal;
            break;
        }
        if iterations >= opts.max_iterations {
            status = terminal_status(&eval, opts);
            break;
        }
        iterations += 1;
        state.itr += 1;

        let h = match hessian.take() {
            Some(h) => h,
            None => {
                let model_h = match opts.hessian {
                    HessianMode::Model => model
                        .hessian(&x, lam.eq.as_slice(), lam.ineq.as_slice())
                        .transpose()?
                        .map(|h| psd_projection(&((&h + h.transpose()) * 0.5))),
                    HessianMode::FiniteDifference => None,
                };
                match model_h {
                    Some(h) => h,
                    None => fd_hessian(model, &x, &lam, &lower, &upper, &scale, opts.fd_step, &mut evaluations),
                }
            }
        };

        let step = vertical_subproblem(&x, &eval, &grads, &lower, &upper, &scale, opts.xi * state.alpha)
            .and_then(|v| {
                let d = horizontal_subproblem(&x, &eval, &grads, &h, &v, &lower, &upper, &scale, state.alpha)?;
                Ok((v, d))
            });
        let (_, d) = match step {
            Ok(s) => s,
            Err(e) => {
                debug!("sub-problem failed at alpha {:.3e}: {e}", state.alpha);
                hessian = Some(h);
                let next = state.alpha * 0.25;
                if next < opts.alpha_min {
                    state.alpha = opts.alpha_min;
                    status = terminal_status(&eval, opts);
                    break;
                }
                state.alpha = next;
                continue;
            }
        };

        // penalty update
        state.eta = state.eta.max(2.0 * (lam.max_abs() + 1.0));
        let viol = eval.violation_norm();
        let lin_viol = merit_model(&eval, &grads, &DMatrix::zeros(n, n), &d, 1.0) - grads.grad.dot(&d);
        let vred = viol - lin_viol;
        let qf = grads.grad.dot(&d) + 0.5 * d.dot(&(&h * &d));
        if vred > 1e-14 && qf > 0.0 {
            let need = qf / (0.5 * vred);
            if state.eta < need {
                state.eta = need * 1.5;
            }
        }
        let phi_old = merit(&eval, state.eta);
        let predicted = state.eta * viol - merit_model(&eval, &grads, &h, &d, state.eta);

        let x_trial: Vec<f64> = x
            .iter()
            .zip(d.iter())
            .zip(lower.iter().zip(&upper))
            .map(|((x, d), (l, u))| (x + d).clamp(*l, *u))
            .collect();
        evaluations += 1;
        let trial = model.evaluate(&x_trial);
        let (pi, phi_new, trial) = match trial {
            Ok(t) => {
                let phi = merit(&t, state.eta);
                (merit_ratio(phi_old, phi, predicted), phi, Some(t))
            }
            Err(e) => {
                debug!("trial point rejected: {e}");
                (f64::NEG_INFINITY, f64::INFINITY, None)
            }
        };
        let step_norm = d.iter().zip(&scale).map(|(d, s)| (d * s).powi(2)).sum::<f64>().sqrt();
        // a null step makes no progress; treat it like a rejection
        let accepted = pi >= 0.1 && step_norm > 1e-3 * opts.alpha_min;
        trace!(
            "tra {iterations}: alpha {:.3e} pi {pi:.3} phi {phi_old:.9e} |g| {viol:.2e}",
            state.alpha
        );
        trace.push(TraceEntry {
            itr: iterations,
            alpha: state.alpha,
            pi,
            merit: phi_old,
            merit_trial: phi_new,
            violation: viol,
            accepted,
        });
        if accepted {
            x = x_trial;
            eval = trial.expect("accepted trial was evaluated");
            grads = model.gradients(&x)?;
            lam = estimate_multipliers(&x, &eval, &grads, &lower, &upper, &scale, opts.active_tolerance);
            if pi > 0.75 && step_norm > 0.5 * state.alpha {
                state.alpha = (state.alpha * 2.0).min(opts.alpha_max);
            }
        } else {
            hessian = Some(h);
            let next = state.alpha * 0.25;
            if next < opts.alpha_min {
                state.alpha = opts.alpha_min;
                status = if converged(&lam, &eval, opts) {
                    NlpStatus::Optimal
                } else {
                    terminal_status(&eval, opts)
                };
                break;
            }
            state.alpha = next;
        }
    }

    Ok(NlpSolution {
        objective: eval.f,
        x,
        evaluation: eval,
        multipliers: lam,
        status,
        iterations,
        state,
        trace,
        evaluations,
    })
}

/// View of a model with some variables held at given values.
pub struct FixedVars<'m, M: NlpModel + ?Sized> {
    pub inner: &'m mut M,
    /// `Some(v)` pins the variable at `v`.
    pub fixed: Vec<Option<f64>>,
    free: Vec<usize>,
}

impl<'m, M: NlpModel + ?Sized> FixedVars<'m, M> {
    pub fn new(inner: &'m mut M, fixed: Vec<Option<f64>>) -> Self {
        let free = (0..fixed.len()).filter(|&i| fixed[i].is_none()).collect();
        Self { inner, fixed, free }
    }

    pub fn expand(&self, y: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }

    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| x[i]).collect()
    }
}

impl<M: NlpModel + ?Sized> NlpModel for FixedVars<'_, M> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.inner.bounds();
        (self.restrict(&lo), self.restrict(&hi))
    }

    fn scale(&self) -> Vec<f64> {
        self.restrict(&self.inner.scale())
    }

    fn evaluate(&mut self, y: &[f64]) -> Result<Evaluation> {
        let x = self.expand(y);
        self.inner.evaluate(&x)
    }

    fn gradients(&mut self, y: &[f64]) -> Result<Gradients> {
        let x = self.expand(y);
        let g = self.inner.gradients(&x)?;
        let pick = |m: &DMatrix<f64>| m.select_columns(self.free.iter());
        Ok(Gradients {
            grad: g.grad.select_rows(self.free.iter()),
            jac_eq: pick(&g.jac_eq),
            jac_in: pick(&g.jac_in),
        })
    }

    fn hessian(&mut self, y: &[f64], lambda_eq: &[f64], lambda_in: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let x = self.expand(y);
        let free = self.free.clone();
        self.inner
            .hessian(&x, lambda_eq, lambda_in)
            .map(|h| h.map(|h| h.select_rows(free.iter()).select_columns(free.iter())))
    }
}

fn terminal_status(eval: &Evaluation, opts: &TraOptions) -> NlpStatus {
    if eval.violation_norm() < opts.eps_feasibility {
        NlpStatus::IterationLimit
    } else {
        NlpStatus::Infeasible
    }
}
