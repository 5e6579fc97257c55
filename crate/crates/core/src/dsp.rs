//! The hourly scheduling problem in reduced form: the decision vector is the
//! flat control layout, bus voltages follow from a power flow at every
//! evaluation.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::lp::LpProblem;
use crate::network::{ControlVar, ControlVector, Network};
use crate::perturbed::{assemble, constraint_values, linearize_constraints, LinearRow};
use crate::power_flow::{evaluate_cost, solve_power_flow, OperatingPoint, Prices};
use crate::tra::{Evaluation, Gradients, NlpModel};

/// One scheduling period.
#[derive(Debug, Clone)]
pub struct Dsp<'a> {
    pub net: &'a Network,
    pub prices: Prices,
    /// Period length in hours.
    pub tau: f64,
    /// Values of controls outside the layout (fixed taps).
    pub base: ControlVector,
    pub layout: Vec<ControlVar>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    cost_unit: f64,
    last: Option<(Vec<f64>, OperatingPoint)>,
    pub pf_solves: usize,
}

impl<'a> Dsp<'a> {
    pub fn new(net: &'a Network, prices: Prices, tau: f64, base: ControlVector) -> Self {
        let layout = net.control_layout();
        let (lower, upper) = layout.iter().map(|&v| net.control_bounds(v)).unzip();
        let rho = if prices.active > 0.0 { prices.active } else { 1.0 };
        Self {
            net,
            prices,
            tau,
            base,
            layout,
            lower,
            upper,
            cost_unit: tau * net.s_base_mva * rho,
            last: None,
            pf_solves: 0,
        }
    }

    /// Currency per unit of the internal objective.
    pub fn cost_unit(&self) -> f64 {
        self.cost_unit
    }

    pub fn controls(&self, x: &[f64]) -> ControlVector {
        self.net.unflatten(&self.base, x)
    }

    pub fn flatten(&self, c: &ControlVector) -> Vec<f64> {
        self.net.flatten(c)
    }

    pub fn integer_indices(&self) -> Vec<usize> {
        (0..self.layout.len()).filter(|&j| self.layout[j].is_integer()).collect()
    }

    /// Power flow at `x`, warm-started from the previous solve.
    pub fn operating_point(&mut self, x: &[f64]) -> Result<OperatingPoint> {
        if let Some((lx, op)) = &self.last {
            if lx.as_slice() == x {
                return Ok(op.clone());
            }
        }
        let controls = self.controls(x);
        let warm = self.last.as_ref().map(|(_, op)| op);
        self.pf_solves += 1;
        let op = match solve_power_flow(self.net, &controls, warm) {
            Ok(op) => op,
            Err(_) if warm.is_some() => {
                self.pf_solves += 1;
                solve_power_flow(self.net, &controls, None)?
            }
            Err(e) => return Err(e),
        };
        self.last = Some((x.to_vec(), op.clone()));
        Ok(op)
    }

    /// Exact cost in currency.
    pub fn cost(&mut self, x: &[f64]) -> Result<f64> {
        let op = self.operating_point(x)?;
        Ok(evaluate_cost(self.net, &op, &self.prices, self.tau))
    }

    /// First-order model of cost and constraints at `x`.
    pub fn linearize(&mut self, x: &[f64]) -> Result<LinearDsp> {
        let op = self.operating_point(x)?;
        let controls = self.controls(x);
        let model = assemble(self.net, &op, &controls)?;
        let power = model.quadratic_upstream_power(self.net)?;
        let scale = self.tau * self.net.s_base_mva;
        let mut grad: Vec<f64> = power
            .grad_p
            .iter()
            .zip(&power.grad_q)
            .map(|(p, q)| scale * (self.prices.active * p + self.prices.reactive * q))
            .collect();
        for (d, dev) in self.net.devices.iter().enumerate() {
            if dev.dispatchable_active() && dev.price != 0.0 {
                let (dp, _) = model.device_power_gradient(self.net, d);
                for (g, v) in grad.iter_mut().zip(dp) {
                    *g += scale * dev.price * v;
                }
            }
        }
        let rows = linearize_constraints(self.net, &model, f64::INFINITY).rows;
        let hessian = (&power.hess_p * self.prices.active + &power.hess_q * self.prices.reactive) * scale;
        Ok(LinearDsp {
            anchor: x.to_vec(),
            cost: evaluate_cost(self.net, &op, &self.prices, self.tau),
            grad,
            rows,
            hessian,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        })
    }
}

/// Cost and constraints linearized at an anchor, in currency units.
#[derive(Debug, Clone)]
pub struct LinearDsp {
    pub anchor: Vec<f64>,
    pub cost: f64,
    pub grad: Vec<f64>,
    pub rows: Vec<LinearRow>,
    /// Curvature of the upstream purchase from the bilinear power model.
    pub hessian: DMatrix<f64>,
    /// Box of the problem the model was built from.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearDsp {
    /// Linearized cost at an absolute control vector.
    pub fn cost_at(&self, x: &[f64]) -> f64 {
        self.cost
            + self
                .grad
                .iter()
                .zip(x.iter().zip(&self.anchor))
                .map(|(g, (x, a))| g * (x - a))
                .sum::<f64>()
    }

    /// LP over absolute controls: linearized cost subject to every
    /// linearized row and the given box, intersected with the model's own.
    pub fn lp(&self, lower: &[f64], upper: &[f64]) -> LpProblem {
        let n = self.anchor.len();
        let mut p = LpProblem::new(DVector::from_column_slice(&self.grad));
        let rows: Vec<&LinearRow> = self
            .rows
            .iter()
            .filter(|r| r.coeffs.iter().any(|c| *c != 0.0) || r.value > 0.0)
            .collect();
        p.a_in = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].coeffs[c]);
        p.b_in = DVector::from_fn(rows.len(), |r, _| {
            let shift: f64 = rows[r].coeffs.iter().zip(&self.anchor).map(|(c, a)| c * a).sum();
            shift - rows[r].value
        });
        p.lower = lower.iter().zip(&self.lower).map(|(a, b)| a.max(*b)).collect();
        p.upper = upper.iter().zip(&self.upper).map(|(a, b)| a.min(*b)).collect();
        p
    }
}

impl NlpModel for Dsp<'_> {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn scale(&self) -> Vec<f64> {
        self.layout.iter().map(|&v| self.net.control_scale(v)).collect()
    }

    fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation> {
        let op = self.operating_point(x)?;
        let f = evaluate_cost(self.net, &op, &self.prices, self.tau) / self.cost_unit;
        let values: Vec<f64> = constraint_values(self.net, &op).into_iter().map(|(_, _, v)| v).collect();
        Ok(Evaluation {
            f,
            eq: DVector::zeros(0),
            ineq: DVector::from_vec(values),
        })
    }

    fn gradients(&mut self, x: &[f64]) -> Result<Gradients> {
        let lin = self.linearize(x)?;
        let n = x.len();
        Ok(Gradients {
            grad: DVector::from_iterator(n, lin.grad.iter().map(|g| g / self.cost_unit)),
            jac_eq: DMatrix::zeros(0, n),
            jac_in: DMatrix::from_fn(lin.rows.len(), n, |r, c| lin.rows[r].coeffs[c]),
        })
    }

    fn hessian(&mut self, x: &[f64], _lambda_eq: &[f64], _lambda_in: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(self.linearize(x).map(|l| l.hessian / self.cost_unit))
    }
}
