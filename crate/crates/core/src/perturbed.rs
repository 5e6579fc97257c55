//! Linearization of the network around a solved operating point.
//!
//! Every device is a voltage-dependent current source. Around the anchor
//! `(V, I)` the injections satisfy `dI = A dV + B dW`, the network satisfies
//! `dI = Y dV`, hence `dV = (Y - A)^-1 B dW`. Voltage-control devices have
//! no usable `A` block; their two rows are replaced by the set-point and
//! active-power equations instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ControlMode, ControlVar, ControlVector, DeviceKind, Network, OltcMaps};
use crate::phasor::Phasor;
use crate::power_flow::{injections, OperatingPoint};

#[derive(Debug, Clone)]
pub struct PerturbedModel {
    pub layout: Vec<ControlVar>,
    /// Device blocks `dI/dV` (stacked, block-diagonal per bus). Voltage-control
    /// devices are excluded.
    pub a_matrix: DMatrix<f64>,
    /// `dI/dW`, 2N x N_W.
    pub b_matrix: DMatrix<f64>,
    /// `Y - A` with the rows of voltage-control buses substituted.
    pub system: DMatrix<f64>,
    /// Right-hand side matching `system`.
    pub rhs: DMatrix<f64>,
    /// `dV/dW` (stacked, 2N x N_W).
    pub sensitivity: DMatrix<f64>,
    pub anchor: OperatingPoint,
    pub controls: ControlVector,
    y_line: DMatrix<f64>,
    maps: OltcMaps,
}

fn stamp(m: &mut DMatrix<f64>, n: usize, bus: usize, blk: [[f64; 2]; 2]) {
    m[(bus, bus)] += blk[0][0];
    m[(bus, n + bus)] += blk[0][1];
    m[(n + bus, bus)] += blk[1][0];
    m[(n + bus, n + bus)] += blk[1][1];
}

/// Build `A`, `B` and the sensitivity at a solved anchor.
pub fn assemble(net: &Network, anchor: &OperatingPoint, controls: &ControlVector) -> Result<PerturbedModel> {
    let n = net.n_buses();
    let layout = net.control_layout();
    let nw = layout.len();
    let maps = net.transformers.injection_maps(&controls.taps, &net.upstream)?;
    let y_line = net.line_admittance().stacked();
    let vc: Vec<usize> = net
        .devices
        .iter()
        .enumerate()
        .filter(|(_, d)| d.mode == ControlMode::VoltageControl)
        .map(|(k, _)| k)
        .collect();

    // A: the injection blocks minus those of voltage-control devices
    let q_vc: Vec<f64> = anchor.device_power.iter().map(|s| s.y).collect();
    let inj = injections(net, controls, &maps, &anchor.v, &q_vc);
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for (b, blk) in inj.blocks.iter().enumerate() {
        stamp(&mut a, n, b, *blk);
    }
    for &k in &vc {
        let d = &net.devices[k];
        let (blk, _) = crate::network::pq_blocks(anchor.v[d.bus], inj.device_current[k], [[0.0; 2]; 2]);
        stamp(&mut a, n, d.bus, blk.map(|r| r.map(|x| -x)));
    }

    let v_th = net.upstream.v_th;
    let mut b = DMatrix::zeros(2 * n, nw);
    for (j, var) in layout.iter().enumerate() {
        let (bus, col) = match *var {
            ControlVar::Tap(t) => {
                let ib = net.interface_bus;
                (ib, maps.b_column(t, anchor.v[ib], v_th))
            }
            ControlVar::Step(c) => {
                let cb = &net.capacitors[c];
                (cb.bus, cb.b_column(anchor.v[cb.bus]))
            }
            ControlVar::ActivePower(d) | ControlVar::ReactivePower(d) => {
                let dev = &net.devices[d];
                if dev.mode == ControlMode::VoltageControl {
                    continue;
                }
                let (_, minv) = crate::network::pq_blocks(anchor.v[dev.bus], inj.device_current[d], [[0.0; 2]; 2]);
                let c = usize::from(matches!(var, ControlVar::ReactivePower(_)));
                (dev.bus, [minv[0][c], minv[1][c]])
            }
            ControlVar::VoltageSetpoint(_) => continue,
        };
        b[(bus, j)] += col[0];
        b[(n + bus, j)] += col[1];
    }

    let mut system = &y_line - &a;
    let mut rhs = b.clone();
    voltage_control_substitute(net, anchor, &layout, &inj.device_current, &vc, &mut system, &mut rhs)?;

    let lu = system.clone().lu();
    let sensitivity = match lu.solve(&rhs) {
        Some(s) if s.iter().all(|x| x.is_finite()) => s,
        _ => return Err(Error::singular(format!("Y - A is singular near bus {}", weakest_bus(&system, net)))),
    };
    Ok(PerturbedModel {
        layout,
        a_matrix: a,
        b_matrix: b,
        system,
        rhs,
        sensitivity,
        anchor: anchor.clone(),
        controls: controls.clone(),
        y_line,
        maps,
    })
}

fn weakest_bus(m: &DMatrix<f64>, net: &Network) -> usize {
    let n = net.n_buses();
    let svd = m.clone().svd(false, true);
    let vt = match svd.v_t {
        Some(v) => v,
        None => return net.buses[0].id,
    };
    let k = svd.singular_values.imin();
    let row = vt.row(k);
    let mut best = 0;
    for i in 0..2 * n {
        if row[i].abs() > row[best].abs() {
            best = i;
        }
    }
    net.buses[best % n].id
}

/// Replace the two rows of each voltage-control bus by
/// `V^ . dI_vc + I^ . dV = dP_g` (with `dI_vc` read from the network row) and
/// `V^ . dV = |V^| d|V|`.
pub fn voltage_control_substitute(
    net: &Network,
    anchor: &OperatingPoint,
    layout: &[ControlVar],
    device_current: &[Phasor],
    vc: &[usize],
    system: &mut DMatrix<f64>,
    rhs: &mut DMatrix<f64>,
) -> Result<()> {
    let n = net.n_buses();
    for &k in vc {
        let d = &net.devices[k];
        let bus = d.bus;
        if vc.iter().filter(|&&o| net.devices[o].bus == bus).count() > 1 {
            return Err(Error::singular(format!(
                "bus {} holds two voltage-controlled devices",
                net.buses[bus].id
            )));
        }
        let v = anchor.v[bus];
        let i = device_current[k];
        let (rx, ry) = (bus, n + bus);
        // row 1: V . [(Y - A) dV - B dW]_bus + I . dV = dP
        let mut sys_row = system.row(rx) * v.x + system.row(ry) * v.y;
        sys_row[bus] += i.x;
        sys_row[n + bus] += i.y;
        let mut rhs_row = rhs.row(rx) * v.x + rhs.row(ry) * v.y;
        for (j, var) in layout.iter().enumerate() {
            if *var == ControlVar::ActivePower(k) {
                rhs_row[j] += 1.0;
            }
        }
        // row 2: Vx dVx + Vy dVy = |V| d|V|
        let mut set_row = DMatrix::zeros(1, 2 * n);
        set_row[bus] = v.x;
        set_row[n + bus] = v.y;
        let mut set_rhs = DMatrix::zeros(1, layout.len());
        for (j, var) in layout.iter().enumerate() {
            if *var == ControlVar::VoltageSetpoint(k) {
                set_rhs[j] = v.norm();
            }
        }
        system.set_row(rx, &sys_row);
        rhs.set_row(rx, &rhs_row);
        system.set_row(ry, &set_row.row(0));
        rhs.set_row(ry, &set_rhs.row(0));
    }
    Ok(())
}

impl PerturbedModel {
    pub fn n_controls(&self) -> usize {
        self.layout.len()
    }

    /// Linear voltage response to a control step.
    pub fn delta_v(&self, dw: &[f64]) -> Vec<Phasor> {
        let n = self.anchor.v.len();
        let dv = &self.sensitivity * DVector::from_column_slice(dw);
        (0..n).map(|b| Phasor::new(dv[b], dv[n + b])).collect()
    }

    /// Complex voltage sensitivity of bus `b` to control `j`.
    pub fn dv(&self, b: usize, j: usize) -> Phasor {
        let n = self.anchor.v.len();
        Phasor::new(self.sensitivity[(b, j)], self.sensitivity[(n + b, j)])
    }

    /// Current of a voltage-control device, linearized: read back from its
    /// bus row of the unsubstituted network equation.
    fn vc_current_sensitivity(&self, bus: usize, j: usize) -> Phasor {
        let n = self.anchor.v.len();
        let mut dx = -self.b_matrix[(bus, j)];
        let mut dy = -self.b_matrix[(n + bus, j)];
        for c in 0..2 * n {
            let s = self.sensitivity[(c, j)];
            if s == 0.0 {
                continue;
            }
            dx += (self.y_line[(bus, c)] - self.a_matrix[(bus, c)]) * s;
            dy += (self.y_line[(n + bus, c)] - self.a_matrix[(n + bus, c)]) * s;
        }
        Phasor::new(dx, dy)
    }

    /// `(dP_g, dQ_g)/dW` of device `d`.
    pub fn device_power_gradient(&self, net: &Network, d: usize) -> (Vec<f64>, Vec<f64>) {
        let dev = &net.devices[d];
        let nw = self.layout.len();
        let mut dp = vec![0.0; nw];
        let mut dq = vec![0.0; nw];
        for (j, var) in self.layout.iter().enumerate() {
            match *var {
                ControlVar::ActivePower(k) if k == d => dp[j] = 1.0,
                ControlVar::ReactivePower(k) if k == d => dq[j] = 1.0,
                _ => {}
            }
        }
        if dev.mode == ControlMode::VoltageControl {
            let v = self.anchor.v[dev.bus];
            let s = self.anchor.device_power[d];
            let i = (s / v).conj();
            for (j, q) in dq.iter_mut().enumerate() {
                let di = self.vc_current_sensitivity(dev.bus, j);
                let dv = self.dv(dev.bus, j);
                // Q = Vy Ix - Vx Iy
                *q = v.y * di.x - v.x * di.y - i.y * dv.x + i.x * dv.y;
            }
        }
        (dp, dq)
    }

    /// Upstream power as a quadratic function of the control step.
    pub fn quadratic_upstream_power(&self, net: &Network) -> Result<QuadraticPowerModel> {
        let nw = self.layout.len();
        let ib = net.interface_bus;
        let (t, dt) = net.transformers.transmission_with_derivatives(&self.controls.taps)?;
        let vs = self.anchor.v[ib];
        let is = self.maps.injection(vs, net.upstream.v_th);
        let vp = self.anchor.v_primary;
        let ip = self.anchor.i_primary;
        let mut lv = vec![Phasor::ZERO; nw];
        let mut li = vec![Phasor::ZERO; nw];
        for j in 0..nw {
            let dvs = self.dv(ib, j);
            let mut dis = self.maps.c * dvs;
            let mut dvp = Phasor::ZERO;
            let mut dip = Phasor::ZERO;
            if let ControlVar::Tap(k) = self.layout[j] {
                dis += self.maps.dc_dtap[k] * vs + self.maps.dd_dtap[k].scale(net.upstream.v_th);
                dvp += dt[k][0][0] * vs + dt[k][0][1] * is;
                dip += dt[k][1][0] * vs + dt[k][1][1] * is;
            }
            lv[j] = dvp + t[0][0] * dvs + t[0][1] * dis;
            li[j] = dip + t[1][0] * dvs + t[1][1] * dis;
        }
        let mut grad_p = vec![0.0; nw];
        let mut grad_q = vec![0.0; nw];
        for j in 0..nw {
            let ds = vp * li[j].conj() + lv[j] * ip.conj();
            grad_p[j] = ds.x;
            grad_q[j] = ds.y;
        }
        let mut hess_p = DMatrix::zeros(nw, nw);
        let mut hess_q = DMatrix::zeros(nw, nw);
        for j in 0..nw {
            for k in 0..nw {
                let m = lv[j] * li[k].conj() + lv[k] * li[j].conj();
                hess_p[(j, k)] = m.x;
                hess_q[(j, k)] = m.y;
            }
        }
        Ok(QuadraticPowerModel {
            grad_p,
            grad_q,
            hess_p,
            hess_q,
            dv_primary: lv,
            di_primary: li,
        })
    }
}

/// `(dP_p, dQ_p) = g . dW + 1/2 dW' H dW`; the curvature is the bilinear
/// `dV_p dI_p*` product.
#[derive(Debug, Clone)]
pub struct QuadraticPowerModel {
    pub grad_p: Vec<f64>,
    pub grad_q: Vec<f64>,
    pub hess_p: DMatrix<f64>,
    pub hess_q: DMatrix<f64>,
    pub dv_primary: Vec<Phasor>,
    pub di_primary: Vec<Phasor>,
}

impl QuadraticPowerModel {
    pub fn eval(&self, dw: &[f64]) -> (f64, f64) {
        let x = DVector::from_column_slice(dw);
        let lp: f64 = self.grad_p.iter().zip(dw).map(|(g, d)| g * d).sum();
        let lq: f64 = self.grad_q.iter().zip(dw).map(|(g, d)| g * d).sum();
        (
            lp + 0.5 * x.dot(&(&self.hess_p * &x)),
            lq + 0.5 * x.dot(&(&self.hess_q * &x)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    VoltageUpper,
    VoltageLower,
    LineCurrent,
    DerCapacity,
    SvrUpper,
    SvrLower,
    RrUpper,
    RrLower,
    AngleUpper,
    AngleLower,
    WindFloor,
}

/// One operating constraint `c(W) <= 0`, its anchor value and gradient.
/// The linearized form reads `value + coeffs . dW <= 0`, or with a slack
/// `coeffs . dW + eps = -value`, `eps >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub kind: RowKind,
    pub index: usize,
    pub value: f64,
    pub coeffs: Vec<f64>,
}

impl LinearRow {
    pub fn slack_rhs(&self) -> f64 {
        -self.value
    }

    pub fn linearized(&self, dw: &[f64]) -> f64 {
        self.value + self.coeffs.iter().zip(dw).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct LinearizedConstraintSet {
    pub rows: Vec<LinearRow>,
    /// Box on `dW`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub trust_radius: f64,
}

/// Values of every operating constraint at a solved point, in the order
/// used by [`linearize_constraints`].
pub fn constraint_values(net: &Network, op: &OperatingPoint) -> Vec<(RowKind, usize, f64)> {
    let mut out = Vec::new();
    for (b, (bus, v)) in net.buses.iter().zip(&op.v).enumerate() {
        let m2 = v.norm_sqr();
        out.push((RowKind::VoltageUpper, b, m2 - bus.v_max * bus.v_max));
        out.push((RowKind::VoltageLower, b, bus.v_min * bus.v_min - m2));
    }
    for (l, (line, i)) in net.lines.iter().zip(&op.line_currents).enumerate() {
        if let Some(imax) = line.ampacity {
            out.push((RowKind::LineCurrent, l, i.norm_sqr() - imax * imax));
        }
    }
    for (d, (dev, s)) in net.devices.iter().zip(&op.device_power).enumerate() {
        device_rows(dev, s.x, s.y, |kind, value| out.push((kind, d, value)));
    }
    out
}

fn device_rows(dev: &crate::network::ContinuousDevice, p: f64, q: f64, mut emit: impl FnMut(RowKind, f64)) {
    let cap = dev.capacity;
    match dev.kind {
        DeviceKind::Der => {
            emit(RowKind::DerCapacity, p * p + q * q - cap * cap);
            if let Some(a) = dev.alpha_max_pv {
                emit(RowKind::AngleUpper, q - a.tan() * p);
                emit(RowKind::AngleLower, -q - a.tan() * p);
            }
        }
        DeviceKind::Svr => {
            emit(RowKind::SvrUpper, q - cap);
            emit(RowKind::SvrLower, -q - cap);
        }
        DeviceKind::Pv | DeviceKind::Wind => {
            let head = (cap * cap - p * p).max(0.0).sqrt();
            emit(RowKind::RrUpper, q - head);
            emit(RowKind::RrLower, -q - head);
            if dev.kind == DeviceKind::Pv {
                let t = dev.alpha_max_pv.unwrap_or(0.0).tan();
                emit(RowKind::AngleUpper, q - t * p);
                emit(RowKind::AngleLower, -q - t * p);
            } else {
                emit(RowKind::WindFloor, dev.q_min_wind.unwrap_or(f64::NEG_INFINITY) - q);
            }
        }
    }
}

/// Linearize every operating constraint at the model anchor. Quadratic terms
/// in the perturbations are dropped.
pub fn linearize_constraints(net: &Network, model: &PerturbedModel, trust_radius: f64) -> LinearizedConstraintSet {
    let op = &model.anchor;
    let nw = model.n_controls();
    let values = constraint_values(net, op);
    let mut rows = Vec::with_capacity(values.len());
    let mut dev_grads: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; net.devices.len()];
    for (kind, index, value) in values {
        let coeffs: Vec<f64> = match kind {
            RowKind::VoltageUpper | RowKind::VoltageLower => {
                let v = op.v[index];
                let sign = if kind == RowKind::VoltageUpper { 1.0 } else { -1.0 };
                (0..nw)
                    .map(|j| {
                        let dv = model.dv(index, j);
                        sign * 2.0 * (v.x * dv.x + v.y * dv.y)
                    })
                    .collect()
            }
            RowKind::LineCurrent => {
                let line = &net.lines[index];
                let y = line.admittance();
                let i = op.line_currents[index];
                (0..nw)
                    .map(|j| {
                        let di = y * (model.dv(line.from, j) - model.dv(line.to, j));
                        2.0 * (i.x * di.x + i.y * di.y)
                    })
                    .collect()
            }
            _ => {
                let dev = &net.devices[index];
                let (dp, dq) = dev_grads[index]
                    .get_or_insert_with(|| model.device_power_gradient(net, index))
                    .clone();
                let s = op.device_power[index];
                let t = dev.alpha_max_pv.unwrap_or(0.0).tan();
                let fixed_p = !dev.dispatchable_active();
                (0..nw)
                    .map(|j| match kind {
                        RowKind::DerCapacity => 2.0 * s.x * dp[j] + 2.0 * s.y * dq[j],
                        RowKind::SvrUpper | RowKind::RrUpper => dq[j],
                        RowKind::SvrLower | RowKind::RrLower => -dq[j],
                        RowKind::AngleUpper => dq[j] - if fixed_p { 0.0 } else { t * dp[j] },
                        RowKind::AngleLower => -dq[j] - if fixed_p { 0.0 } else { t * dp[j] },
                        RowKind::WindFloor => -dq[j],
                        _ => unreachable!(),
                    })
                    .collect()
            }
        };
        rows.push(LinearRow {
            kind,
            index,
            value,
            coeffs,
        });
    }
    let w = net.flatten(&model.controls);
    let (lower, upper) = model
        .layout
        .iter()
        .zip(&w)
        .map(|(&var, &x)| {
            let (lo, hi) = net.control_bounds(var);
            (lo - x, hi - x)
        })
        .unzip();
    LinearizedConstraintSet {
        rows,
        lower,
        upper,
        trust_radius,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::four_bus;
    use crate::power_flow::solve_power_flow;

    fn anchor_controls(net: &Network) -> ControlVector {
        let mut c = net.zero_controls();
        c.taps[0] = 1.0;
        c.cb_steps[0] = 2.0;
        c.p_g[0] = 0.15;
        c.q_g[0] = 0.02;
        c.q_g[1] = 0.05;
        c
    }

    fn fd_voltage(net: &Network, c: &ControlVector, j: usize, h: f64) -> Vec<Phasor> {
        let w = net.flatten(c);
        let mut hi = w.clone();
        let mut lo = w.clone();
        hi[j] += h;
        lo[j] -= h;
        let a = solve_power_flow(net, &net.unflatten(c, &hi), None).unwrap();
        let b = solve_power_flow(net, &net.unflatten(c, &lo), None).unwrap();
        a.v.iter().zip(&b.v).map(|(x, y)| (*x - *y).scale(0.5 / h)).collect()
    }

    #[test]
    fn sensitivity_matches_power_flow_differences() {
        let net = four_bus();
        let c = anchor_controls(&net);
        let op = solve_power_flow(&net, &c, None).unwrap();
        let m = assemble(&net, &op, &c).unwrap();
        for j in 0..m.n_controls() {
            let fd = fd_voltage(&net, &c, j, 1e-4);
            let scale = fd.iter().map(|p| p.norm()).fold(0.0, f64::max);
            for (b, f) in fd.iter().enumerate() {
                assert!((m.dv(b, j) - *f).norm() <= 1e-5 * scale, "var {j} bus {b}");
            }
        }
    }

    #[test]
    fn loads_only_model_has_no_controls() {
        let mut net = four_bus();
        net.devices.clear();
        net.capacitors.clear();
        net.transformers.units[0].tap_min = 0;
        net.transformers.units[0].tap_max = 0;
        let c = net.zero_controls();
        let op = solve_power_flow(&net, &c, None).unwrap();
        let m = assemble(&net, &op, &c).unwrap();
        assert_eq!(m.n_controls(), 0);
        assert_eq!(m.b_matrix.ncols(), 0);
    }

    #[test]
    fn quadratic_power_gradient_matches_power_flow() {
        let net = four_bus();
        let c = anchor_controls(&net);
        let op = solve_power_flow(&net, &c, None).unwrap();
        let m = assemble(&net, &op, &c).unwrap();
        let q = m.quadratic_upstream_power(&net).unwrap();
        assert_eq!(q.eval(&vec![0.0; m.n_controls()]), (0.0, 0.0));
        let w = net.flatten(&c);
        let h = 1e-4;
        for j in 0..m.n_controls() {
            let mut hi = w.clone();
            let mut lo = w.clone();
            hi[j] += h;
            lo[j] -= h;
            let a = solve_power_flow(&net, &net.unflatten(&c, &hi), None).unwrap();
            let b = solve_power_flow(&net, &net.unflatten(&c, &lo), None).unwrap();
            let gp = (a.p_upstream - b.p_upstream) / (2.0 * h);
            let gq = (a.q_upstream - b.q_upstream) / (2.0 * h);
            assert!((gp - q.grad_p[j]).abs() <= 1e-4 * gp.abs().max(1e-3), "{j}: {gp} {}", q.grad_p[j]);
            assert!((gq - q.grad_q[j]).abs() <= 1e-4 * gq.abs().max(1e-3), "{j}: {gq} {}", q.grad_q[j]);
        }
    }

    #[test]
    fn voltage_row_at_upper_limit_has_zero_rhs() {
        let net = four_bus();
        let c = anchor_controls(&net);
        let op = solve_power_flow(&net, &c, None).unwrap();
        let mut net2 = net.clone();
        let m0 = op.v[2].norm();
        net2.buses[2].v_max = m0;
        let m = assemble(&net2, &op, &c).unwrap();
        let set = linearize_constraints(&net2, &m, 0.1);
        let row = set
            .rows
            .iter()
            .find(|r| r.kind == RowKind::VoltageUpper && r.index == 2)
            .unwrap();
        assert!(row.slack_rhs().abs() < 1e-15);
    }

    #[test]
    fn idle_der_capacity_row_is_inactive() {
        let net = four_bus();
        let mut c = anchor_controls(&net);
        c.p_g[0] = 0.0;
        c.q_g[0] = 0.0;
        let op = solve_power_flow(&net, &c, None).unwrap();
        let m = assemble(&net, &op, &c).unwrap();
        let set = linearize_constraints(&net, &m, 0.1);
        let row = set.rows.iter().find(|r| r.kind == RowKind::DerCapacity).unwrap();
        assert!(row.coeffs.iter().all(|&x| x == 0.0));
        assert!((row.slack_rhs() - 0.3f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn voltage_control_substitution_tracks_setpoint() {
        let mut net = four_bus();
        net.devices[1].mode = ControlMode::VoltageControl;
        let mut c = anchor_controls(&net);
        c.v_set[1] = 1.0;
        let op = solve_power_flow(&net, &c, None).unwrap();
        let m = assemble(&net, &op, &c).unwrap();
        let j = m
            .layout
            .iter()
            .position(|v| *v == ControlVar::VoltageSetpoint(1))
            .unwrap();
        let bus = net.devices[1].bus;
        let v = op.v[bus];
        let dv = m.dv(bus, j);
        // d|V| / dv_set = 1
        let dmag = (v.x * dv.x + v.y * dv.y) / v.norm();
        assert!((dmag - 1.0).abs() < 1e-10);
        let fd = fd_voltage(&net, &c, j, 1e-4);
        let scale = fd.iter().map(|p| p.norm()).fold(0.0, f64::max);
        for (b, f) in fd.iter().enumerate() {
            assert!((m.dv(b, j) - *f).norm() <= 1e-5 * scale);
        }
        // reactive output sensitivity of the regulating device
        let (_, dq) = m.device_power_gradient(&net, 1);
        let w = net.flatten(&c);
        let h = 1e-5;
        for k in 0..w.len() {
            let mut hi = w.clone();
            let mut lo = w.clone();
            hi[k] += h;
            lo[k] -= h;
            let a = solve_power_flow(&net, &net.unflatten(&c, &hi), None).unwrap();
            let b = solve_power_flow(&net, &net.unflatten(&c, &lo), None).unwrap();
            let fdq = (a.device_power[1].y - b.device_power[1].y) / (2.0 * h);
            assert!((fdq - dq[k]).abs() < 1e-5 * (1.0 + fdq.abs()), "{k}: {fdq} {}", dq[k]);
        }
    }

    #[test]
    fn voltage_control_first_order_identity() {
        let mut net = four_bus();
        net.devices[1].mode = ControlMode::VoltageControl;
        let mut c = anchor_controls(&net);
        c.v_set[1] = 1.0;
        let op = solve_power_flow(&net, &c, None).unwrap();
        let m = assemble(&net, &op, &c).unwrap();
        let bus = net.devices[1].bus;
        let j = m
            .layout
            .iter()
            .position(|v| *v == ControlVar::VoltageSetpoint(1))
            .unwrap();
        for scale in [1e-2, 1e-3] {
            let mut dw = vec![0.0; m.n_controls()];
            dw[j] = scale;
            dw[0] = 0.5 * scale / 0.01;
            let dv = m.delta_v(&dw)[bus];
            let v = op.v[bus];
            let gap = (v + dv).norm_sqr() - (v.norm() + scale).powi(2);
            assert!(gap.abs() < 10.0 * scale * scale, "{gap}");
        }
    }

    #[test]
    fn current_row_is_a_relaxation() {
        let net = four_bus();
        let c = anchor_controls(&net);
        let op = solve_power_flow(&net, &c, None).unwrap();
        let line = &net.lines[0];
        let y = line.admittance();
        let i0 = op.line_currents[0];
        let mut seed = 7u64;
        for _ in 0..200 {
            let mut r = || {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.05
            };
            let d = Phasor::new(r(), r());
            let di = y * d;
            let lin = i0.norm_sqr() + 2.0 * (i0.x * di.x + i0.y * di.y);
            let exact = (i0 + di).norm_sqr();
            assert!(lin <= exact + 1e-15);
        }
    }
}
