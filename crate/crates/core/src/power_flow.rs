//! Newton power flow on the current-mismatch form.
//!
//! Unknowns are the stacked bus voltages `[V_x; V_y]` plus one reactive
//! output per voltage-control device. The Jacobian of the mismatch
//! `Y V - I(V, W)` is `Y - A`, where `A` is assembled from the same device
//! blocks used by the perturbed model.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{pi_at_ratio, pq_blocks, turn_ratio, ControlMode, ControlVector, Network, OltcMaps};
use crate::phasor::Phasor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-8,
            max_halvings: 4,
        }
    }
}

/// Solved steady state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<Phasor>,
    /// Net current injected by devices, loads and the OLTC at each bus.
    pub i_injected: Vec<Phasor>,
    pub v_primary: Phasor,
    pub i_primary: Phasor,
    pub p_upstream: f64,
    pub q_upstream: f64,
    /// `Y_l (V_from - V_to)` per line.
    pub line_currents: Vec<Phasor>,
    /// Power delivered by each continuous device.
    pub device_power: Vec<Phasor>,
    pub iterations: usize,
    pub residual: f64,
}

impl OperatingPoint {
    pub fn v_magnitudes(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm()).collect()
    }
}

/// Per-bus injection and its 2x2 voltage derivative.
pub(crate) struct Injections {
    pub current: Vec<Phasor>,
    pub blocks: Vec<[[f64; 2]; 2]>,
    pub device_power: Vec<Phasor>,
    pub device_current: Vec<Phasor>,
}

fn add_block(dst: &mut [[f64; 2]; 2], src: [[f64; 2]; 2]) {
    for r in 0..2 {
        for c in 0..2 {
            dst[r][c] += src[r][c];
        }
    }
}

/// Evaluate every injection at voltages `v`. `q_vc` holds the reactive output
/// of voltage-control devices (indexed by device).
pub(crate) fn injections(
    net: &Network,
    controls: &ControlVector,
    maps: &OltcMaps,
    v: &[Phasor],
    q_vc: &[f64],
) -> Injections {
    let n = net.n_buses();
    let mut current = vec![Phasor::ZERO; n];
    let mut blocks = vec![[[0.0; 2]; 2]; n];
    let ib = net.interface_bus;
    current[ib] += maps.injection(v[ib], net.upstream.v_th);
    add_block(&mut blocks[ib], maps.a_block());
    for load in &net.loads {
        current[load.bus] += load.injection(v[load.bus]);
        add_block(&mut blocks[load.bus], load.a_block(v[load.bus]));
    }
    for (cb, &st) in net.capacitors.iter().zip(&controls.cb_steps) {
        current[cb.bus] += cb.injection_relaxed(st, v[cb.bus]);
        add_block(&mut blocks[cb.bus], cb.a_block(st));
    }
    let mut device_power = Vec::with_capacity(net.devices.len());
    let mut device_current = Vec::with_capacity(net.devices.len());
    for (k, d) in net.devices.iter().enumerate() {
        let q = match d.mode {
            ControlMode::PowerControl => controls.q_g[k],
            ControlMode::VoltageControl => q_vc[k],
        };
        let s = Phasor::new(controls.p_g[k], q);
        let vb = v[d.bus];
        let i = s.conj() / vb.conj();
        current[d.bus] += i;
        add_block(&mut blocks[d.bus], pq_blocks(vb, i, [[0.0; 2]; 2]).0);
        device_power.push(s);
        device_current.push(i);
    }
    Injections {
        current,
        blocks,
        device_power,
        device_current,
    }
}

/// `Y_stack - A` with `A` block-diagonal per bus.
pub(crate) fn network_jacobian(y: &DMatrix<f64>, blocks: &[[[f64; 2]; 2]]) -> DMatrix<f64> {
    let n = blocks.len();
    let mut j = y.clone();
    for (b, blk) in blocks.iter().enumerate() {
        j[(b, b)] -= blk[0][0];
        j[(b, n + b)] -= blk[0][1];
        j[(n + b, b)] -= blk[1][0];
        j[(n + b, n + b)] -= blk[1][1];
    }
    j
}

fn stack(v: &[Phasor]) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].x } else { v[i - n].y })
}

fn vc_devices(net: &Network) -> Vec<usize> {
    net.devices
        .iter()
        .enumerate()
        .filter(|(_, d)| d.mode == ControlMode::VoltageControl)
        .map(|(k, _)| k)
        .collect()
}

struct Residual {
    f: DVector<f64>,
    inj: Injections,
}

fn residual(
    net: &Network,
    controls: &ControlVector,
    maps: &OltcMaps,
    y_line: &DMatrix<f64>,
    vc: &[usize],
    v: &[Phasor],
    q_vc: &[f64],
) -> Residual {
    let n = v.len();
    let inj = injections(net, controls, maps, v, q_vc);
    let yv = y_line * stack(v);
    let mut f = DVector::zeros(2 * n + vc.len());
    for b in 0..n {
        f[b] = yv[b] - inj.current[b].x;
        f[n + b] = yv[n + b] - inj.current[b].y;
    }
    for (r, &k) in vc.iter().enumerate() {
        let vb = v[net.devices[k].bus];
        f[2 * n + r] = vb.norm_sqr() - controls.v_set[k] * controls.v_set[k];
    }
    Residual { f, inj }
}

pub fn solve_power_flow(
    net: &Network,
    controls: &ControlVector,
    initial: Option<&OperatingPoint>,
) -> Result<OperatingPoint> {
    solve_power_flow_with(net, controls, initial, &PowerFlowOptions::default())
}

pub fn solve_power_flow_with(
    net: &Network,
    controls: &ControlVector,
    initial: Option<&OperatingPoint>,
    opts: &PowerFlowOptions,
) -> Result<OperatingPoint> {
    let n = net.n_buses();
    let maps = net.transformers.injection_maps(&controls.taps, &net.upstream)?;
    let y_line = net.line_admittance().stacked();
    let vc = vc_devices(net);
    let (mut v, mut q_vc) = match initial {
        Some(op) if op.v.len() == n => (
            op.v.clone(),
            op.device_power.iter().map(|s| s.y).collect::<Vec<_>>(),
        ),
        _ => (vec![Phasor::ONE; n], vec![0.0; net.devices.len()]),
    };
    if q_vc.len() != net.devices.len() {
        q_vc = vec![0.0; net.devices.len()];
    }

    let mut res = residual(net, controls, &maps, &y_line, &vc, &v, &q_vc);
    let mut norm = res.f.amax();
    let mut iterations = 0;
    let mut polish = 0;
    loop {
        if !norm.is_finite() {
            return Err(Error::Divergence {
                iterations,
                residual: norm,
            });
        }
        if norm < opts.tolerance {
            // Newton is quadratic here; one or two more steps take the
            // residual to round-off.
            if polish >= 2 || norm < 1e-13 {
                break;
            }
            polish += 1;
        }
        if iterations >= opts.max_iterations {
            if norm < opts.tolerance {
                break;
            }
            return Err(Error::Divergence {
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let m = 2 * n + vc.len();
        let mut jac = DMatrix::zeros(m, m);
        jac.view_mut((0, 0), (2 * n, 2 * n))
            .copy_from(&network_jacobian(&y_line, &res.inj.blocks));
        for (r, &k) in vc.iter().enumerate() {
            let b = net.devices[k].bus;
            let vb = v[b];
            // dI/dQ = M^-1 [0, 1]^T
            let m2 = vb.norm_sqr();
            jac[(b, 2 * n + r)] = -vb.y / m2;
            jac[(n + b, 2 * n + r)] = vb.x / m2;
            jac[(2 * n + r, b)] = 2.0 * vb.x;
            jac[(2 * n + r, n + b)] = 2.0 * vb.y;
        }
        let step = jac
            .lu()
            .solve(&res.f)
            .ok_or_else(|| Error::singular("power-flow Jacobian is singular"))?;
        let mut scale = 1.0;
        let mut accepted = None;
        for attempt in 0..=opts.max_halvings {
            let mut v_new = v.clone();
            for b in 0..n {
                v_new[b] -= Phasor::new(step[b], step[n + b]).scale(scale);
            }
            let mut q_new = q_vc.clone();
            for (r, &k) in vc.iter().enumerate() {
                q_new[k] -= scale * step[2 * n + r];
            }
            let trial = residual(net, controls, &maps, &y_line, &vc, &v_new, &q_new);
            let tn = trial.f.amax();
            trace!("pf iter {iterations} scale {scale} residual {tn:.3e}");
            let last = attempt == opts.max_halvings;
            if (tn.is_finite() && tn < norm) || last {
                accepted = Some((v_new, q_new, trial, tn));
                break;
            }
            scale *= 0.5;
        }
        let (v_new, q_new, trial, tn) = accepted.expect("loop always accepts");
        if polish > 0 && tn >= norm {
            break;
        }
        v = v_new;
        q_vc = q_new;
        res = trial;
        norm = tn;
    }
    debug!("power flow converged in {iterations} iterations, residual {norm:.3e}");
    Ok(finish(net, &maps, controls, v, res.inj, norm, iterations))
}

fn finish(
    net: &Network,
    maps: &OltcMaps,
    controls: &ControlVector,
    v: Vec<Phasor>,
    inj: Injections,
    residual: f64,
    iterations: usize,
) -> OperatingPoint {
    let ib = net.interface_bus;
    let vs = v[ib];
    let is = maps.injection(vs, net.upstream.v_th);
    let (v_primary, i_primary) = match net
        .transformers
        .pi(&controls.taps)
        .and_then(|pi| crate::network::transmission_matrix(&pi))
    {
        Ok(t) => (t[0][0] * vs + t[0][1] * is, t[1][0] * vs + t[1][1] * is),
        Err(_) => (Phasor::ZERO, Phasor::ZERO),
    };
    let s_p = v_primary * i_primary.conj();
    let line_currents = net
        .lines
        .iter()
        .map(|l| l.admittance() * (v[l.from] - v[l.to]))
        .collect();
    OperatingPoint {
        v,
        i_injected: inj.current,
        v_primary,
        i_primary,
        p_upstream: s_p.x,
        q_upstream: s_p.y,
        line_currents,
        device_power: inj.device_power,
        iterations,
        residual,
    }
}

/// Market prices for one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    /// Active energy from upstream (currency per MWh).
    pub active: f64,
    /// Reactive energy from upstream (currency per MVArh).
    pub reactive: f64,
}

/// `tau S_base (rho_A P_p + rho_R Q_p + sum_der rho_i P_g)`.
pub fn evaluate_cost(net: &Network, op: &OperatingPoint, prices: &Prices, tau: f64) -> f64 {
    let der: f64 = net
        .devices
        .iter()
        .zip(&op.device_power)
        .filter(|(d, _)| d.dispatchable_active())
        .map(|(d, s)| d.price * s.x)
        .sum();
    tau * net.s_base_mva * (prices.active * op.p_upstream + prices.reactive * op.q_upstream + der)
}

/// Active power balance of a solved point, in pu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub line_copper: f64,
    pub transformer_copper: f64,
    pub core: f64,
    pub demand: f64,
    pub generation: f64,
}

impl Losses {
    pub fn copper(&self) -> f64 {
        self.line_copper + self.transformer_copper
    }
}

/// Split of the losses into line and transformer series (copper) losses
/// and transformer core losses; the core branch of each unit sits between
/// the ideal ratio and the secondary half of the series impedance.
pub fn losses(net: &Network, op: &OperatingPoint, controls: &ControlVector) -> Result<Losses> {
    let line_copper = net
        .lines
        .iter()
        .zip(&op.line_currents)
        .map(|(l, i)| i.norm_sqr() * l.r)
        .sum();
    let vp = op.v_primary;
    let vs = op.v[net.interface_bus];
    let mut core = 0.0;
    let mut secondary = Phasor::ZERO;
    for (u, &t) in net.transformers.units.iter().zip(&controls.taps) {
        let pi = pi_at_ratio(u, turn_ratio(t, u.delta_u), net.transformers.law)?;
        let i_s = pi.y_series * (vp - vs) - pi.y_shunt_secondary * vs;
        secondary = secondary + i_s;
        let v_core = vs + u.z_series_nominal().scale(0.5) * i_s;
        core += v_core.norm_sqr() / u.r_core;
    }
    let through = op.p_upstream - (vs * secondary.conj()).x;
    let demand = net
        .loads
        .iter()
        .map(|l| l.power(op.v[l.bus].norm()).map(|p| p.0))
        .sum::<Result<f64>>()?;
    let generation = op.device_power.iter().map(|s| s.x).sum();
    Ok(Losses {
        line_copper,
        transformer_copper: through - core,
        core,
        demand,
        generation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    VoltageHigh,
    VoltageLow,
    LineCurrent,
    DeviceCapacity,
    PvAngle,
    WindFloor,
    SvrCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Bus, line or device index.
    pub index: usize,
    pub magnitude: f64,
}

/// Original (nonlinear) operating constraints evaluated at a solved point.
/// Voltage and current violations are in pu; DER capacity is reported on the
/// squared form `P^2 + Q^2 - S^2`.
pub fn check_feasibility(net: &Network, op: &OperatingPoint, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, index, magnitude: f64| {
        if magnitude > tol {
            out.push(Violation {
                kind,
                index,
                magnitude,
            });
        }
    };
    for (b, (bus, v)) in net.buses.iter().zip(&op.v).enumerate() {
        let m = v.norm();
        push(ViolationKind::VoltageHigh, b, m - bus.v_max);
        push(ViolationKind::VoltageLow, b, bus.v_min - m);
    }
    for (l, (line, i)) in net.lines.iter().zip(&op.line_currents).enumerate() {
        if let Some(imax) = line.ampacity {
            push(ViolationKind::LineCurrent, l, i.norm() - imax);
        }
    }
    use crate::network::DeviceKind::*;
    for (k, (d, s)) in net.devices.iter().zip(&op.device_power).enumerate() {
        let cap = d.capacity;
        match d.kind {
            Der => {
                push(ViolationKind::DeviceCapacity, k, s.norm_sqr() - cap * cap);
                if let Some(a) = d.alpha_max_pv {
                    push(ViolationKind::PvAngle, k, s.y.abs() - a.tan() * s.x);
                }
            }
            Svr => push(ViolationKind::SvrCapacity, k, s.y.abs() - cap),
            Pv => {
                push(ViolationKind::DeviceCapacity, k, s.norm_sqr() - cap * cap);
                let t = d.alpha_max_pv.unwrap_or(0.0).tan();
                push(ViolationKind::PvAngle, k, s.y.abs() - t * s.x);
            }
            Wind => {
                push(ViolationKind::DeviceCapacity, k, s.norm_sqr() - cap * cap);
                push(ViolationKind::WindFloor, k, d.q_min_wind.unwrap_or(f64::NEG_INFINITY) - s.y);
            }
        }
    }
    out
}
