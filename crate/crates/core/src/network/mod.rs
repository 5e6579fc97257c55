//! Per-unit feeder description and admittance assembly.

mod devices;
mod load;
mod transformer;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use devices::{
    pq_blocks, pq_injection, CapacitorBank, ContinuousDevice, ControlMode, DeviceKind,
};
pub use load::{zip_to_zp, zp_load_power, ZipShares, ZpLoad};
pub use transformer::{
    aggregate_parallel, pi_at_ratio, transformer_pi, transmission_matrix, turn_ratio,
    ImpedanceLaw, OltcMaps, PiModel, TransformerBank, TransformerUnit, UpstreamThevenin,
};

use crate::error::{Error, Result};
use crate::phasor::Phasor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External label used in files and reports.
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Ampacity `I^max` (pu); `None` leaves the line unconstrained.
    #[serde(default)]
    pub ampacity: Option<f64>,
}

impl Line {
    pub fn admittance(&self) -> Phasor {
        Phasor::new(self.r, self.x).inv()
    }
}

/// Immutable feeder model. Bus indices are positions in `buses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub transformers: TransformerBank,
    /// Bus fed by the OLTC secondary.
    pub interface_bus: usize,
    pub upstream: UpstreamThevenin,
    pub devices: Vec<ContinuousDevice>,
    pub capacitors: Vec<CapacitorBank>,
    pub loads: Vec<ZpLoad>,
}

/// One entry of the flat control vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlVar {
    Tap(usize),
    Step(usize),
    ActivePower(usize),
    ReactivePower(usize),
    VoltageSetpoint(usize),
}

impl ControlVar {
    pub fn is_integer(self) -> bool {
        matches!(self, ControlVar::Tap(_) | ControlVar::Step(_))
    }
}

/// Set-points of every controllable quantity. Taps and steps are carried as
/// reals so that relaxed node problems can be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub taps: Vec<f64>,
    pub cb_steps: Vec<f64>,
    /// Active output per device (fixed for non-dispatchable units).
    pub p_g: Vec<f64>,
    /// Reactive output per device in power-control mode.
    pub q_g: Vec<f64>,
    /// Terminal voltage set-point per device in voltage-control mode.
    pub v_set: Vec<f64>,
}

impl ControlVector {
    pub fn is_integral(&self) -> bool {
        self.taps
            .iter()
            .chain(&self.cb_steps)
            .all(|v| (v - v.round()).abs() < 1e-9)
    }
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::validation("network has no buses"));
        }
        if !(self.s_base_mva > 0.0) {
            return Err(Error::validation("base power must be positive"));
        }
        if self.interface_bus >= n {
            return Err(Error::validation("interface bus out of range"));
        }
        for b in &self.buses {
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                return Err(Error::validation(format!("bus {}: invalid voltage limits", b.id)));
            }
        }
        for l in &self.lines {
            if l.from >= n || l.to >= n || l.from == l.to {
                return Err(Error::validation(format!(
                    "line {}-{} has invalid endpoints",
                    l.from, l.to
                )));
            }
            if !(l.r >= 0.0) || (l.r == 0.0 && l.x == 0.0) {
                return Err(Error::validation("line impedance must be nonzero"));
            }
        }
        self.transformers.validate()?;
        self.upstream.validate()?;
        for d in &self.devices {
            d.validate()?;
            if d.bus >= n {
                return Err(Error::validation(format!("{}: bus out of range", d.name)));
            }
        }
        for c in &self.capacitors {
            c.validate()?;
            if c.bus >= n {
                return Err(Error::validation("capacitor bus out of range"));
            }
        }
        for l in &self.loads {
            l.validate()?;
            if l.bus >= n {
                return Err(Error::validation("load bus out of range"));
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            adj[l.from].push(l.to);
            adj[l.to].push(l.from);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.interface_bus];
        seen[self.interface_bus] = true;
        while let Some(b) = stack.pop() {
            for &o in &adj[b] {
                if !seen[o] {
                    seen[o] = true;
                    stack.push(o);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(b) => Err(Error::validation(format!(
                "bus {} is not connected to the interface bus",
                self.buses[b].id
            ))),
            None => Ok(()),
        }
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Flat ordering of decision variables: movable taps, steps, dispatchable active
    /// outputs, then per device either its reactive output or its voltage
    /// set-point.
    pub fn control_layout(&self) -> Vec<ControlVar> {
        let mut vars: Vec<ControlVar> = (0..self.transformers.len())
            .filter(|&t| {
                let u = &self.transformers.units[t];
                u.tap_min < u.tap_max
            })
            .map(ControlVar::Tap)
            .collect();
        vars.extend((0..self.capacitors.len()).map(ControlVar::Step));
        for (k, d) in self.devices.iter().enumerate() {
            if d.dispatchable_active() {
                vars.push(ControlVar::ActivePower(k));
            }
        }
        for (k, d) in self.devices.iter().enumerate() {
            vars.push(match d.mode {
                ControlMode::PowerControl => ControlVar::ReactivePower(k),
                ControlMode::VoltageControl => ControlVar::VoltageSetpoint(k),
            });
        }
        vars
    }

    /// Static box of one decision variable.
    pub fn control_bounds(&self, var: ControlVar) -> (f64, f64) {
        match var {
            ControlVar::Tap(t) => {
                let u = &self.transformers.units[t];
                (u.tap_min as f64, u.tap_max as f64)
            }
            ControlVar::Step(c) => (0.0, self.capacitors[c].step_count_max as f64),
            ControlVar::ActivePower(d) => (0.0, self.devices[d].capacity),
            ControlVar::ReactivePower(d) => {
                let dev = &self.devices[d];
                dev.q_bounds(dev.fixed_active())
            }
            ControlVar::VoltageSetpoint(d) => {
                let b = &self.buses[self.devices[d].bus];
                (b.v_min, b.v_max)
            }
        }
    }

    /// Trust-region scale of one variable: taps in pu volts, steps in pu vars.
    pub fn control_scale(&self, var: ControlVar) -> f64 {
        match var {
            ControlVar::Tap(t) => self.transformers.units[t].delta_u,
            ControlVar::Step(c) => self.capacitors[c].step_admittance,
            _ => 1.0,
        }
    }

    /// All-zero set-points: nominal taps, no steps, no dispatch, 1 pu targets.
    pub fn zero_controls(&self) -> ControlVector {
        ControlVector {
            taps: vec![0.0; self.transformers.len()],
            cb_steps: vec![0.0; self.capacitors.len()],
            p_g: self.devices.iter().map(ContinuousDevice::fixed_active).collect(),
            q_g: vec![0.0; self.devices.len()],
            v_set: vec![1.0; self.devices.len()],
        }
    }

    pub fn flatten(&self, c: &ControlVector) -> Vec<f64> {
        self.control_layout().iter().map(|&v| Self::get(c, v)).collect()
    }

    pub fn unflatten(&self, base: &ControlVector, w: &[f64]) -> ControlVector {
        let mut c = base.clone();
        for (&var, &x) in self.control_layout().iter().zip(w) {
            Self::set(&mut c, var, x);
        }
        c
    }

    pub fn get(c: &ControlVector, var: ControlVar) -> f64 {
        match var {
            ControlVar::Tap(k) => c.taps[k],
            ControlVar::Step(k) => c.cb_steps[k],
            ControlVar::ActivePower(k) => c.p_g[k],
            ControlVar::ReactivePower(k) => c.q_g[k],
            ControlVar::VoltageSetpoint(k) => c.v_set[k],
        }
    }

    pub fn set(c: &mut ControlVector, var: ControlVar, x: f64) {
        match var {
            ControlVar::Tap(k) => c.taps[k] = x,
            ControlVar::Step(k) => c.cb_steps[k] = x,
            ControlVar::ActivePower(k) => c.p_g[k] = x,
            ControlVar::ReactivePower(k) => c.q_g[k] = x,
            ControlVar::VoltageSetpoint(k) => c.v_set[k] = x,
        }
    }

    pub fn check_controls(&self, c: &ControlVector) -> Result<()> {
        let nd = self.devices.len();
        if c.taps.len() != self.transformers.len()
            || c.cb_steps.len() != self.capacitors.len()
            || c.p_g.len() != nd
            || c.q_g.len() != nd
            || c.v_set.len() != nd
        {
            return Err(Error::domain("control vector does not match the device inventory"));
        }
        for var in self.control_layout() {
            let (lo, hi) = self.control_bounds(var);
            let x = Self::get(c, var);
            let tol = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
            if !(x >= lo - tol && x <= hi + tol) {
                return Err(Error::domain(format!("{var:?} = {x} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Lines only; the transformer bank is handled as a Norton source at the
    /// interface bus.
    pub fn line_admittance(&self) -> ComplexMatrix {
        let mut y = ComplexMatrix::zeros(self.buses.len());
        for l in &self.lines {
            let yl = l.admittance();
            y.add(l.from, l.from, yl);
            y.add(l.to, l.to, yl);
            y.add(l.from, l.to, -yl);
            y.add(l.to, l.from, -yl);
        }
        y
    }

    /// Bus admittance including the aggregated transformer π model seen
    /// through the upstream Thevenin impedance as a shunt at the interface.
    pub fn bus_admittance(&self, taps: &[f64]) -> Result<ComplexMatrix> {
        let maps = self.transformers.injection_maps(taps, &self.upstream)?;
        let mut y = self.line_admittance();
        y.add(self.interface_bus, self.interface_bus, -maps.c);
        Ok(y)
    }
}

/// Dense square complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    n: usize,
    data: Vec<Phasor>,
}

impl ComplexMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Phasor::ZERO; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> Phasor {
        self.data[r * self.n + c]
    }

    pub fn add(&mut self, r: usize, c: usize, v: Phasor) {
        self.data[r * self.n + c] += v;
    }

    pub fn mul_vec(&self, v: &[Phasor]) -> Vec<Phasor> {
        (0..self.n)
            .map(|r| {
                (0..self.n).fold(Phasor::ZERO, |acc, c| acc + self.get(r, c) * v[c])
            })
            .collect()
    }

    /// `[[G, -B], [B, G]]` acting on `[x; y]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                let z = self.get(r, c);
                if z == Phasor::ZERO {
                    continue;
                }
                m[(r, c)] = z.x;
                m[(r, n + c)] = -z.y;
                m[(n + r, c)] = z.y;
                m[(n + r, n + c)] = z.x;
            }
        }
        m
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn unit(x: f64, xm: f64, taps: i32) -> TransformerUnit {
        TransformerUnit {
            capacity_mva: 3.0,
            x_series: x,
            r_series: 0.006,
            x_magnetizing: xm,
            r_core: 400.0,
            tap_min: -taps,
            tap_max: taps,
            delta_u: 0.01,
        }
    }

    /// Four-bus chain with every device family present.
    pub fn four_bus() -> Network {
        Network {
            s_base_mva: 3.0,
            v_base_kv: 12.66,
            buses: (1..=4)
                .map(|id| Bus {
                    id,
                    v_min: 0.95,
                    v_max: 1.05,
                })
                .collect(),
            lines: vec![
                Line { from: 0, to: 1, r: 0.02, x: 0.015, ampacity: Some(2.0) },
                Line { from: 1, to: 2, r: 0.03, x: 0.02, ampacity: Some(2.0) },
                Line { from: 1, to: 3, r: 0.025, x: 0.03, ampacity: None },
            ],
            transformers: TransformerBank {
                units: vec![unit(0.1, 390.0, 2)],
                law: ImpedanceLaw::Linear,
            },
            interface_bus: 0,
            upstream: UpstreamThevenin {
                v_th: 1.0,
                z_th: Phasor::new(0.02, 0.1),
            },
            devices: vec![
                ContinuousDevice {
                    name: "der".into(),
                    kind: DeviceKind::Der,
                    bus: 2,
                    capacity: 0.3,
                    price: 60.0,
                    mode: ControlMode::PowerControl,
                    q_min_wind: None,
                    alpha_max_pv: None,
                    p_available: 0.0,
                },
                ContinuousDevice {
                    name: "svr".into(),
                    kind: DeviceKind::Svr,
                    bus: 3,
                    capacity: 0.2,
                    price: 0.0,
                    mode: ControlMode::PowerControl,
                    q_min_wind: None,
                    alpha_max_pv: None,
                    p_available: 0.0,
                },
            ],
            capacitors: vec![CapacitorBank {
                bus: 3,
                step_admittance: 0.03,
                step_count_max: 4,
            }],
            loads: vec![
                ZpLoad { bus: 2, p_d0: 0.3, q_d0: 0.12, zeta_p: 0.55, zeta_q: 0.8, v0: 1.0 },
                ZpLoad { bus: 3, p_d0: 0.25, q_d0: 0.15, zeta_p: 0.55, zeta_q: 0.8, v0: 1.0 },
            ],
        }
    }
}
