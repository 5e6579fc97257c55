//! Continuous control devices and capacitor banks as voltage-dependent
//! current injections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phasor::Phasor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Der,
    Svr,
    Pv,
    Wind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    #[default]
    PowerControl,
    VoltageControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousDevice {
    pub name: String,
    pub kind: DeviceKind,
    pub bus: usize,
    /// Apparent power rating `S^n` (pu).
    pub capacity: f64,
    /// Energy price (currency per MWh); only DER output is charged.
    #[serde(default)]
    pub price: f64,
    #[serde(default)]
    pub mode: ControlMode,
    /// Reactive floor of a wind unit (pu).
    #[serde(default)]
    pub q_min_wind: Option<f64>,
    /// Maximum power angle (rad); required for PV, optional for DER.
    #[serde(default)]
    pub alpha_max_pv: Option<f64>,
    /// Uncontrolled active output of PV and wind units (pu).
    #[serde(default)]
    pub p_available: f64,
}

impl ContinuousDevice {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0) {
            return Err(Error::validation(format!("{}: capacity must be positive", self.name)));
        }
        match self.kind {
            DeviceKind::Pv => {
                let a = self.alpha_max_pv.ok_or_else(|| {
                    Error::validation(format!("{}: PV unit needs alpha_max_pv", self.name))
                })?;
                if !(a > 0.0 && a < std::f64::consts::FRAC_PI_2) {
                    return Err(Error::validation(format!(
                        "{}: alpha_max_pv must lie in (0, pi/2)",
                        self.name
                    )));
                }
            }
            DeviceKind::Wind => {
                if self.q_min_wind.is_none() {
                    return Err(Error::validation(format!("{}: wind unit needs q_min_wind", self.name)));
                }
            }
            _ => {
                if let Some(a) = self.alpha_max_pv {
                    if !(a > 0.0 && a < std::f64::consts::FRAC_PI_2) {
                        return Err(Error::validation(format!(
                            "{}: power angle limit must lie in (0, pi/2)",
                            self.name
                        )));
                    }
                }
            }
        }
        if matches!(self.kind, DeviceKind::Pv | DeviceKind::Wind)
            && !(self.p_available >= 0.0 && self.p_available <= self.capacity)
        {
            return Err(Error::validation(format!(
                "{}: available output must lie in [0, capacity]",
                self.name
            )));
        }
        Ok(())
    }

    /// Whether the active output is a decision variable.
    pub fn dispatchable_active(&self) -> bool {
        self.kind == DeviceKind::Der
    }

    /// Active output when it is not dispatchable.
    pub fn fixed_active(&self) -> f64 {
        match self.kind {
            DeviceKind::Pv | DeviceKind::Wind => self.p_available,
            _ => 0.0,
        }
    }

    /// Box on the reactive output at active output `p` (constraints that are
    /// linear once `p` is fixed). DER capacity is a separate coupled row.
    pub fn q_bounds(&self, p: f64) -> (f64, f64) {
        let s = self.capacity;
        match self.kind {
            DeviceKind::Svr | DeviceKind::Der => (-s, s),
            DeviceKind::Pv => {
                let head = (s * s - p * p).max(0.0).sqrt();
                let t = self.alpha_max_pv.unwrap_or(0.0).tan() * p;
                (-head.min(t), head.min(t))
            }
            DeviceKind::Wind => {
                let head = (s * s - p * p).max(0.0).sqrt();
                (self.q_min_wind.unwrap_or(-head).max(-head), head)
            }
        }
    }
}

/// Current injected by a device that delivers `s` into the network.
pub fn pq_injection(s: Phasor, v: Phasor) -> Phasor {
    s.conj() / v.conj()
}

/// Linearization of `S = V I*` solved for `dI`:
/// `dI = M^-1 (dS/dV - N) dV + M^-1 dS_ctrl` with
/// `M = [[Vx, Vy], [Vy, -Vx]]`, `N = [[Ix, Iy], [-Iy, Ix]]`.
///
/// Returns `(A, M^-1)`; `ds_dv` is the voltage dependence of the injected
/// power (zero for a device holding its set-point).
pub fn pq_blocks(v: Phasor, i: Phasor, ds_dv: [[f64; 2]; 2]) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    let m2 = v.norm_sqr();
    // M is symmetric with M^2 = |V|^2 I
    let minv = [[v.x / m2, v.y / m2], [v.y / m2, -v.x / m2]];
    let n = [[i.x, i.y], [-i.y, i.x]];
    let mut a = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            a[r][c] = minv[r][0] * (ds_dv[0][c] - n[0][c]) + minv[r][1] * (ds_dv[1][c] - n[1][c]);
        }
    }
    (a, minv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitorBank {
    pub bus: usize,
    /// Susceptance per step (pu).
    pub step_admittance: f64,
    pub step_count_max: u32,
}

impl CapacitorBank {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_admittance > 0.0) {
            return Err(Error::validation("capacitor step admittance must be positive"));
        }
        Ok(())
    }

    pub fn check_step(&self, st: i64) -> Result<()> {
        if st < 0 || st > i64::from(self.step_count_max) {
            return Err(Error::domain(format!(
                "capacitor step {st} outside [0, {}]",
                self.step_count_max
            )));
        }
        Ok(())
    }

    /// Injected current at an integer step.
    pub fn injection(&self, st: i64, v: Phasor) -> Result<Phasor> {
        self.check_step(st)?;
        Ok(self.injection_relaxed(st as f64, v))
    }

    /// Injected current `-j st y V` on the continuous relaxation.
    pub fn injection_relaxed(&self, st: f64, v: Phasor) -> Phasor {
        -(Phasor::J * v).scale(st * self.step_admittance)
    }

    /// `dI/dV` block.
    pub fn a_block(&self, st: f64) -> [[f64; 2]; 2] {
        let b = st * self.step_admittance;
        [[0.0, b], [-b, 0.0]]
    }

    /// `dI/dst` column.
    pub fn b_column(&self, v: Phasor) -> [f64; 2] {
        [self.step_admittance * v.y, -self.step_admittance * v.x]
    }

    /// Reactive power delivered to the network.
    pub fn reactive_power(&self, st: f64, v: Phasor) -> f64 {
        (v * self.injection_relaxed(st, v).conj()).y
    }
}
