//! Network description in engineering units, converted to per unit on load.
//!
//! Bus ids in the file are 1-based labels; the loaded [`Network`] indexes
//! buses by position, in ascending id order.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::network::{
    Bus, CapacitorBank, ContinuousDevice, ControlMode, DeviceKind, ImpedanceLaw, Line, Network, TransformerBank,
    TransformerUnit, UpstreamThevenin, ZipShares, ZpLoad,
};
use crate::phasor::Phasor;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    #[serde(default)]
    pub name: String,
    pub s_base_mva: f64,
    pub v_base_kv: f64,
    /// Bus fed by the transformer secondary.
    pub interface_bus: usize,
    #[serde(default)]
    pub defaults: Defaults,
    pub upstream: UpstreamSection,
    pub transformers: TransformerSection,
    #[serde(default, rename = "bus")]
    pub buses: Vec<BusRecord>,
    #[serde(rename = "line")]
    pub lines: Vec<LineRecord>,
    #[serde(default, rename = "load")]
    pub loads: Vec<LoadRecord>,
    #[serde(default, rename = "capacitor")]
    pub capacitors: Vec<CapacitorRecord>,
    #[serde(default, rename = "device")]
    pub devices: Vec<DeviceRecord>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    #[serde(default = "default_vmin")]
    pub v_min: f64,
    #[serde(default = "default_vmax")]
    pub v_max: f64,
    /// Line rating applied where a line gives none (A).
    #[serde(default)]
    pub ampacity_a: Option<f64>,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            v_min: default_vmin(),
            v_max: default_vmax(),
            ampacity_a: None,
        }
    }
}

fn default_vmin() -> f64 {
    0.95
}

fn default_vmax() -> f64 {
    1.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpstreamSection {
    /// pu
    pub v_th: f64,
    /// `[r, x]` in pu
    pub z_th: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSection {
    #[serde(default)]
    pub law: ImpedanceLaw,
    #[serde(rename = "unit")]
    pub units: Vec<UnitRecord>,
}

/// Nameplate in pu on the unit's own rating.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitRecord {
    pub capacity_mva: f64,
    pub x: f64,
    pub r: f64,
    pub x_m: f64,
    pub r_c: f64,
    pub tap_min: i32,
    pub tap_max: i32,
    pub delta_u_percent: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: usize,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub ampacity_a: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRecord {
    pub bus: usize,
    pub p_kw: f64,
    pub q_kvar: f64,
    /// ZIP shares `[Z, I, P]` of the active demand.
    pub zip_p: Option<[f64; 3]>,
    pub zip_q: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorRecord {
    pub bus: usize,
    /// Rating at 1 pu with every step in.
    pub kvar: f64,
    pub steps: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceRecord {
    pub name: String,
    pub kind: DeviceKind,
    pub bus: usize,
    pub s_kva: f64,
    /// Currency per MWh.
    #[serde(default)]
    pub price: f64,
    #[serde(default)]
    pub mode: ControlMode,
    pub angle_limit_deg: Option<f64>,
    pub q_min_kvar: Option<f64>,
    #[serde(default)]
    pub p_available_kw: f64,
}

/// Default ZIP shares when a load gives none: constant power.
const CONSTANT_POWER: [f64; 3] = [0.0, 0.0, 1.0];

pub fn parse_network(text: &str, context: &str) -> Result<NetworkFile> {
    toml::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        message: e.to_string(),
    })
}

pub fn load_network(text: &str, context: &str) -> Result<Network> {
    parse_network(text, context)?.to_network()
}

impl NetworkFile {
    pub fn to_network(&self) -> Result<Network> {
        if !(self.s_base_mva > 0.0 && self.v_base_kv > 0.0) {
            return Err(Error::validation("base power and voltage must be positive"));
        }
        let z_base = self.v_base_kv * self.v_base_kv / self.s_base_mva;
        let i_base_a = self.s_base_mva * 1e3 / (3f64.sqrt() * self.v_base_kv);
        let kw = |x: f64| x / (1e3 * self.s_base_mva);

        let mut ids: Vec<usize> = self.lines.iter().flat_map(|l| [l.from, l.to]).collect();
        ids.extend(self.buses.iter().map(|b| b.id));
        ids.push(self.interface_bus);
        ids.sort_unstable();
        ids.dedup();
        let index: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let at = |id: usize, what: &str| -> Result<usize> {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::validation(format!("{what} refers to unknown bus {id}")))
        };

        let mut buses: Vec<Bus> = ids
            .iter()
            .map(|&id| Bus {
                id,
                v_min: self.defaults.v_min,
                v_max: self.defaults.v_max,
            })
            .collect();
        for b in &self.buses {
            let k = at(b.id, "bus record")?;
            if let Some(v) = b.v_min {
                buses[k].v_min = v;
            }
            if let Some(v) = b.v_max {
                buses[k].v_max = v;
            }
        }

        let lines = self
            .lines
            .iter()
            .map(|l| {
                Ok(Line {
                    from: at(l.from, "line")?,
                    to: at(l.to, "line")?,
                    r: l.r_ohm / z_base,
                    x: l.x_ohm / z_base,
                    ampacity: l.ampacity_a.or(self.defaults.ampacity_a).map(|a| a / i_base_a),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let units = self
            .transformers
            .units
            .iter()
            .map(|u| {
                // own rating to system base
                let k = self.s_base_mva / u.capacity_mva;
                TransformerUnit {
                    capacity_mva: u.capacity_mva,
                    x_series: u.x * k,
                    r_series: u.r * k,
                    x_magnetizing: u.x_m * k,
                    r_core: u.r_c * k,
                    tap_min: u.tap_min,
                    tap_max: u.tap_max,
                    delta_u: u.delta_u_percent / 100.0,
                }
            })
            .collect();

        let loads = self
            .loads
            .iter()
            .map(|l| {
                let share = |v: Option<[f64; 3]>| {
                    let [zeta, mu, kappa] = v.unwrap_or(CONSTANT_POWER);
                    ZipShares { zeta, mu, kappa }.to_zp().map(|z| z.0)
                };
                Ok(ZpLoad {
                    bus: at(l.bus, "load")?,
                    p_d0: kw(l.p_kw),
                    q_d0: kw(l.q_kvar),
                    zeta_p: share(l.zip_p)?,
                    zeta_q: share(l.zip_q)?,
                    v0: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let capacitors = self
            .capacitors
            .iter()
            .map(|c| {
                if c.steps == 0 {
                    return Err(Error::validation("capacitor needs at least one step"));
                }
                Ok(CapacitorBank {
                    bus: at(c.bus, "capacitor")?,
                    step_admittance: kw(c.kvar) / f64::from(c.steps),
                    step_count_max: c.steps,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let devices = self
            .devices
            .iter()
            .map(|d| {
                Ok(ContinuousDevice {
                    name: d.name.clone(),
                    kind: d.kind,
                    bus: at(d.bus, "device")?,
                    capacity: kw(d.s_kva),
                    price: d.price,
                    mode: d.mode,
                    q_min_wind: d.q_min_kvar.map(kw),
                    alpha_max_pv: d.angle_limit_deg.map(f64::to_radians),
                    p_available: kw(d.p_available_kw),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let net = Network {
            s_base_mva: self.s_base_mva,
            v_base_kv: self.v_base_kv,
            buses,
            lines,
            transformers: TransformerBank {
                units,
                law: self.transformers.law,
            },
            interface_bus: at(self.interface_bus, "interface_bus")?,
            upstream: UpstreamThevenin {
                v_th: self.upstream.v_th,
                z_th: Phasor::new(self.upstream.z_th[0], self.upstream.z_th[1]),
            },
            devices,
            capacitors,
            loads,
        };
        net.validate()?;
        Ok(net)
    }
}
