//! TOML scenario description: horizon records with load multipliers and
//! prices.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scenario::{CaseMode, HourRecord, Scenario, StartKind};

/// Reactive price as a fraction of the active price when a record gives
/// none.
pub const DEFAULT_REACTIVE_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    #[serde(default = "one")]
    pub tau_hours: f64,
    #[serde(default = "full")]
    pub mode: CaseMode,
    pub start: Option<StartSection>,
    #[serde(default)]
    pub hour: Vec<HourSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    pub kind: StartKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HourSection {
    #[serde(default = "one")]
    pub load: f64,
    /// Keyed by bus id.
    #[serde(default)]
    pub bus_load: BTreeMap<String, f64>,
    pub rho_a: f64,
    pub rho_r: Option<f64>,
    pub der_price: Option<f64>,
    #[serde(default)]
    pub v_th_step: f64,
}

fn one() -> f64 {
    1.0
}

fn full() -> CaseMode {
    CaseMode::Full
}

pub fn parse_scenario(text: &str, context: &str) -> Result<ScenarioFile> {
    toml::from_str(text).map_err(|e| Error::Parse {
        context: context.to_string(),
        message: e.to_string(),
    })
}

pub fn load_scenario(text: &str, context: &str) -> Result<Scenario> {
    parse_scenario(text, context)?.to_scenario()
}

impl ScenarioFile {
    pub fn to_scenario(&self) -> Result<Scenario> {
        let mut hours = Vec::with_capacity(self.hour.len());
        for (h, r) in self.hour.iter().enumerate() {
            let mut bus_load = BTreeMap::new();
            for (k, m) in &r.bus_load {
                let id = k.trim().parse::<usize>().map_err(|_| {
                    Error::validation(format!("hour {}: bus_load key '{k}' is not a bus id", h + 1))
                })?;
                bus_load.insert(id, *m);
            }
            hours.push(HourRecord {
                load: r.load,
                bus_load,
                rho_a: r.rho_a,
                rho_r: r.rho_r.unwrap_or(DEFAULT_REACTIVE_RATIO * r.rho_a),
                der_price: r.der_price,
                v_th_step: r.v_th_step,
            });
        }
        let sc = Scenario {
            name: self.name.clone(),
            tau: self.tau_hours,
            mode: self.mode,
            start: self.start.as_ref().map(|s| s.kind),
            hours,
        };
        sc.validate()?;
        Ok(sc)
    }
}
