//! Bundled datasets.

use crate::error::Result;
use crate::io::{load_network, load_scenario};
use crate::network::Network;
use crate::scenario::Scenario;

/// IEEE 33-bus feeder behind two parallel OLTC transformers.
pub const IEEE33_NETWORK: &str = include_str!("../data/ieee33.toml");

pub fn ieee33() -> Result<Network> {
    load_network(IEEE33_NETWORK, "ieee33.toml")
}

/// Synthetic 24-hour residential load and price profile.
pub const RESIDENTIAL24_SCENARIO: &str = include_str!("../data/residential24.toml");

pub fn residential24() -> Result<Scenario> {
    load_scenario(RESIDENTIAL24_SCENARIO, "residential24.toml")
}
