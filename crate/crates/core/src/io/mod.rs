//! File formats: network and scenario input, result output.

pub mod measurements;
pub mod network_file;
pub mod output;
pub mod scenario_file;

pub use network_file::{load_network, parse_network, NetworkFile};
pub use scenario_file::{load_scenario, parse_scenario, ScenarioFile};
pub use measurements::{read_measurements, Measurements};
