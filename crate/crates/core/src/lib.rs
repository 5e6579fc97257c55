//! Mixed-integer scheduling of radial distribution feeders.

pub mod bc;
pub mod data;
pub mod dsp;
pub mod error;
pub mod estimation;
pub mod io;
pub mod lp;
pub mod network;
pub mod perturbed;
pub mod phasor;
pub mod power_flow;
pub mod qp;
pub mod scenario;
pub mod tra;

pub use error::{Error, Result};
pub use phasor::Phasor;
