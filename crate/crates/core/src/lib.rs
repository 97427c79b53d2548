//! Simulation and analysis toolkit for entanglement-based BBM92 quantum key
//! distribution with tomography-driven passive polarization-basis compensation.

pub mod channel;
pub mod correction;
pub mod error;
pub mod harness;
pub mod optics;
pub mod protocol;
pub mod qstate;
pub mod timetag;
pub mod tomography;

pub use error::{Error, Result};
