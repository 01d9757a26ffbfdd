//! Simulation and analysis toolkit for delay-interferometer receivers in
//! d-dimensional time-frequency QKD.
//!
//! - [`states`]: time-bin and frequency (DFT) states plus a brute-force DFT oracle
//! - [`optics`]: delay interferometers and the radix-2 measurement cascade
//! - [`waveform`]: sampled-envelope pulse trains, band-limited detection
//! - [`drift`]: thermal, path and laser-frequency drift forward models
//! - [`analysis`]: path recovery, curve fits and TDPS extraction
//! - [`cli`]: command-line front end

pub mod analysis;
pub mod cli;
pub mod drift;
pub mod error;
pub mod optics;
pub mod states;
pub mod waveform;

pub use error::{Error, Result};
