//! Simulation and key-rate toolkit for a discrete-modulated continuous-variable
//! QKD link with probabilistic constellation shaping.
//!
//! Units: shot-noise units (SNU) throughout, vacuum quadrature variance 1.

mod error;

pub mod calibration;
pub mod channel;
pub mod constellation;
pub mod dsp;
pub mod estimation;
pub mod orchestrator;
pub mod rng;
pub mod rxdsp;
pub mod security;
pub mod trace;
pub mod txdsp;

pub use error::{Error, Result, Stage, TraceFormatError};
