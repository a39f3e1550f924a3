//! The virtual instrument.
//!
//! [`Emulator`] is the single-owner sample loop; [`runtime`] runs one on a worker thread
//! behind command and frame queues.

mod config;
mod device;
pub mod runtime;

pub use config::{ClockMode, ConfigError, InstrumentConfig, ReferenceMode, ANALOGUE_OUTPUT_CUTOFF_HZ, FRAME_INTERVAL};
pub use device::{AnalogueOutput, Emulator, Input};
