//! Streaming digital lock-in amplifier.
//!
//! - [`dsp`]: reference synthesis, mixing, two-stage exponential and synchronous
//!   filtering, amplitude/phase and noise estimation, generic over the float type
//! - [`timing`]: digitisation schedules for internal and external referencing
//! - [`frontend`]: behavioural model of the gain stage, offset, anti-alias filter and ADC
//! - [`protocol`]: the serial line protocol (commands and 22-field output frames)
//! - [`emulator`]: a virtual instrument tying the above into a sample loop
//! - [`lab`]: test signals, scenarios and the experiment sweeps built on them

pub mod dsp;
pub mod emulator;
pub mod frontend;
pub mod lab;
pub mod protocol;
pub mod timing;

pub use dsp::{DspError, Scalar};
pub use protocol::{Command, OutputFrame};

pub type FilterCoefficient = dsp::FilterCoefficient<f64>;
pub type QuadraturePair = dsp::QuadraturePair<f64>;
pub type HarmonicChannel = dsp::HarmonicChannel<f64>;
pub type DemodOutput = dsp::DemodOutput<f64>;
pub type Demodulator = dsp::Demodulator<f64>;
pub type NoiseTracker = dsp::NoiseTracker<f64>;
pub type SyncAccumulator = dsp::SyncAccumulator<f64>;
pub type ReferenceTable = dsp::ReferenceTable<f64>;
