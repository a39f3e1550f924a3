//! Dual-phase lock-in arithmetic.
//!
//! Everything in this module is a pure state transition over explicit state,
//! generic over the floating point type. The instrument itself runs on `f64`
//! (see the aliases at the crate root); `f32` is supported for embedded-style
//! experiments and for checking that nothing silently depends on the width.

mod channel;
mod filter;
mod noise;
mod reference;
mod step;
mod sync;

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};

pub use channel::{amplitude_phase, demod_update, DemodOutput, Demodulator, HarmonicChannel};
pub use filter::{compute_alpha, filter_step, FilterCoefficient};
pub use noise::NoiseTracker;
pub use reference::{mix, reference_pair, QuadraturePair, ReferenceTable};
pub use step::step_response_model;
pub use sync::SyncAccumulator;

/// Floating point type the demodulator can run on.
pub trait Scalar: Float + FloatConst + FromPrimitive + Debug + Default + Send + Sync + 'static {
    /// Converts an `f64` constant into this type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }
}

impl<T> Scalar for T where T: Float + FloatConst + FromPrimitive + Debug + Default + Send + Sync + 'static {}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DspError {
    #[error("time constant must be positive and finite, got {0} s")]
    InvalidTimeConstant(f64),
    #[error("digitisation rate must be positive and finite, got {0} Hz")]
    InvalidSampleRate(f64),
    #[error("cut-off {f_c} Hz is not below half the digitisation rate {f_d} Hz")]
    CutoffAboveNyquist { f_c: f64, f_d: f64 },
    #[error("need at least 3 samples per reference period, got {0}")]
    TooFewSamplesPerPeriod(u32),
    #[error("harmonic number must be at least 1, got {0}")]
    InvalidHarmonic(u32),
    #[error("harmonic {0} requested twice")]
    DuplicateHarmonic(u32),
    #[error("at least one harmonic channel is required")]
    NoChannels,
}
