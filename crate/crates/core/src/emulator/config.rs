use crate::dsp::{compute_alpha, DspError};
use crate::frontend::{FrontEndConfig, PgaSetting};
use crate::protocol::{
    DEFAULT_LOWEST_HARMONIC, DEFAULT_OUTPUT_GAIN, MAX_OUTPUT_GAIN, MAX_TIME_CONSTANT, MIN_TIME_CONSTANT,
};
use crate::timing::{LockRange, DEFAULT_MEASUREMENT_WINDOW, MAX_DIGITISATION_HZ, MAX_REFERENCE_HZ, MIN_REFERENCE_HZ};

/// Interval between output frames, seconds of simulated time.
pub const FRAME_INTERVAL: f64 = 0.1;
/// Cut-off of the smoothing filter on the analogue output, Hz.
pub const ANALOGUE_OUTPUT_CUTOFF_HZ: f64 = 1.59;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMode {
    #[default]
    Internal,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    /// Simulated time runs as fast as the host allows.
    #[default]
    Accelerated,
    /// Frames are paced to the wall clock.
    RealTime,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("reference frequency {0} Hz outside 1 Hz..50 kHz")]
    Frequency(f64),
    #[error("time constant {0} s outside 0.01..10 s")]
    TimeConstant(f64),
    #[error("output gain {0} outside 0..1e6")]
    OutputGain(f64),
    #[error("lowest higher harmonic must be at least 2, got {0}")]
    Harmonic(u32),
    #[error("digitisation rate {0} Hz outside (0, 200 kHz]")]
    DigitisationRate(f64),
    #[error("frequency-measurement window must be positive, got {0} s")]
    MeasurementWindow(f64),
    #[error("invalid front-end setting: {0}")]
    FrontEnd(String),
    #[error(transparent)]
    Filter(#[from] DspError),
}

/// Everything that determines the instrument's behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentConfig {
    pub reference: ReferenceMode,
    /// Requested internal reference frequency, Hz.
    pub f_r: f64,
    pub input_gain: PgaSetting,
    pub tau: f64,
    pub sync_filter: bool,
    pub lowest_harmonic: u32,
    pub output_gain: f64,
    /// Internal digitisation rate, fixed for the lifetime of a device.
    pub f_d: f64,
    pub clock: ClockMode,
    pub front_end: FrontEndConfig,
    pub lock_range: LockRange,
    pub measurement_window: f64,
    pub analogue_cutoff_hz: f64,
    /// Seed for the optional ADC noise.
    pub seed: u64,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        Self {
            reference: ReferenceMode::Internal,
            f_r: 1000.0,
            input_gain: PgaSetting::UNITY,
            tau: 0.6,
            sync_filter: false,
            lowest_harmonic: DEFAULT_LOWEST_HARMONIC,
            output_gain: DEFAULT_OUTPUT_GAIN,
            f_d: MAX_DIGITISATION_HZ,
            clock: ClockMode::Accelerated,
            front_end: FrontEndConfig::default(),
            lock_range: LockRange::default(),
            measurement_window: DEFAULT_MEASUREMENT_WINDOW,
            analogue_cutoff_hz: ANALOGUE_OUTPUT_CUTOFF_HZ,
            seed: 0,
        }
    }
}

impl InstrumentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(MIN_REFERENCE_HZ..=MAX_REFERENCE_HZ).contains(&self.f_r) {
            return Err(ConfigError::Frequency(self.f_r));
        }
        if !(MIN_TIME_CONSTANT..=MAX_TIME_CONSTANT).contains(&self.tau) {
            return Err(ConfigError::TimeConstant(self.tau));
        }
        if !(0.0..=MAX_OUTPUT_GAIN).contains(&self.output_gain) {
            return Err(ConfigError::OutputGain(self.output_gain));
        }
        if self.lowest_harmonic < 2 {
            return Err(ConfigError::Harmonic(self.lowest_harmonic));
        }
        if !(self.f_d > 0.0 && self.f_d <= MAX_DIGITISATION_HZ) {
            return Err(ConfigError::DigitisationRate(self.f_d));
        }
        if !(self.measurement_window > 0.0 && self.measurement_window.is_finite()) {
            return Err(ConfigError::MeasurementWindow(self.measurement_window));
        }
        let fe = &self.front_end;
        if !(fe.anti_alias_hz > 0.0 && fe.anti_alias_hz.is_finite()) {
            return Err(ConfigError::FrontEnd(format!("anti-alias cut-off {} Hz", fe.anti_alias_hz)));
        }
        if !(fe.adc_noise_rms_v >= 0.0 && fe.adc_noise_rms_v.is_finite()) {
            return Err(ConfigError::FrontEnd(format!("ADC noise {} V", fe.adc_noise_rms_v)));
        }
        if !(self.analogue_cutoff_hz > 0.0 && self.analogue_cutoff_hz.is_finite()) {
            return Err(ConfigError::FrontEnd(format!("analogue output cut-off {} Hz", self.analogue_cutoff_hz)));
        }
        compute_alpha::<f64>(self.tau, self.f_d)?;
        Ok(())
    }

    /// Higher harmonics computed on every tick: 3 at 200 kHz, 7 at 100 kHz.
    pub fn harmonic_capacity(&self) -> u32 {
        ((4.0 * MAX_DIGITISATION_HZ / self.f_d).floor() as u32).clamp(4, 32) - 1
    }
}
