//! Digitisation schedules for internal and external referencing.

use std::fmt;

/// Lowest reference frequency the instrument accepts, Hz.
pub const MIN_REFERENCE_HZ: f64 = 1.0;
/// Highest reference frequency the instrument accepts, Hz.
pub const MAX_REFERENCE_HZ: f64 = 50_000.0;
/// Maximum ADC digitisation rate, Hz.
pub const MAX_DIGITISATION_HZ: f64 = 200_000.0;
/// Clock cycles generated per external TTL cycle by the frequency multiplier.
pub const MULTIPLIER: u32 = 64;
/// Default frequency-measurement gate time in seconds.
pub const DEFAULT_MEASUREMENT_WINDOW: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TimingError {
    #[error("reference frequency {0} Hz outside 1 Hz..50 kHz")]
    FrequencyOutOfRange(f64),
    #[error("digitisation rate must be positive, got {0} Hz")]
    InvalidDigitisationRate(f64),
    #[error("external reference frequency {0} Hz has no undersampling rung")]
    ExternalOutOfRange(f64),
    #[error("lock failure: {0}")]
    LockFailure(LockFailure),
}

/// Why the external reference could not be locked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LockFailure {
    TooFewEdges(usize),
    OutOfLockRange(f64),
    Untuned,
    InvalidWindow(f64),
}

impl fmt::Display for LockFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LockFailure::TooFewEdges(n) => write!(f, "only {n} rising edges in the gate window"),
            LockFailure::OutOfLockRange(hz) => write!(f, "{hz} Hz outside the multiplier lock range"),
            LockFailure::Untuned => write!(f, "multiplier not tuned"),
            LockFailure::InvalidWindow(w) => write!(f, "gate window {w} s is not positive"),
        }
    }
}

/// Internal reference: the reference period is an integer number of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalSchedule {
    f_d: f64,
    m: u32,
}

impl InternalSchedule {
    pub fn f_d(&self) -> f64 {
        self.f_d
    }

    /// Samples per reference period.
    pub fn samples_per_period(&self) -> u32 {
        self.m
    }

    /// Realised reference frequency `f_d / m`.
    pub fn f_r_actual(&self) -> f64 {
        self.f_d / self.m as f64
    }
}

/// Plans the internal reference closest to `f_requested`.
pub fn plan_internal(f_requested: f64, f_d: f64) -> Result<InternalSchedule, TimingError> {
    if !(MIN_REFERENCE_HZ..=MAX_REFERENCE_HZ).contains(&f_requested) {
        return Err(TimingError::FrequencyOutOfRange(f_requested));
    }
    if !(f_d > 0.0 && f_d.is_finite()) {
        return Err(TimingError::InvalidDigitisationRate(f_d));
    }
    let m = (f_d / f_requested).round().max(3.0);
    Ok(InternalSchedule { f_d, m: m as u32 })
}

/// Undersampling factor N of the external clock: every Nth multiplied edge is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Undersampling {
    /// Both edges of every clock cycle, 128 samples per TTL cycle.
    Half,
    One,
    Two,
    Four,
    Eight,
    Sixteen,
}

impl Undersampling {
    pub const ALL: [Undersampling; 6] = [
        Undersampling::Half,
        Undersampling::One,
        Undersampling::Two,
        Undersampling::Four,
        Undersampling::Eight,
        Undersampling::Sixteen,
    ];

    pub fn factor(self) -> f64 {
        match self {
            Undersampling::Half => 0.5,
            Undersampling::One => 1.0,
            Undersampling::Two => 2.0,
            Undersampling::Four => 4.0,
            Undersampling::Eight => 8.0,
            Undersampling::Sixteen => 16.0,
        }
    }

    /// Samples per TTL cycle, `64 / N`.
    pub fn samples_per_period(self) -> u32 {
        match self {
            Undersampling::Half => 128,
            Undersampling::One => 64,
            Undersampling::Two => 32,
            Undersampling::Four => 16,
            Undersampling::Eight => 8,
            Undersampling::Sixteen => 4,
        }
    }

    /// Highest TTL frequency served by this rung (inclusive).
    pub fn upper_limit_hz(self) -> f64 {
        MAX_DIGITISATION_HZ / self.samples_per_period() as f64
    }

    pub fn from_factor(n: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|u| u.factor() == n)
    }
}

/// External reference: sampling clock phase-locked to a TTL input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalSchedule {
    f_ext: f64,
    undersampling: Undersampling,
}

impl ExternalSchedule {
    /// TTL frequency the schedule was planned for, Hz.
    pub fn f_ext(&self) -> f64 {
        self.f_ext
    }

    pub fn undersampling(&self) -> Undersampling {
        self.undersampling
    }

    pub fn samples_per_period(&self) -> u32 {
        self.undersampling.samples_per_period()
    }

    pub fn f_d_effective(&self) -> f64 {
        self.samples_per_period() as f64 * self.f_ext
    }
}

/// Picks the undersampling rung giving the highest digitisation rate not above 200 kHz.
pub fn plan_external(f_ext: f64) -> Result<ExternalSchedule, TimingError> {
    if !(f_ext > 0.0 && f_ext.is_finite()) {
        return Err(TimingError::ExternalOutOfRange(f_ext));
    }
    Undersampling::ALL
        .into_iter()
        .find(|u| f_ext <= u.upper_limit_hz())
        .map(|undersampling| ExternalSchedule { f_ext, undersampling })
        .ok_or(TimingError::ExternalOutOfRange(f_ext))
}

/// Logic level of the square-wave reference output at sample `n`: high while `sin(2πn/m) ≥ 0`
/// on the first half period.
pub fn reference_square(n: u64, m: u32) -> bool {
    let m = m as u64;
    2 * (n % m) < m
}

/// Frequency range over which the simulated multiplier PLL can lock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockRange {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Whether the tuning potentiometer has been set; an untuned PLL never locks.
    pub tuned: bool,
}

impl Default for LockRange {
    fn default() -> Self {
        Self { min_hz: 130.0, max_hz: 6_000.0, tuned: true }
    }
}

impl LockRange {
    pub fn check(&self, f: f64) -> Result<(), LockFailure> {
        if !self.tuned {
            return Err(LockFailure::Untuned);
        }
        if f < self.min_hz || f > self.max_hz {
            return Err(LockFailure::OutOfLockRange(f));
        }
        Ok(())
    }
}

/// Counts rising edges with timestamps in `[0, window)` and divides by the window.
///
/// Timestamps are seconds relative to the start of the gate.
pub fn measure_external_frequency(ttl_edges: &[f64], window: f64, lock: &LockRange) -> Result<f64, TimingError> {
    if !(window > 0.0) {
        return Err(TimingError::LockFailure(LockFailure::InvalidWindow(window)));
    }
    let count = ttl_edges.iter().filter(|&&t| (0.0..window).contains(&t)).count();
    if count < 2 {
        return Err(TimingError::LockFailure(LockFailure::TooFewEdges(count)));
    }
    let f = count as f64 / window;
    lock.check(f).map_err(TimingError::LockFailure)?;
    Ok(f)
}
