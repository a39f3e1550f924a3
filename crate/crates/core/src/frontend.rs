//! Behavioral model of the analogue conditioning chain and the ADC.
//!
//! Signal path: programmable gain, +1.65 V level shift, one-pole anti-alias
//! low-pass, 12-bit unipolar ADC over 0..3.3 V.

use std::fmt;

/// ADC input range, volts.
pub const FULL_SCALE_V: f64 = 3.3;
/// Level shift added after the PGA, volts.
pub const OFFSET_V: f64 = 1.65;
/// Largest ADC code.
pub const ADC_MAX_CODE: u16 = 4095;
/// Fraction of the input range at either end that raises the clip flag.
pub const CLIP_FRACTION: f64 = 0.02;
/// Default anti-alias cut-off, Hz.
pub const DEFAULT_ANTI_ALIAS_HZ: f64 = 94_000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrontEndError {
    #[error("input gain {0} not in {{0, 1, 2, 4, 8, 16, 32, 64}}")]
    InvalidGain(u32),
    #[error("input is switched off (gain 0)")]
    InputDisabled,
}

/// Programmable-gain amplifier setting; 0 switches the input off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PgaSetting(u8);

impl PgaSetting {
    pub const ALLOWED: [u8; 8] = [0, 1, 2, 4, 8, 16, 32, 64];
    pub const UNITY: PgaSetting = PgaSetting(1);

    pub fn new(gain: u32) -> Result<Self, FrontEndError> {
        Self::ALLOWED
            .iter()
            .find(|&&g| g as u32 == gain)
            .map(|&g| PgaSetting(g))
            .ok_or(FrontEndError::InvalidGain(gain))
    }

    pub fn gain(self) -> u32 {
        self.0 as u32
    }

    pub fn is_off(self) -> bool {
        self.0 == 0
    }
}

impl Default for PgaSetting {
    fn default() -> Self {
        Self::UNITY
    }
}

impl fmt::Display for PgaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 12-bit ADC result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AdcCode(u16);

impl AdcCode {
    pub fn new(code: u16) -> Option<Self> {
        (code <= ADC_MAX_CODE).then_some(AdcCode(code))
    }

    pub fn value(self) -> u16 {
        self.0
    }
}

/// Front-end options that are fixed for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontEndConfig {
    pub anti_alias_hz: f64,
    /// Skip the analogue model and the ADC entirely: the DSP sees the input exactly.
    pub bypass: bool,
    /// RMS of Gaussian noise added at the ADC input, volts. Zero by default.
    pub adc_noise_rms_v: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self { anti_alias_hz: DEFAULT_ANTI_ALIAS_HZ, bypass: false, adc_noise_rms_v: 0.0 }
    }
}

/// Four-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 4] =
    [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL_WEIGHTS: [f64; 4] =
    [0.347_854_845_137_453_8, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_8];

/// Exact one-pole update over an interval of length `dt` for a continuously varying input.
///
/// The output after the interval is `e^(−dt/T)·y + ∫ (1/T)·e^(−(dt−s)/T)·v(s) ds`; the integral
/// is evaluated by Gauss-Legendre quadrature at four nodes, with the weights rescaled so a
/// constant input is reproduced exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanIntegrator {
    dt: f64,
    decay: f64,
    offsets: [f64; 4],
    weights: [f64; 4],
}

impl SpanIntegrator {
    pub fn new(cutoff_hz: f64, dt: f64) -> Self {
        let time_constant = 1.0 / (std::f64::consts::TAU * cutoff_hz);
        let decay = (-dt / time_constant).exp();
        let mut offsets = [0.0; 4];
        let mut weights = [0.0; 4];
        for i in 0..4 {
            let s = 0.5 * dt * (1.0 + GL_NODES[i]);
            offsets[i] = s;
            weights[i] = 0.5 * dt * GL_WEIGHTS[i] / time_constant * (-(dt - s) / time_constant).exp();
        }
        let scale = (1.0 - decay) / weights.iter().sum::<f64>();
        weights.iter_mut().for_each(|w| *w *= scale);
        Self { dt, decay, offsets, weights }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time offsets within the interval at which the input is evaluated.
    pub fn offsets(&self) -> &[f64; 4] {
        &self.offsets
    }

    #[inline]
    pub fn advance(&self, state: f64, values: [f64; 4]) -> f64 {
        self.decay * state
            + self.weights[0] * values[0]
            + self.weights[1] * values[1]
            + self.weights[2] * values[2]
            + self.weights[3] * values[3]
    }
}

/// Anti-alias filter memory and the most recent clip flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontEndState {
    pub aa_state: f64,
    pub f_aa: f64,
    pub clip_low: bool,
    pub clip_high: bool,
}

impl FrontEndState {
    /// A front end that has been powered with zero input for a long time.
    pub fn settled(f_aa: f64) -> Self {
        Self { aa_state: OFFSET_V, f_aa, clip_low: false, clip_high: false }
    }

    /// PGA and level shift, before the filter.
    #[inline]
    pub fn shifted(v_in: f64, gain: PgaSetting) -> f64 {
        gain.gain() as f64 * v_in + OFFSET_V
    }

    /// Advances the anti-alias filter by `dt` with `v_in` held constant; returns the ADC input.
    pub fn condition(&mut self, v_in: f64, gain: PgaSetting, dt: f64) -> f64 {
        let decay = (-std::f64::consts::TAU * self.f_aa * dt).exp();
        let target = Self::shifted(v_in, gain);
        self.aa_state = target + (self.aa_state - target) * decay;
        self.aa_state
    }

    /// Advances the filter across one sampling interval with the input given at the
    /// integrator's quadrature nodes (already gain-scaled and level-shifted).
    #[inline]
    pub fn condition_span(&mut self, span: &SpanIntegrator, shifted: [f64; 4]) -> f64 {
        self.aa_state = span.advance(self.aa_state, shifted);
        self.aa_state
    }

    /// Samples `v_adc`, recording the clip flags.
    pub fn sample(&mut self, v_adc: f64) -> AdcCode {
        let (code, low, high) = adc_sample(v_adc);
        self.clip_low = low;
        self.clip_high = high;
        code
    }
}

/// Quantizes an ADC input voltage, reporting whether it lies in the bottom or top 2 % of range.
pub fn adc_sample(v_adc: f64) -> (AdcCode, bool, bool) {
    let margin = CLIP_FRACTION * FULL_SCALE_V;
    let clip_low = v_adc <= margin;
    let clip_high = v_adc >= FULL_SCALE_V - margin;
    let clamped = if v_adc.is_nan() { 0.0 } else { v_adc.clamp(0.0, FULL_SCALE_V) };
    let code = (clamped / FULL_SCALE_V * ADC_MAX_CODE as f64).round() as u16;
    (AdcCode(code), clip_low, clip_high)
}

/// Converts a code back to millivolts referred to the instrument input.
pub fn code_to_signal(code: AdcCode, gain: PgaSetting) -> Result<f64, FrontEndError> {
    if gain.is_off() {
        return Err(FrontEndError::InputDisabled);
    }
    let mv = code.0 as f64 / ADC_MAX_CODE as f64 * (FULL_SCALE_V * 1000.0) - OFFSET_V * 1000.0;
    Ok(mv / gain.gain() as f64)
}

/// One LSB referred to the input, millivolts.
pub fn lsb_mv(gain: PgaSetting) -> f64 {
    FULL_SCALE_V * 1000.0 / ADC_MAX_CODE as f64 / gain.gain().max(1) as f64
}
