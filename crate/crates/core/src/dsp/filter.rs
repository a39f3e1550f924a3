use super::{DspError, Scalar};

/// Weighting coefficient of a single-pole exponential filter.
///
/// Only constructible through [`compute_alpha`], so `alpha` always matches the
/// closed form for the stored time constant and digitisation rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCoefficient<T> {
    alpha: T,
    tau: f64,
    f_d: f64,
}

impl<T: Scalar> FilterCoefficient<T> {
    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Time constant in seconds.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Digitisation rate in Hz.
    pub fn f_d(&self) -> f64 {
        self.f_d
    }

    /// Cut-off frequency `1 / (2π·tau)` in Hz.
    pub fn cutoff(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.tau)
    }
}

/// Computes the exponential-filter weight for time constant `tau` at rate `f_d`.
///
/// The cut-off is `f_c = 1/(2π·tau)` and with `γ = 2π·f_c/f_d`
///
/// ```text
/// α = cos γ − 1 + √(cos²γ − 4 cos γ + 3)
/// ```
///
/// which places the −3 dB point of one stage exactly at `f_c`. The expression
/// is evaluated as `−2s + √(2s·(3 − cos γ))` with `s = sin²(γ/2)`; the two are
/// algebraically identical but the naive form loses about six digits to
/// cancellation at the small `γ` typical of long time constants.
pub fn compute_alpha<T: Scalar>(tau: f64, f_d: f64) -> Result<FilterCoefficient<T>, DspError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DspError::InvalidTimeConstant(tau));
    }
    if !(f_d > 0.0 && f_d.is_finite()) {
        return Err(DspError::InvalidSampleRate(f_d));
    }
    let f_c = 1.0 / (2.0 * std::f64::consts::PI * tau);
    if f_c >= f_d / 2.0 {
        return Err(DspError::CutoffAboveNyquist { f_c, f_d });
    }
    let gamma = T::lit(1.0 / (tau * f_d));
    let half_sin = (gamma / T::lit(2.0)).sin();
    let s = half_sin * half_sin;
    let two_s = s + s;
    let alpha = (two_s * (T::lit(3.0) - gamma.cos())).sqrt() - two_s;
    Ok(FilterCoefficient { alpha, tau, f_d })
}

/// One update of a single-pole exponential filter.
#[inline]
pub fn filter_step<T: Scalar>(state: T, input: T, alpha: T) -> T {
    state + alpha * (input - state)
}
