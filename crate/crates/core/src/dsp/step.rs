use super::Scalar;

/// Step response of two cascaded first-order filters with time constant `tau`:
/// `r_inf · (1 − e^(−t/tau)·(1 + t/tau))`.
///
/// Used as the fitting model and as a test oracle; nothing in the signal path
/// calls it.
pub fn step_response_model<T: Scalar>(t: T, tau: T, r_inf: T) -> T {
    let x = t / tau;
    r_inf * (T::one() - (-x).exp() * (T::one() + x))
}
