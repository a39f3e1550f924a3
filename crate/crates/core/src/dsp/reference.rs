use super::{DspError, Scalar};

/// In-phase and quadrature reference values, `2 sin θ` and `2 cos θ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadraturePair<T> {
    pub qx: T,
    pub qy: T,
}

/// Reference pair for sample `n` of a period of `m` samples at harmonic `k`.
///
/// The phase index is reduced modulo `m` in integer arithmetic before the
/// conversion to an angle, so the reference never drifts however long the
/// run is.
pub fn reference_pair<T: Scalar>(n: u64, m: u32, k: u32) -> Result<QuadraturePair<T>, DspError> {
    if m < 3 {
        return Err(DspError::TooFewSamplesPerPeriod(m));
    }
    if k < 1 {
        return Err(DspError::InvalidHarmonic(k));
    }
    Ok(pair_at(phase_index(n, m, k), m))
}

#[inline]
fn phase_index(n: u64, m: u32, k: u32) -> u32 {
    let m = m as u64;
    (((n % m) * (k as u64 % m)) % m) as u32
}

fn pair_at<T: Scalar>(index: u32, m: u32) -> QuadraturePair<T> {
    let theta = T::TAU() * T::lit(index as f64) / T::lit(m as f64);
    let two = T::lit(2.0);
    QuadraturePair { qx: two * theta.sin(), qy: two * theta.cos() }
}

/// Mixes one signal sample with a reference pair.
#[inline]
pub fn mix<T: Scalar>(s: T, q: QuadraturePair<T>) -> (T, T) {
    (q.qx * s, q.qy * s)
}

/// Precomputed reference pairs for one period, bit-identical to [`reference_pair`].
#[derive(Debug, Clone)]
pub struct ReferenceTable<T> {
    pairs: Vec<QuadraturePair<T>>,
}

impl<T: Scalar> ReferenceTable<T> {
    pub fn new(m: u32) -> Result<Self, DspError> {
        if m < 3 {
            return Err(DspError::TooFewSamplesPerPeriod(m));
        }
        Ok(Self { pairs: (0..m).map(|i| pair_at(i, m)).collect() })
    }

    /// Samples per period.
    pub fn period(&self) -> u32 {
        self.pairs.len() as u32
    }

    /// Pair at phase index `index` (`0 ≤ index < m`) of the fundamental.
    #[inline]
    pub fn at(&self, index: u32) -> QuadraturePair<T> {
        self.pairs[index as usize]
    }

    #[inline]
    pub fn get(&self, n: u64, k: u32) -> QuadraturePair<T> {
        self.pairs[phase_index(n, self.period(), k) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quarter_and_half_period_values() {
        let q: QuadraturePair<f64> = reference_pair(0, 200, 1).unwrap();
        assert_eq!((q.qx, q.qy), (0.0, 2.0));
        let q: QuadraturePair<f64> = reference_pair(50, 200, 1).unwrap();
        assert_abs_diff_eq!(q.qx, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.qy, 0.0, epsilon = 1e-15);
        let q: QuadraturePair<f64> = reference_pair(50, 200, 2).unwrap();
        assert_abs_diff_eq!(q.qx, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.qy, -2.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_short_period_and_zero_harmonic() {
        assert_eq!(reference_pair::<f64>(0, 2, 1), Err(DspError::TooFewSamplesPerPeriod(2)));
        assert_eq!(reference_pair::<f64>(0, 200, 0), Err(DspError::InvalidHarmonic(0)));
        assert!(ReferenceTable::<f64>::new(2).is_err());
    }

    #[test]
    fn no_phase_drift_at_large_sample_index() {
        let n = 200 * 10_000_000_000u64 + 50;
        let q: QuadraturePair<f64> = reference_pair(n, 200, 1).unwrap();
        assert_abs_diff_eq!(q.qx, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let table = ReferenceTable::<f64>::new(667).unwrap();
        for n in (0..5000).step_by(7) {
            for k in 1..6 {
                assert_eq!(table.get(n, k), reference_pair(n, 667, k).unwrap());
            }
        }
    }

    #[test]
    fn mixing_a_locked_sine_averages_to_its_amplitude() {
        // brute force over one period
        let m = 200;
        let s0 = 3.7;
        let (mut sx, mut sy) = (0.0, 0.0);
        for n in 0..m {
            let s = s0 * (std::f64::consts::TAU * n as f64 / m as f64).sin();
            let (x0, y0) = mix(s, reference_pair(n, m as u32, 1).unwrap());
            sx += x0;
            sy += y0;
        }
        assert_abs_diff_eq!(sx / m as f64, s0, epsilon = 1e-12);
        assert_abs_diff_eq!(sy / m as f64, 0.0, epsilon = 1e-12);
        assert_eq!(mix(0.0, QuadraturePair { qx: 2.0, qy: -2.0 }), (0.0, -0.0));
        assert_eq!(mix(1.0, QuadraturePair { qx: 2.0, qy: 0.0 }), (2.0, 0.0));
    }
}
