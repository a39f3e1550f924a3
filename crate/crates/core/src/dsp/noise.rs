use super::Scalar;

/// Exponentially weighted mean and variance of the amplitude output.
///
/// Incremental update: the squared deviation is taken against the mean *before*
/// this sample's update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseTracker<T> {
    pub mean_r: T,
    pub var_r: T,
}

impl<T: Scalar> NoiseTracker<T> {
    pub fn new() -> Self {
        Self { mean_r: T::zero(), var_r: T::zero() }
    }

    /// Folds in one amplitude sample and returns the standard deviation estimate.
    #[inline]
    pub fn update(&mut self, r2: T, alpha: T) -> T {
        let diff = r2 - self.mean_r;
        let incr = alpha * diff;
        self.mean_r = self.mean_r + incr;
        let var = (T::one() - alpha) * (self.var_r + diff * incr);
        self.var_r = var.max(T::zero());
        self.var_r.sqrt()
    }

    pub fn std_dev(&self) -> T {
        self.var_r.sqrt()
    }

    pub fn reset(&mut self) {
        *self = Self::new();
    }
}
