use super::{DspError, Scalar};

/// Averages mixer outputs over exactly one reference period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncAccumulator<T> {
    sum_x: T,
    sum_y: T,
    count: u32,
    m: u32,
}

impl<T: Scalar> SyncAccumulator<T> {
    pub fn new(m: u32) -> Result<Self, DspError> {
        if m < 3 {
            return Err(DspError::TooFewSamplesPerPeriod(m));
        }
        Ok(Self { sum_x: T::zero(), sum_y: T::zero(), count: 0, m })
    }

    pub fn period(&self) -> u32 {
        self.m
    }

    /// Samples accumulated in the current period.
    pub fn count(&self) -> u32 {
        self.count
    }

    /// Adds one pair of mixer outputs; returns the period means when the period completes.
    #[inline]
    pub fn update(&mut self, x0: T, y0: T) -> Option<(T, T)> {
        self.sum_x = self.sum_x + x0;
        self.sum_y = self.sum_y + y0;
        self.count += 1;
        if self.count < self.m {
            return None;
        }
        let m = T::lit(self.m as f64);
        let out = (self.sum_x / m, self.sum_y / m);
        self.reset();
        Some(out)
    }

    pub fn reset(&mut self) {
        self.sum_x = T::zero();
        self.sum_y = T::zero();
        self.count = 0;
    }
}
