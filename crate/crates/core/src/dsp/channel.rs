use super::{filter_step, mix, reference_pair, DspError, FilterCoefficient, QuadraturePair, ReferenceTable, Scalar};

/// Filter memory for one harmonic: two cascaded exponential stages per quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicChannel<T> {
    k: u32,
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> HarmonicChannel<T> {
    pub fn new(k: u32) -> Result<Self, DspError> {
        if k < 1 {
            return Err(DspError::InvalidHarmonic(k));
        }
        Ok(Self { k, x1: T::zero(), y1: T::zero(), x2: T::zero(), y2: T::zero() })
    }

    pub fn harmonic(&self) -> u32 {
        self.k
    }

    pub fn reset(&mut self) {
        *self = Self { k: self.k, x1: T::zero(), y1: T::zero(), x2: T::zero(), y2: T::zero() };
    }

    /// Mixes `s` with `q` and pushes the products through both stages.
    #[inline]
    pub fn update(&mut self, s: T, q: QuadraturePair<T>, alpha: T) {
        let (x0, y0) = mix(s, q);
        self.x1 = filter_step(self.x1, x0, alpha);
        self.y1 = filter_step(self.y1, y0, alpha);
        self.x2 = filter_step(self.x2, self.x1, alpha);
        self.y2 = filter_step(self.y2, self.y1, alpha);
    }

    pub fn output(&self) -> DemodOutput<T> {
        DemodOutput::from_xy(self.x2, self.y2)
    }
}

/// In-phase / quadrature output with derived amplitude and phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DemodOutput<T> {
    pub x2: T,
    pub y2: T,
    pub r2: T,
    pub phi2: T,
}

impl<T: Scalar> DemodOutput<T> {
    pub fn from_xy(x2: T, y2: T) -> Self {
        let (r2, phi2) = amplitude_phase(x2, y2);
        Self { x2, y2, r2, phi2 }
    }
}

/// Amplitude and four-quadrant phase in `(−π, π]`; the origin maps to phase 0.
pub fn amplitude_phase<T: Scalar>(x2: T, y2: T) -> (T, T) {
    if x2 == T::zero() && y2 == T::zero() {
        return (T::zero(), T::zero());
    }
    let r2 = x2.hypot(y2);
    let phi2 = y2.atan2(x2);
    // atan2 returns −π for a negative zero y on the negative x axis
    let phi2 = if phi2 <= -T::PI() { T::PI() } else { phi2 };
    (r2, phi2)
}

/// Advances every channel by one sample `s` taken at index `n` of an `m`-sample period.
pub fn demod_update<T: Scalar>(
    channels: &mut [HarmonicChannel<T>],
    s: T,
    n: u64,
    m: u32,
    alpha: T,
) -> Result<(), DspError> {
    for ch in channels.iter_mut() {
        let q = reference_pair(n, m, ch.k)?;
        ch.update(s, q, alpha);
    }
    Ok(())
}

/// A bank of harmonic channels sharing one reference period and filter coefficient.
#[derive(Debug, Clone)]
pub struct Demodulator<T> {
    channels: Vec<HarmonicChannel<T>>,
    table: ReferenceTable<T>,
    coefficient: FilterCoefficient<T>,
    // running phase index of each channel, and its per-sample increment, for `advance`
    cursors: Vec<u32>,
    steps: Vec<u32>,
    phase: u32,
}

impl<T: Scalar> Demodulator<T> {
    pub fn new(harmonics: &[u32], m: u32, coefficient: FilterCoefficient<T>) -> Result<Self, DspError> {
        if harmonics.is_empty() {
            return Err(DspError::NoChannels);
        }
        let mut channels: Vec<HarmonicChannel<T>> = Vec::with_capacity(harmonics.len());
        for &k in harmonics {
            if channels.iter().any(|c| c.k == k) {
                return Err(DspError::DuplicateHarmonic(k));
            }
            channels.push(HarmonicChannel::new(k)?);
        }
        let steps = channels.iter().map(|c| c.k % m).collect();
        let cursors = vec![0; channels.len()];
        Ok(Self { channels, table: ReferenceTable::new(m)?, coefficient, cursors, steps, phase: 0 })
    }

    pub fn coefficient(&self) -> &FilterCoefficient<T> {
        &self.coefficient
    }

    pub fn period(&self) -> u32 {
        self.table.period()
    }

    pub fn channels(&self) -> &[HarmonicChannel<T>] {
        &self.channels
    }

    pub fn channel(&self, k: u32) -> Option<&HarmonicChannel<T>> {
        self.channels.iter().find(|c| c.k == k)
    }

    pub fn channel_mut(&mut self, k: u32) -> Option<&mut HarmonicChannel<T>> {
        self.channels.iter_mut().find(|c| c.k == k)
    }

    pub fn set_coefficient(&mut self, coefficient: FilterCoefficient<T>) {
        self.coefficient = coefficient;
    }

    /// Positions the sample cursor used by [`Demodulator::advance`] at sample `n`.
    pub fn seek(&mut self, n: u64) {
        let m = self.table.period() as u64;
        self.phase = (n % m) as u32;
        for (cursor, ch) in self.cursors.iter_mut().zip(&self.channels) {
            *cursor = ((n % m) * (ch.k as u64 % m) % m) as u32;
        }
    }

    /// Fundamental reference pair at the cursor.
    #[inline]
    pub fn cursor_reference(&self) -> QuadraturePair<T> {
        self.table.at(self.phase)
    }

    /// Updates every channel except harmonic `skip` with the sample at the cursor, then
    /// moves the cursor on by one sample. Equivalent to `update_except(s, n, skip)` followed
    /// by `seek(n + 1)`.
    #[inline]
    pub fn advance(&mut self, s: T, skip: Option<u32>) {
        let alpha = self.coefficient.alpha();
        let m = self.table.period();
        for ((ch, cursor), step) in self.channels.iter_mut().zip(self.cursors.iter_mut()).zip(&self.steps) {
            if Some(ch.k) != skip {
                ch.update(s, self.table.at(*cursor), alpha);
            }
            *cursor += step;
            if *cursor >= m {
                *cursor -= m;
            }
        }
        self.phase += 1;
        if self.phase == m {
            self.phase = 0;
        }
    }

    /// Reference pair for the fundamental at sample `n`.
    #[inline]
    pub fn reference(&self, n: u64) -> QuadraturePair<T> {
        self.table.get(n, 1)
    }

    /// Same arithmetic as [`demod_update`] with the reference taken from the table.
    #[inline]
    pub fn update(&mut self, s: T, n: u64) {
        let alpha = self.coefficient.alpha();
        for ch in self.channels.iter_mut() {
            let q = self.table.get(n, ch.k);
            ch.update(s, q, alpha);
        }
    }

    /// Like [`Demodulator::update`] but leaves the channel for harmonic `skip` untouched.
    #[inline]
    pub fn update_except(&mut self, s: T, n: u64, skip: u32) {
        let alpha = self.coefficient.alpha();
        for ch in self.channels.iter_mut().filter(|c| c.k != skip) {
            let q = self.table.get(n, ch.k);
            ch.update(s, q, alpha);
        }
    }

    pub fn reset(&mut self) {
        self.channels.iter_mut().for_each(HarmonicChannel::reset);
    }
}
