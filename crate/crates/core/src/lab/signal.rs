//! Composable test signals, in millivolts at the instrument input.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Description of an input signal.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSpec {
    /// `amplitude · sin(2π·frequency·t + phase)`.
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// ±`amplitude` square wave, positive on the first half period; zero exactly on transitions.
    Square {
        amplitude: f64,
        frequency: f64,
    },
    /// Gaussian noise with one independent draw per digitisation tick.
    WhiteNoise {
        rms: f64,
        seed: u64,
    },
    Sum(Vec<SignalSpec>),
    /// `inner` switched on at `t_on`, zero before.
    StepEnvelope {
        inner: Box<SignalSpec>,
        t_on: f64,
    },
    /// The instrument's own square-wave reference output, in phase with `Q_x`, limited to
    /// the harmonics below half the digitisation rate.
    ReferenceDriven {
        amplitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("amplitude must be finite and non-negative, got {0}")]
    Amplitude(f64),
    #[error("frequency must be finite and positive, got {0}")]
    Frequency(f64),
    #[error("non-finite parameter {0}")]
    NonFinite(f64),
    #[error("cannot parse signal '{0}'")]
    Syntax(String),
}

impl SignalSpec {
    pub fn sine(amplitude: f64, frequency: f64, phase: f64) -> Self {
        SignalSpec::Sine { amplitude, frequency, phase }
    }

    pub fn square(amplitude: f64, frequency: f64) -> Self {
        SignalSpec::Square { amplitude, frequency }
    }

    pub fn noise(rms: f64, seed: u64) -> Self {
        SignalSpec::WhiteNoise { rms, seed }
    }

    pub fn step(self, t_on: f64) -> Self {
        SignalSpec::StepEnvelope { inner: Box::new(self), t_on }
    }

    pub fn plus(self, other: SignalSpec) -> Self {
        match self {
            SignalSpec::Sum(mut parts) => {
                parts.push(other);
                SignalSpec::Sum(parts)
            }
            first => SignalSpec::Sum(vec![first, other]),
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let amplitude = |a: f64| if a.is_finite() && a >= 0.0 { Ok(()) } else { Err(SignalError::Amplitude(a)) };
        let frequency = |f: f64| if f.is_finite() && f > 0.0 { Ok(()) } else { Err(SignalError::Frequency(f)) };
        match self {
            SignalSpec::Sine { amplitude: a, frequency: f, phase } => {
                amplitude(*a)?;
                frequency(*f)?;
                if phase.is_finite() {
                    Ok(())
                } else {
                    Err(SignalError::NonFinite(*phase))
                }
            }
            SignalSpec::Square { amplitude: a, frequency: f } => amplitude(*a).and(frequency(*f)),
            SignalSpec::WhiteNoise { rms, .. } => amplitude(*rms),
            SignalSpec::Sum(parts) => parts.iter().try_for_each(SignalSpec::validate),
            SignalSpec::StepEnvelope { inner, t_on } => {
                if !t_on.is_finite() {
                    return Err(SignalError::NonFinite(*t_on));
                }
                inner.validate()
            }
            SignalSpec::ReferenceDriven { amplitude: a } => amplitude(*a),
        }
    }

    /// Value at time `t` for digitisation tick `tick`, with the reference square described by
    /// `reference`. Builds a fresh evaluator; use [`Stimulus`] for streams.
    pub fn generate(&self, t: f64, tick: u64, reference: &ReferenceClock) -> f64 {
        let mut stimulus = Stimulus::new(self);
        stimulus.set_reference(*reference);
        stimulus.value(t, tick)
    }
}

impl fmt::Display for SignalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalSpec::Sine { amplitude, frequency, phase } => write!(f, "sine({amplitude},{frequency},{phase})"),
            SignalSpec::Square { amplitude, frequency } => write!(f, "square({amplitude},{frequency})"),
            SignalSpec::WhiteNoise { rms, seed } => write!(f, "noise({rms},{seed})"),
            SignalSpec::ReferenceDriven { amplitude } => write!(f, "ref({amplitude})"),
            SignalSpec::StepEnvelope { inner, t_on } => write!(f, "step({inner},{t_on})"),
            SignalSpec::Sum(parts) if parts.is_empty() => f.write_str("zero()"),
            SignalSpec::Sum(parts) => {
                for (i, part) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    write!(f, "{part}")?;
                }
                Ok(())
            }
        }
    }
}

/// Parses the text form produced by `Display`, e.g. `step(sine(380,1000,0) + noise(5,1),0.5)`.
impl FromStr for SignalSpec {
    type Err = SignalError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let syntax = || SignalError::Syntax(text.to_string());
        let parts = split_top_level(text, '+').ok_or_else(syntax)?;
        if parts.len() > 1 {
            let parsed: Result<Vec<_>, _> = parts.iter().map(|p| p.parse::<SignalSpec>()).collect();
            let spec = SignalSpec::Sum(parsed?);
            spec.validate()?;
            return Ok(spec);
        }

        let text = text.trim();
        let open = text.find('(').ok_or_else(syntax)?;
        let body = text[open + 1..].strip_suffix(')').ok_or_else(syntax)?;
        let name = text[..open].trim();
        let args = if body.trim().is_empty() { Vec::new() } else { split_top_level(body, ',').ok_or_else(syntax)? };
        let num = |i: usize| -> Result<f64, SignalError> {
            args.get(i).and_then(|a| a.trim().parse::<f64>().ok()).ok_or_else(syntax)
        };
        let arity = |lo: usize, hi: usize| if (lo..=hi).contains(&args.len()) { Ok(()) } else { Err(syntax()) };

        let spec = match name {
            "sine" => {
                arity(2, 3)?;
                let phase = if args.len() == 3 { num(2)? } else { 0.0 };
                SignalSpec::sine(num(0)?, num(1)?, phase)
            }
            "square" => {
                arity(2, 2)?;
                SignalSpec::square(num(0)?, num(1)?)
            }
            "noise" => {
                arity(1, 2)?;
                let seed = match args.get(1) {
                    Some(s) => s.trim().parse::<u64>().map_err(|_| syntax())?,
                    None => 0,
                };
                SignalSpec::noise(num(0)?, seed)
            }
            "ref" => {
                arity(1, 1)?;
                SignalSpec::ReferenceDriven { amplitude: num(0)? }
            }
            "step" => {
                arity(2, 2)?;
                args[0].parse::<SignalSpec>()?.step(num(1)?)
            }
            "zero" => {
                arity(0, 0)?;
                SignalSpec::Sum(Vec::new())
            }
            _ => return Err(syntax()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Splits on `sep` outside parentheses; `None` if the parentheses do not balance.
fn split_top_level(text: &str, sep: char) -> Option<Vec<&str>> {
    let mut depth = 0i32;
    let mut parts = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            c if c == sep && depth == 0 => {
                parts.push(&text[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    parts.push(&text[start..]);
    Some(parts)
}

/// Phase origin and rate of the instrument reference, as seen by [`SignalSpec::ReferenceDriven`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceClock {
    /// Time at which `Q_x` crosses zero upwards.
    pub epoch: f64,
    pub frequency: f64,
    /// Harmonics at or above this frequency are left out of the square wave.
    pub band_limit: f64,
}

impl Default for ReferenceClock {
    fn default() -> Self {
        Self { epoch: 0.0, frequency: 1000.0, band_limit: 100_000.0 }
    }
}

/// TTL reference supplied alongside the signal in external referencing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtlReference {
    pub frequency: f64,
    /// Phase of the first rising edge, radians: edges fall at `(j − phase/2π)/frequency`.
    pub phase: f64,
}

impl TtlReference {
    pub fn new(frequency: f64) -> Self {
        Self { frequency, phase: 0.0 }
    }

    fn offset(&self) -> f64 {
        (-self.phase / TAU).rem_euclid(1.0)
    }

    /// Rising-edge timestamps in `[t0, t1)`, relative to `t0`.
    pub fn rising_edges(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut edges = Vec::new();
        let mut t = self.next_rising_edge(t0);
        while t < t1 {
            edges.push(t - t0);
            t = self.next_rising_edge_after(t);
        }
        edges
    }

    /// First rising edge at or after `t`.
    pub fn next_rising_edge(&self, t: f64) -> f64 {
        let j = (t * self.frequency - self.offset()).ceil();
        (j + self.offset()) / self.frequency
    }

    fn next_rising_edge_after(&self, t: f64) -> f64 {
        let j = (t * self.frequency - self.offset()).round() + 1.0;
        (j + self.offset()) / self.frequency
    }
}

/// Sequential Gaussian stream for one noise component; draw `i` is the `i`-th value of a
/// ChaCha8 stream seeded by the component seed.
#[derive(Debug, Clone)]
struct NoiseStream {
    seed: u64,
    rng: ChaCha8Rng,
    // index of the held draw, and its value
    index: Option<u64>,
    value: f64,
}

impl NoiseStream {
    fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed), index: None, value: 0.0 }
    }

    fn at(&mut self, tick: u64) -> f64 {
        match self.index {
            Some(i) if i == tick => return self.value,
            Some(i) if i > tick => *self = Self::new(self.seed),
            _ => {}
        }
        let mut next = self.index.map_or(0, |i| i + 1);
        while next <= tick {
            self.value = self.rng.sample(StandardNormal);
            next += 1;
        }
        self.index = Some(tick);
        self.value
    }
}

#[derive(Debug, Clone)]
enum Term {
    Sine { amplitude: f64, frequency: f64, phase: f64, nodes: [(f64, f64); 4], phasor: Phasor },
    Square { amplitude: f64, frequency: f64 },
    Noise { rms: f64, stream: NoiseStream },
    Reference { amplitude: f64 },
}

// Ticks between exact re-evaluations of a rotating phasor.
const PHASOR_RESYNC: u32 = 256;

/// `sin`/`cos` of a sine term's phase at the previous tick, advanced by rotation.
#[derive(Debug, Clone, Copy, Default)]
struct Phasor {
    tick: Option<u64>,
    since_sync: u32,
    sin: f64,
    cos: f64,
    step_sin: f64,
    step_cos: f64,
}

impl Phasor {
    #[inline]
    fn at(&mut self, tick: u64, exact: impl FnOnce() -> (f64, f64)) -> (f64, f64) {
        if self.tick.map(|t| t + 1) == Some(tick) && self.since_sync < PHASOR_RESYNC {
            (self.sin, self.cos) = (
                self.sin * self.step_cos + self.cos * self.step_sin,
                self.cos * self.step_cos - self.sin * self.step_sin,
            );
            self.since_sync += 1;
        } else if self.tick != Some(tick) {
            (self.sin, self.cos) = exact();
            self.since_sync = 0;
        }
        self.tick = Some(tick);
        (self.sin, self.cos)
    }
}

/// Stateful evaluator of a [`SignalSpec`], flattened into gated terms.
#[derive(Debug, Clone)]
pub struct Stimulus {
    terms: Vec<(f64, Term)>,
    reference: ReferenceClock,
    offsets: [f64; 4],
}

impl Stimulus {
    pub fn new(spec: &SignalSpec) -> Self {
        let mut terms = Vec::new();
        flatten(spec, f64::NEG_INFINITY, &mut terms);
        Self { terms, reference: ReferenceClock::default(), offsets: [0.0; 4] }
    }

    pub fn set_reference(&mut self, reference: ReferenceClock) {
        self.reference = reference;
    }

    pub fn reference(&self) -> ReferenceClock {
        self.reference
    }

    /// Fixes the tick spacing and the node offsets used by [`Stimulus::values_at_nodes`].
    pub fn set_grid(&mut self, dt: f64, offsets: [f64; 4]) {
        self.offsets = offsets;
        for (_, term) in &mut self.terms {
            if let Term::Sine { frequency, nodes, phasor, .. } = term {
                for (node, &o) in nodes.iter_mut().zip(&offsets) {
                    *node = (TAU * *frequency * o).sin_cos();
                }
                let (step_sin, step_cos) = (TAU * *frequency * dt).sin_cos();
                *phasor = Phasor { step_sin, step_cos, ..Phasor::default() };
            }
        }
    }

    pub fn value(&mut self, t: f64, tick: u64) -> f64 {
        let reference = self.reference;
        self.terms
            .iter_mut()
            .filter(|(gate, _)| t >= *gate)
            .map(|(_, term)| match term {
                Term::Sine { amplitude, frequency, phase, .. } => {
                    *amplitude * (TAU * (*frequency * t).fract() + *phase).sin()
                }
                Term::Square { amplitude, frequency } => square(*amplitude, *frequency * t),
                Term::Noise { rms, stream } => *rms * stream.at(tick),
                Term::Reference { amplitude } => reference_square(*amplitude, &reference, t),
            })
            .sum()
    }

    /// Values at `t0 + offset[i]` for the offsets given to [`Stimulus::set_grid`]; noise is
    /// held at the draw for `tick` across all four nodes. Consecutive ticks must be `dt` apart.
    #[inline]
    pub fn values_at_nodes(&mut self, t0: f64, tick: u64) -> [f64; 4] {
        let mut out = [0.0; 4];
        let reference = self.reference;
        for (gate, term) in &mut self.terms {
            let gate = *gate;
            let open = |i: usize, t0: f64, offsets: &[f64; 4]| t0 + offsets[i] >= gate;
            match term {
                Term::Sine { amplitude, frequency, phase, nodes, phasor } => {
                    let (s, c) = phasor.at(tick, || (TAU * (*frequency * t0).fract() + *phase).sin_cos());
                    for i in 0..4 {
                        if open(i, t0, &self.offsets) {
                            out[i] += *amplitude * (s * nodes[i].1 + c * nodes[i].0);
                        }
                    }
                }
                Term::Square { amplitude, frequency } => {
                    for i in 0..4 {
                        let t = t0 + self.offsets[i];
                        if t >= gate {
                            out[i] += square(*amplitude, *frequency * t);
                        }
                    }
                }
                Term::Noise { rms, stream } => {
                    let v = *rms * stream.at(tick);
                    for i in 0..4 {
                        if open(i, t0, &self.offsets) {
                            out[i] += v;
                        }
                    }
                }
                Term::Reference { amplitude } => {
                    for i in 0..4 {
                        let t = t0 + self.offsets[i];
                        if t >= gate {
                            out[i] += reference_square(*amplitude, &reference, t);
                        }
                    }
                }
            }
        }
        out
    }
}

fn flatten(spec: &SignalSpec, gate: f64, terms: &mut Vec<(f64, Term)>) {
    match spec {
        SignalSpec::Sine { amplitude, frequency, phase } => terms.push((
            gate,
            Term::Sine {
                amplitude: *amplitude,
                frequency: *frequency,
                phase: *phase,
                nodes: [(0.0, 1.0); 4],
                phasor: Phasor::default(),
            },
        )),
        SignalSpec::Square { amplitude, frequency } => {
            terms.push((gate, Term::Square { amplitude: *amplitude, frequency: *frequency }))
        }
        SignalSpec::WhiteNoise { rms, seed } => {
            terms.push((gate, Term::Noise { rms: *rms, stream: NoiseStream::new(*seed) }))
        }
        SignalSpec::ReferenceDriven { amplitude } => terms.push((gate, Term::Reference { amplitude: *amplitude })),
        SignalSpec::Sum(parts) => parts.iter().for_each(|p| flatten(p, gate, terms)),
        SignalSpec::StepEnvelope { inner, t_on } => flatten(inner, gate.max(*t_on), terms),
    }
}

#[inline]
fn square(amplitude: f64, cycles: f64) -> f64 {
    let frac = cycles - cycles.floor();
    if frac == 0.0 || frac == 0.5 {
        0.0
    } else if frac < 0.5 {
        amplitude
    } else {
        -amplitude
    }
}

/// Fourier series of the ±amplitude square in phase with `Q_x`, odd harmonics below the limit.
fn reference_square(amplitude: f64, clock: &ReferenceClock, t: f64) -> f64 {
    let theta = TAU * (clock.frequency * (t - clock.epoch)).fract();
    let (s1, c1) = theta.sin_cos();
    // e^{i·2θ} steps from one odd harmonic to the next
    let (s2, c2) = (2.0 * s1 * c1, c1 * c1 - s1 * s1);
    let (mut s, mut c) = (s1, c1);
    let mut sum = 0.0;
    let mut j = 1.0;
    while j * clock.frequency < clock.band_limit {
        sum += s / j;
        (s, c) = (s * c2 + c * s2, c * c2 - s * s2);
        j += 2.0;
    }
    4.0 * amplitude / PI * sum
}
