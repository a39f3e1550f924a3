use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ConfigError, InstrumentConfig, ReferenceMode, FRAME_INTERVAL};
use crate::dsp::{amplitude_phase, compute_alpha, Demodulator, NoiseTracker, SyncAccumulator};
use crate::frontend::{code_to_signal, FrontEndState, PgaSetting, SpanIntegrator, FULL_SCALE_V, OFFSET_V};
use crate::lab::signal::{ReferenceClock, SignalSpec, Stimulus, TtlReference};
use crate::protocol::{parse_command, Command, ErrorIndicator, OutputFrame};
use crate::timing::{
    measure_external_frequency, plan_external, plan_internal, ExternalSchedule, InternalSchedule, LockFailure,
    TimingError, Undersampling,
};

// Tick times within this fraction of a sample interval of a boundary count as on it.
const TICK_SLACK: f64 = 1e-6;

/// The smoothed DC output proportional to the measured amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalogueOutput {
    pub value: f64,
    pub cutoff_hz: f64,
}

impl AnalogueOutput {
    pub fn new(cutoff_hz: f64) -> Self {
        Self { value: 0.0, cutoff_hz }
    }

    /// Moves the output toward `clamp(s·r/1000, 0, 3.3)` volts over `dt` seconds.
    pub fn update(&mut self, r_mv: f64, output_gain: f64, dt: f64) {
        let decay = (-std::f64::consts::TAU * self.cutoff_hz * dt).exp();
        self.advance(r_mv, output_gain, decay);
    }

    #[inline]
    fn advance(&mut self, r_mv: f64, output_gain: f64, decay: f64) {
        let target = (output_gain * r_mv / 1000.0).clamp(0.0, FULL_SCALE_V);
        self.value = target + (self.value - target) * decay;
    }
}

/// Stimulus applied to the device input.
#[derive(Debug, Clone, PartialEq)]
pub struct Input {
    pub signal: SignalSpec,
    /// TTL reference on the external-reference connector, if any.
    pub ttl: Option<TtlReference>,
}

impl Input {
    pub fn signal(signal: SignalSpec) -> Self {
        Self { signal, ttl: None }
    }

    pub fn with_ttl(mut self, ttl: TtlReference) -> Self {
        self.ttl = Some(ttl);
        self
    }
}

impl Default for Input {
    fn default() -> Self {
        Self::signal(SignalSpec::Sum(Vec::new()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Schedule {
    Internal(InternalSchedule),
    Locked { plan: ExternalSchedule, f_true: f64 },
    Unlocked { failure: Option<LockFailure>, provisional: Undersampling },
}

/// Uniformly spaced sample instants `epoch + n·dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    epoch: f64,
    dt: f64,
    next: u64,
}

impl Segment {
    fn time(&self, n: u64) -> f64 {
        self.epoch + n as f64 * self.dt
    }

    fn next_time(&self) -> f64 {
        self.time(self.next)
    }

    /// Index of the last sample at or before `t`.
    fn last_index_through(&self, t: f64) -> Option<u64> {
        let x = ((t - self.epoch) / self.dt + TICK_SLACK).floor();
        (x >= 0.0).then_some(x as u64)
    }
}

/// Virtual instrument: front end, schedule and demodulator advanced sample by sample in
/// simulated time, producing an output frame every 0.1 s.
#[derive(Debug, Clone)]
pub struct Emulator {
    config: InstrumentConfig,
    stimulus: Stimulus,
    ttl: Option<TtlReference>,
    schedule: Schedule,
    segment: Segment,
    front: FrontEndState,
    span: SpanIntegrator,
    demod: Demodulator<f64>,
    sync: SyncAccumulator<f64>,
    sync_out: (f64, f64),
    noise: NoiseTracker<f64>,
    analogue: AnalogueOutput,
    analogue_decay: f64,
    clip_latch: bool,
    ticks: u64,
    frames: u64,
    adc_noise: ChaCha8Rng,
    diagnostics: Vec<String>,
}

impl Emulator {
    pub fn new(config: InstrumentConfig, input: Input) -> Result<Self, ConfigError> {
        config.validate()?;
        input.signal.validate().map_err(|e| ConfigError::FrontEnd(e.to_string()))?;
        let alpha = compute_alpha(config.tau, config.f_d)?;
        let schedule = match config.reference {
            ReferenceMode::Internal => Schedule::Internal(internal_plan(&config)),
            ReferenceMode::External => Schedule::Unlocked { failure: None, provisional: provisional(&config) },
        };
        let dt = 1.0 / config.f_d;
        let mut emulator = Self {
            stimulus: Stimulus::new(&input.signal),
            ttl: input.ttl,
            schedule,
            segment: Segment { epoch: 0.0, dt, next: 0 },
            front: FrontEndState::settled(config.front_end.anti_alias_hz),
            span: SpanIntegrator::new(config.front_end.anti_alias_hz, dt),
            demod: Demodulator::new(&[1], 4, alpha)?,
            sync: SyncAccumulator::new(4)?,
            sync_out: (0.0, 0.0),
            noise: NoiseTracker::new(),
            analogue: AnalogueOutput::new(config.analogue_cutoff_hz),
            analogue_decay: 1.0,
            clip_latch: false,
            ticks: 0,
            frames: 0,
            adc_noise: ChaCha8Rng::seed_from_u64(config.seed),
            diagnostics: Vec::new(),
            config,
        };
        emulator.begin_segment(0.0);
        Ok(emulator)
    }

    pub fn config(&self) -> &InstrumentConfig {
        &self.config
    }

    /// Simulated time of the next sample.
    pub fn time(&self) -> f64 {
        self.segment.next_time()
    }

    /// Samples processed since construction.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Simulated time of the next frame.
    pub fn next_frame_time(&self) -> f64 {
        (self.frames + 1) as f64 * FRAME_INTERVAL
    }

    pub fn analogue_output(&self) -> &AnalogueOutput {
        &self.analogue
    }

    /// Whether demodulation is running (always in internal mode; after a successful query
    /// in external mode).
    pub fn is_locked(&self) -> bool {
        !matches!(self.schedule, Schedule::Unlocked { .. })
    }

    /// Messages about ignored or rejected commands since the last call.
    pub fn take_diagnostics(&mut self) -> Vec<String> {
        std::mem::take(&mut self.diagnostics)
    }

    /// Replaces the input signal; the TTL reference and all instrument state are kept.
    pub fn set_signal(&mut self, signal: &SignalSpec) {
        let reference = self.stimulus.reference();
        self.stimulus = Stimulus::new(signal);
        self.stimulus.set_reference(reference);
        self.stimulus.set_grid(self.segment.dt, *self.span.offsets());
    }

    pub fn set_ttl(&mut self, ttl: Option<TtlReference>) {
        self.ttl = ttl;
    }

    /// (harmonic, X, Y) of every higher-harmonic channel, lowest first.
    pub fn harmonic_outputs(&self) -> Vec<(u32, f64, f64)> {
        self.demod.channels().iter().skip(1).map(|c| (c.harmonic(), c.x2, c.y2)).collect()
    }

    /// Parses and applies one command line; rejected lines are recorded as diagnostics.
    pub fn apply_line(&mut self, line: &str) -> Result<(), String> {
        match parse_command(line) {
            Ok(cmd) => {
                self.apply_command(cmd);
                Ok(())
            }
            Err(e) => {
                let msg = format!("rejected '{}': {e}", line.trim());
                self.diagnostics.push(msg.clone());
                Err(msg)
            }
        }
    }

    /// Applies a command between samples.
    pub fn apply_command(&mut self, cmd: Command) {
        let now = self.time();
        match cmd {
            Command::ToggleSyncFilter => {
                self.config.sync_filter = !self.config.sync_filter;
                self.restart_filters();
            }
            Command::ToggleReferenceMode => {
                self.config.reference = match self.config.reference {
                    ReferenceMode::Internal => ReferenceMode::External,
                    ReferenceMode::External => ReferenceMode::Internal,
                };
                self.schedule = match self.config.reference {
                    ReferenceMode::Internal => Schedule::Internal(internal_plan(&self.config)),
                    ReferenceMode::External => {
                        Schedule::Unlocked { failure: None, provisional: provisional(&self.config) }
                    }
                };
                self.begin_segment(now);
            }
            Command::SetFrequency(f) => {
                self.config.f_r = f;
                match self.schedule {
                    Schedule::Internal(_) => {
                        self.schedule = Schedule::Internal(internal_plan(&self.config));
                        self.begin_segment(now);
                    }
                    Schedule::Unlocked { failure, .. } => {
                        self.schedule = Schedule::Unlocked { failure, provisional: provisional(&self.config) };
                        self.diagnostics.push(format!("frequency {f} Hz stored for internal referencing"));
                    }
                    Schedule::Locked { .. } => {
                        self.diagnostics.push(format!("frequency {f} Hz stored for internal referencing"));
                    }
                }
            }
            Command::SetInputGain(gain) => {
                self.config.input_gain = gain;
                self.restart_filters();
            }
            Command::SetTimeConstant(tau) => {
                self.config.tau = tau;
                self.restart_filters();
            }
            Command::SetOutputGain(s) => self.config.output_gain = s,
            Command::SetLowestHarmonic(n) => {
                self.config.lowest_harmonic = n;
                // only the harmonic channels restart
                let kept = (*self.demod.channel(1).expect("fundamental channel"), self.sync, self.sync_out, self.noise);
                self.restart_filters();
                *self.demod.channel_mut(1).expect("fundamental channel") = kept.0;
                (self.sync, self.sync_out, self.noise) = (kept.1, kept.2, kept.3);
            }
            Command::QueryExternalFrequency => {
                if self.config.reference == ReferenceMode::Internal {
                    self.diagnostics.push("'c' ignored in internal reference mode".into());
                    return;
                }
                self.schedule = self.measure(now);
                if let Schedule::Unlocked { failure: Some(failure), .. } = self.schedule {
                    self.diagnostics.push(format!("lock failure: {failure}"));
                }
                self.begin_segment(now);
            }
        }
    }

    fn measure(&self, now: f64) -> Schedule {
        let window = self.config.measurement_window;
        let edges = self.ttl.map(|ttl| ttl.rising_edges(now, now + window)).unwrap_or_default();
        let unlocked = |failure| Schedule::Unlocked { failure: Some(failure), provisional: provisional(&self.config) };
        let measured = match measure_external_frequency(&edges, window, &self.config.lock_range) {
            Ok(f) => f,
            Err(TimingError::LockFailure(failure)) => return unlocked(failure),
            Err(_) => return unlocked(LockFailure::TooFewEdges(edges.len())),
        };
        match (plan_external(measured), self.ttl) {
            (Ok(plan), Some(ttl)) => Schedule::Locked { plan, f_true: ttl.frequency },
            _ => unlocked(LockFailure::OutOfLockRange(measured)),
        }
    }

    /// Starts a fresh run of samples under the current schedule from time `now`, with all
    /// demodulator, synchronous-filter and noise state cleared.
    fn begin_segment(&mut self, now: f64) {
        let (dt, epoch, m, f_d) = match self.schedule {
            Schedule::Internal(plan) => (1.0 / plan.f_d(), now, plan.samples_per_period(), plan.f_d()),
            Schedule::Locked { plan, f_true } => {
                let dt = 1.0 / (plan.samples_per_period() as f64 * f_true);
                let epoch = self.ttl.map_or(now, |ttl| ttl.next_rising_edge(now));
                (dt, epoch, plan.samples_per_period(), plan.f_d_effective())
            }
            Schedule::Unlocked { .. } => (1.0 / self.config.f_d, now, 4, self.config.f_d),
        };
        self.segment = Segment { epoch, dt, next: 0 };
        self.rebuild_dsp(m, f_d);
        self.stimulus.set_reference(ReferenceClock { epoch, frequency: 1.0 / (m as f64 * dt), band_limit: 0.5 / dt });
    }

    /// Re-creates the filters on the current sample grid, keeping the reference phase.
    /// The synchronous accumulator may restart mid-period: any `m` consecutive samples
    /// span exactly one period.
    fn restart_filters(&mut self) {
        let m = self.demod.period();
        let f_d = self.demod.coefficient().f_d();
        self.rebuild_dsp(m, f_d);
        self.demod.seek(self.segment.next);
    }

    fn rebuild_dsp(&mut self, m: u32, f_d: f64) {
        let alpha = compute_alpha(self.config.tau, f_d).expect("time-constant range keeps the cut-off below Nyquist");
        let n = self.config.lowest_harmonic;
        let mut harmonics = vec![1];
        harmonics.extend((0..self.config.harmonic_capacity()).map(|i| n + i));
        self.demod = Demodulator::new(&harmonics, m, alpha).expect("distinct harmonics, m ≥ 3");
        self.sync = SyncAccumulator::new(m).expect("m ≥ 3");
        self.sync_out = (0.0, 0.0);
        self.noise.reset();
        let dt = self.segment.dt;
        self.span = SpanIntegrator::new(self.config.front_end.anti_alias_hz, dt);
        self.stimulus.set_grid(self.segment.dt, *self.span.offsets());
        self.analogue_decay = (-std::f64::consts::TAU * self.config.analogue_cutoff_hz * dt).exp();
    }

    /// Runs the sample loop up to and including time `t_end`, passing each frame to `sink`
    /// with its timestamp. Frames due exactly at `t_end` are emitted.
    pub fn run_until(&mut self, t_end: f64, mut sink: impl FnMut(f64, OutputFrame)) {
        loop {
            let boundary = self.next_frame_time();
            if boundary > t_end + 1e-9 {
                self.run_samples_through(t_end);
                return;
            }
            self.run_samples_through(boundary);
            let frame = self.emit_frame();
            sink(boundary, frame);
        }
    }

    /// Runs to the next frame boundary and returns that frame.
    pub fn next_frame(&mut self) -> (f64, OutputFrame) {
        let boundary = self.next_frame_time();
        self.run_samples_through(boundary);
        (boundary, self.emit_frame())
    }

    fn run_samples_through(&mut self, t: f64) {
        let Some(last) = self.segment.last_index_through(t) else { return };
        let locked = self.is_locked();
        let sync = self.config.sync_filter;
        let bypass = self.config.front_end.bypass;
        let gain = self.config.input_gain;
        let alpha = self.demod.coefficient().alpha();
        while self.segment.next <= last {
            let t_n = self.segment.next_time();
            let s = if bypass { self.stimulus.value(t_n, self.ticks) } else { self.acquire(t_n, gain) };
            if locked {
                let (x, y) = if sync {
                    let q = self.demod.cursor_reference();
                    if let Some(out) = self.sync.update(q.qx * s, q.qy * s) {
                        self.sync_out = out;
                    }
                    self.demod.advance(s, Some(1));
                    self.sync_out
                } else {
                    self.demod.advance(s, None);
                    let ch = &self.demod.channels()[0];
                    (ch.x2, ch.y2)
                };
                let r = (x * x + y * y).sqrt();
                self.noise.update(r, alpha);
                self.analogue.advance(r, self.config.output_gain, self.analogue_decay);
            } else {
                self.analogue.advance(0.0, self.config.output_gain, self.analogue_decay);
            }
            self.segment.next += 1;
            self.ticks += 1;
        }
    }

    /// Front end and ADC for the sample at `t_n`; returns input-referred millivolts.
    #[inline]
    fn acquire(&mut self, t_n: f64, gain: PgaSetting) -> f64 {
        let dt = self.segment.dt;
        let mv = self.stimulus.values_at_nodes(t_n - dt, self.ticks);
        let g = gain.gain() as f64 / 1000.0;
        let shifted = [g * mv[0] + OFFSET_V, g * mv[1] + OFFSET_V, g * mv[2] + OFFSET_V, g * mv[3] + OFFSET_V];
        let mut v_adc = self.front.condition_span(&self.span, shifted);
        let noise_rms = self.config.front_end.adc_noise_rms_v;
        if noise_rms > 0.0 {
            v_adc += noise_rms * self.adc_noise.sample::<f64, _>(StandardNormal);
        }
        let code = self.front.sample(v_adc);
        self.clip_latch |= self.front.clip_low || self.front.clip_high;
        code_to_signal(code, gain).unwrap_or(0.0)
    }

    /// Current outputs, without clearing the clip latch.
    pub fn frame(&self) -> OutputFrame {
        let external = self.config.reference == ReferenceMode::External;
        let (samples_per_period, f_d, f_r, undersampling) = match self.schedule {
            Schedule::Internal(plan) => (plan.samples_per_period(), plan.f_d(), plan.f_r_actual(), None),
            Schedule::Locked { plan, .. } => {
                (plan.samples_per_period(), plan.f_d_effective(), plan.f_ext(), Some(plan.undersampling()))
            }
            Schedule::Unlocked { provisional, .. } => (0, 0.0, 0.0, Some(provisional)),
        };
        let (x1, y1) = if self.config.sync_filter {
            self.sync_out
        } else {
            let ch = &self.demod.channels()[0];
            (ch.x2, ch.y2)
        };
        let (r1, phi1) = amplitude_phase(x1, y1);
        let mut harmonic_x = [0.0; 3];
        let mut harmonic_y = [0.0; 3];
        for (i, ch) in self.demod.channels().iter().skip(1).take(3).enumerate() {
            harmonic_x[i] = ch.x2;
            harmonic_y[i] = ch.y2;
        }
        OutputFrame {
            error: ErrorIndicator { clipping: self.clip_latch, lock_failure: external && !self.is_locked() },
            output_gain: self.config.output_gain,
            input_gain: self.config.input_gain,
            sync_filter: self.config.sync_filter,
            external_reference: external,
            samples_per_period,
            f_d,
            f_r,
            tau: self.config.tau,
            undersampling,
            r1,
            phi1,
            s1: self.noise.std_dev(),
            x1,
            y1,
            harmonic_x,
            harmonic_y,
            lowest_harmonic: self.config.lowest_harmonic,
        }
    }

    /// Snapshots the outputs and clears the clip latch.
    pub fn emit_frame(&mut self) -> OutputFrame {
        let frame = self.frame();
        self.clip_latch = false;
        self.frames += 1;
        frame
    }
}

fn internal_plan(config: &InstrumentConfig) -> InternalSchedule {
    plan_internal(config.f_r, config.f_d).expect("validated frequency and rate")
}

fn provisional(config: &InstrumentConfig) -> Undersampling {
    plan_external(config.f_r).map(|p| p.undersampling()).unwrap_or(Undersampling::Sixteen)
}
