//! Scripted runs: an initial configuration and stimulus, then timed events.
//!
//! Scenario files are CSV with the header `time_s,directive,value`. Rows at time 0 may set
//! the configuration (`f_r`, `tau`, `input_gain`, `output_gain`, `sync`, `harmonic`,
//! `reference`, `f_d`, `bypass`, `anti_alias_hz`, `adc_noise_v`, `lock_min_hz`,
//! `lock_max_hz`, `tuned`, `window`, `seed`, `duration`). `signal`, `ttl` and `command`
//! rows may appear at any time:
//!
//! ```text
//! time_s,directive,value
//! 0,tau,0.6
//! 0,signal,"sine(250,1000)"
//! 0,duration,10
//! 5,command,e6
//! ```
//!
//! Results are CSV with a `t_s` column followed by the 22 frame fields.

use std::io::{Read, Write};

use crate::emulator::{runtime::TimedFrame, ConfigError, Emulator, Input, InstrumentConfig, ReferenceMode};
use crate::frontend::PgaSetting;
use crate::lab::signal::{SignalSpec, TtlReference};
use crate::protocol::{parse_command, parse_frame, Command, OutputFrame, FIELD_NAMES};

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Command(Command),
    Signal(SignalSpec),
    /// Connects (or with `None` removes) the TTL reference.
    Ttl(Option<TtlReference>),
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("event at {0} s is outside the run")]
    EventTime(f64),
}

/// A complete scripted run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: InstrumentConfig,
    pub input: Input,
    /// Applied after all samples and frames due at or before their time.
    pub events: Vec<(f64, Event)>,
    pub duration: f64,
}

/// Frames and diagnostics from a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioResult {
    pub frames: Vec<TimedFrame>,
    pub diagnostics: Vec<String>,
}

impl Scenario {
    pub fn new(config: InstrumentConfig, signal: SignalSpec, duration: f64) -> Self {
        Self { config, input: Input::signal(signal), events: Vec::new(), duration }
    }

    pub fn with_ttl(mut self, ttl: TtlReference) -> Self {
        self.input.ttl = Some(ttl);
        self
    }

    pub fn at(mut self, time: f64, event: Event) -> Self {
        self.events.push((time, event));
        self
    }

    pub fn command(self, time: f64, command: Command) -> Self {
        self.at(time, Event::Command(command))
    }

    pub fn run(&self) -> Result<ScenarioResult, ScenarioError> {
        let mut events = self.events.clone();
        if let Some(&(t, _)) = events.iter().find(|(t, _)| !(*t >= 0.0 && *t <= self.duration)) {
            return Err(ScenarioError::EventTime(t));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut emulator = Emulator::new(self.config.clone(), self.input.clone())?;
        let mut result = ScenarioResult::default();
        let mut record = |time: f64, frame: OutputFrame| result.frames.push(TimedFrame { time, frame });
        for (time, event) in events {
            emulator.run_until(time, &mut record);
            match event {
                Event::Command(cmd) => emulator.apply_command(cmd),
                Event::Signal(spec) => emulator.set_signal(&spec),
                Event::Ttl(ttl) => emulator.set_ttl(ttl),
            }
        }
        emulator.run_until(self.duration, &mut record);
        result.diagnostics = emulator.take_diagnostics();
        Ok(result)
    }

    /// Reads a scenario file.
    pub fn from_csv(reader: impl Read) -> Result<Self, ScenarioError> {
        let mut scenario = Scenario::new(InstrumentConfig::default(), SignalSpec::Sum(Vec::new()), 1.0);
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |message: String| ScenarioError::Parse { line, message };
            if row.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", row.len())));
            }
            let time: f64 = row[0].parse().map_err(|_| bad(format!("bad time '{}'", &row[0])))?;
            let (directive, value) = (&row[1], &row[2]);
            match directive {
                "signal" => {
                    let spec: SignalSpec = value.parse().map_err(|e| bad(format!("{e}")))?;
                    if time == 0.0 {
                        scenario.input.signal = spec;
                    } else {
                        scenario.events.push((time, Event::Signal(spec)));
                    }
                }
                "ttl" => {
                    let ttl = parse_ttl(value).ok_or_else(|| bad(format!("bad TTL reference '{value}'")))?;
                    if time == 0.0 {
                        scenario.input.ttl = ttl;
                    } else {
                        scenario.events.push((time, Event::Ttl(ttl)));
                    }
                }
                "command" => {
                    let cmd = parse_command(value).map_err(|e| bad(format!("{e}")))?;
                    scenario.events.push((time, Event::Command(cmd)));
                }
                key => {
                    if time != 0.0 {
                        return Err(bad(format!("'{key}' can only be set at time 0")));
                    }
                    set_option(&mut scenario, key, value).map_err(bad)?;
                }
            }
        }
        scenario.config.validate()?;
        Ok(scenario)
    }

    /// Writes the scenario in the form [`Scenario::from_csv`] reads.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_s", "directive", "value"])?;
        let c = &self.config;
        let defaults = InstrumentConfig::default();
        let mut option = |key: &str, value: String| w.write_record(["0", key, &value]);
        option("f_r", c.f_r.to_string())?;
        option("tau", c.tau.to_string())?;
        option("input_gain", c.input_gain.gain().to_string())?;
        option("output_gain", c.output_gain.to_string())?;
        option("sync", flag(c.sync_filter))?;
        option("harmonic", c.lowest_harmonic.to_string())?;
        let reference = if c.reference == ReferenceMode::External { "external" } else { "internal" };
        option("reference", reference.to_string())?;
        option("f_d", c.f_d.to_string())?;
        option("bypass", flag(c.front_end.bypass))?;
        if c.front_end.anti_alias_hz != defaults.front_end.anti_alias_hz {
            option("anti_alias_hz", c.front_end.anti_alias_hz.to_string())?;
        }
        option("adc_noise_v", c.front_end.adc_noise_rms_v.to_string())?;
        option("lock_min_hz", c.lock_range.min_hz.to_string())?;
        option("lock_max_hz", c.lock_range.max_hz.to_string())?;
        option("tuned", flag(c.lock_range.tuned))?;
        option("window", c.measurement_window.to_string())?;
        option("seed", c.seed.to_string())?;
        option("duration", self.duration.to_string())?;
        option("signal", self.input.signal.to_string())?;
        if let Some(ttl) = self.input.ttl {
            option("ttl", format_ttl(Some(ttl)))?;
        }
        for (time, event) in &self.events {
            let (directive, value) = match event {
                Event::Command(cmd) => ("command", cmd.to_string()),
                Event::Signal(spec) => ("signal", spec.to_string()),
                Event::Ttl(ttl) => ("ttl", format_ttl(*ttl)),
            };
            w.write_record([time.to_string().as_str(), directive, &value])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn flag(b: bool) -> String {
    (if b { "1" } else { "0" }).to_string()
}

fn parse_flag(value: &str) -> Result<bool, String> {
    match value {
        "1" | "true" | "on" => Ok(true),
        "0" | "false" | "off" => Ok(false),
        _ => Err(format!("'{value}' is not a flag")),
    }
}

fn parse_ttl(value: &str) -> Option<Option<TtlReference>> {
    if value == "none" {
        return Some(None);
    }
    let mut parts = value.split(',').map(str::trim);
    let frequency: f64 = parts.next()?.parse().ok()?;
    let phase: f64 = match parts.next() {
        Some(p) => p.parse().ok()?,
        None => 0.0,
    };
    if parts.next().is_some() || !(frequency > 0.0 && frequency.is_finite()) || !phase.is_finite() {
        return None;
    }
    Some(Some(TtlReference { frequency, phase }))
}

fn format_ttl(ttl: Option<TtlReference>) -> String {
    match ttl {
        None => "none".to_string(),
        Some(t) if t.phase == 0.0 => t.frequency.to_string(),
        Some(t) => format!("{},{}", t.frequency, t.phase),
    }
}

fn set_option(scenario: &mut Scenario, key: &str, value: &str) -> Result<(), String> {
    let number = || value.parse::<f64>().map_err(|_| format!("'{value}' is not a number for '{key}'"));
    let c = &mut scenario.config;
    match key {
        "f_r" => c.f_r = number()?,
        "tau" => c.tau = number()?,
        "input_gain" => {
            let g = value.parse::<u32>().map_err(|_| format!("bad input gain '{value}'"))?;
            c.input_gain = PgaSetting::new(g).map_err(|e| e.to_string())?;
        }
        "output_gain" => c.output_gain = number()?,
        "sync" => c.sync_filter = parse_flag(value)?,
        "harmonic" => c.lowest_harmonic = value.parse().map_err(|_| format!("bad harmonic '{value}'"))?,
        "reference" => {
            c.reference = match value {
                "internal" => ReferenceMode::Internal,
                "external" => ReferenceMode::External,
                _ => return Err(format!("reference must be 'internal' or 'external', got '{value}'")),
            }
        }
        "f_d" => c.f_d = number()?,
        "bypass" => c.front_end.bypass = parse_flag(value)?,
        "anti_alias_hz" => c.front_end.anti_alias_hz = number()?,
        "adc_noise_v" => c.front_end.adc_noise_rms_v = number()?,
        "lock_min_hz" => c.lock_range.min_hz = number()?,
        "lock_max_hz" => c.lock_range.max_hz = number()?,
        "tuned" => c.lock_range.tuned = parse_flag(value)?,
        "window" => c.measurement_window = number()?,
        "seed" => c.seed = value.parse().map_err(|_| format!("bad seed '{value}'"))?,
        "duration" => {
            let d = number()?;
            if !(d > 0.0 && d.is_finite()) {
                return Err(format!("duration must be positive, got {value}"));
            }
            scenario.duration = d;
        }
        _ => return Err(format!("unknown directive '{key}'")),
    }
    Ok(())
}

/// Runs `signal` into a device configured by `config` for `duration` seconds.
pub fn run_scenario(
    config: &InstrumentConfig,
    signal: &SignalSpec,
    duration: f64,
) -> Result<ScenarioResult, ScenarioError> {
    Scenario::new(config.clone(), signal.clone(), duration).run()
}

/// Streams frames as CSV rows: `t_s` then the frame fields in wire format.
pub struct FrameCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> FrameCsvWriter<W> {
    /// Writes the header row.
    pub fn new(writer: W) -> Result<Self, csv::Error> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(std::iter::once("t_s").chain(FIELD_NAMES))?;
        Ok(Self { inner })
    }

    /// Writes one row and flushes it, so the file stays whole if the process stops.
    pub fn write(&mut self, frame: &TimedFrame) -> Result<(), csv::Error> {
        let time = format!("{:.3}", frame.time);
        self.inner
            .write_record(std::iter::once(time.as_str()).chain(frame.frame.fields().iter().map(String::as_str)))?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Writes frames in the format of [`FrameCsvWriter`].
pub fn write_frames_csv(writer: impl Write, frames: &[TimedFrame]) -> Result<(), csv::Error> {
    let mut w = FrameCsvWriter::new(writer)?;
    frames.iter().try_for_each(|f| w.write(f))
}

/// Reads frames written by [`write_frames_csv`].
pub fn read_frames_csv(reader: impl Read) -> Result<Vec<TimedFrame>, ScenarioError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != FIELD_NAMES.len() + 1 || header.iter().skip(1).ne(FIELD_NAMES) {
        return Err(ScenarioError::Parse { line: 1, message: "unexpected header".to_string() });
    }
    let mut frames = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| ScenarioError::Parse { line, message };
        let time: f64 = row[0].parse().map_err(|_| bad(format!("bad time '{}'", &row[0])))?;
        let text: Vec<&str> = row.iter().skip(1).collect();
        let frame = parse_frame(&text.join(" ")).map_err(|e| bad(e.to_string()))?;
        frames.push(TimedFrame { time, frame });
    }
    Ok(frames)
}

impl ScenarioResult {
    /// `(t, R1)` pairs.
    pub fn amplitude_series(&self) -> Vec<(f64, f64)> {
        self.frames.iter().map(|f| (f.time, f.frame.r1)).collect()
    }

    /// Mean of `value` over frames with `t_start < t ≤ t_end`.
    pub fn mean_over(&self, t_start: f64, t_end: f64, value: impl Fn(&OutputFrame) -> f64) -> Option<f64> {
        let selected: Vec<f64> = self
            .frames
            .iter()
            .filter(|f| f.time > t_start + 1e-9 && f.time <= t_end + 1e-9)
            .map(|f| value(&f.frame))
            .collect();
        (!selected.is_empty()).then(|| selected.iter().sum::<f64>() / selected.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = "time_s,directive,value\n\
        0,tau,0.06\n\
        0,signal,\"sine(250,1000)\"\n\
        0,duration,1\n\
        # comment\n\
        0.5,command,e6\n";

    #[test]
    fn parses_and_runs_example() {
        let scenario = Scenario::from_csv(EXAMPLE.as_bytes()).unwrap();
        assert_eq!(scenario.config.tau, 0.06);
        assert_eq!(scenario.duration, 1.0);
        assert_eq!(scenario.events, vec![(0.5, Event::Command(Command::SetTimeConstant(6.0)))]);
        let result = scenario.run().unwrap();
        assert_eq!(result.frames.len(), 10);
        assert_eq!(result.frames[4].frame.tau, 0.06);
        assert_eq!(result.frames[5].frame.tau, 6.0);
    }

    #[test]
    fn scenario_csv_round_trips() {
        let scenario = Scenario::new(
            InstrumentConfig { tau: 2.0, seed: 7, ..Default::default() },
            SignalSpec::sine(1.0, 100.0, 0.5),
            3.0,
        )
        .with_ttl(TtlReference { frequency: 100.0, phase: 0.25 })
        .command(1.0, Command::ToggleReferenceMode)
        .at(2.0, Event::Ttl(None))
        .at(2.5, Event::Signal(SignalSpec::noise(0.1, 3)));
        let mut text = Vec::new();
        scenario.write_csv(&mut text).unwrap();
        assert_eq!(Scenario::from_csv(text.as_slice()).unwrap(), scenario);
    }

    #[test]
    fn rejects_bad_rows() {
        let cases = [
            "time_s,directive,value\n0,volume,3\n",
            "time_s,directive,value\n1,tau,3\n",
            "time_s,directive,value\n0,command,z\n",
            "time_s,directive,value\n0,signal,\"sine(1)\"\n",
            "time_s,directive,value\nx,tau,1\n",
        ];
        for text in cases {
            assert!(matches!(Scenario::from_csv(text.as_bytes()), Err(ScenarioError::Parse { .. })), "{text}");
        }
        let out_of_range = "time_s,directive,value\n0,tau,20\n";
        assert!(matches!(Scenario::from_csv(out_of_range.as_bytes()), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn events_outside_run_are_rejected() {
        let s = Scenario::new(InstrumentConfig::default(), SignalSpec::Sum(vec![]), 1.0)
            .command(2.0, Command::ToggleSyncFilter);
        assert!(matches!(s.run(), Err(ScenarioError::EventTime(t)) if t == 2.0));
    }

    #[test]
    fn frame_csv_round_trips_quantized_frames() {
        let scenario = Scenario::from_csv(EXAMPLE.as_bytes()).unwrap();
        let result = scenario.run().unwrap();
        let mut text = Vec::new();
        write_frames_csv(&mut text, &result.frames).unwrap();
        let back = read_frames_csv(text.as_slice()).unwrap();
        assert_eq!(back.len(), result.frames.len());
        for (a, b) in back.iter().zip(&result.frames) {
            assert!((a.time - b.time).abs() < 1e-9);
            assert_eq!(a.frame, b.frame.quantized());
        }
    }
}
