//! Serial line protocol: single-letter commands in, 22-field text frames out.
//!
//! Frame text formats are fixed per field so that a frame is reproduced byte for
//! byte from its parsed values:
//!
//! | fields                 | format                               |
//! |------------------------|--------------------------------------|
//! | 0, 2, 3, 4, 5, 21      | bare integer                         |
//! | 1, 6, 7, 8             | two decimal places                   |
//! | 9                      | `0`, `0.5` or the integer N          |
//! | 10 to 20               | five decimal places                  |

use std::fmt::{self, Write as _};

use crate::frontend::PgaSetting;
use crate::timing::{Undersampling, MAX_REFERENCE_HZ, MIN_REFERENCE_HZ};

pub const FIELD_COUNT: usize = 22;
pub const MIN_TIME_CONSTANT: f64 = 0.01;
pub const MAX_TIME_CONSTANT: f64 = 10.0;
pub const MAX_OUTPUT_GAIN: f64 = 1e6;
pub const DEFAULT_OUTPUT_GAIN: f64 = 10.0;
pub const DEFAULT_LOWEST_HARMONIC: u32 = 2;

/// Column names, in wire order.
pub const FIELD_NAMES: [&str; FIELD_COUNT] = [
    "error",
    "output_gain",
    "input_gain",
    "sync",
    "ext",
    "samples_per_period",
    "f_d",
    "f_r",
    "tau",
    "N",
    "R1",
    "phi1",
    "S1",
    "X1",
    "Y1",
    "Xn",
    "Xn1",
    "Xn2",
    "Yn",
    "Yn1",
    "Yn2",
    "n",
];

/// A host-to-device command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    ToggleSyncFilter,
    ToggleReferenceMode,
    SetFrequency(f64),
    SetInputGain(PgaSetting),
    SetTimeConstant(f64),
    SetOutputGain(f64),
    SetLowestHarmonic(u32),
    QueryExternalFrequency,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CommandError {
    #[error("empty command")]
    Empty,
    #[error("unknown command '{0}'")]
    Unknown(char),
    #[error("command '{0}' takes no argument")]
    UnexpectedArgument(char),
    #[error("command '{0}' needs an argument")]
    MissingArgument(char),
    #[error("'{text}' is not a valid number")]
    InvalidNumber { text: String },
    #[error("frequency {0} Hz outside 1 Hz..50 kHz")]
    FrequencyOutOfRange(f64),
    #[error("input gain {0} not in {{0, 1, 2, 4, 8, 16, 32, 64}}")]
    GainNotAllowed(String),
    #[error("time constant {0} s outside 0.01..10 s")]
    TimeConstantOutOfRange(f64),
    #[error("output gain {0} outside 0..1e6")]
    OutputGainOutOfRange(f64),
    #[error("lowest higher harmonic must be an integer of at least 2, got {0}")]
    HarmonicOutOfRange(String),
}

fn parse_number(text: &str) -> Result<f64, CommandError> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CommandError::InvalidNumber { text: text.to_string() })
}

/// Parses one command line; surrounding whitespace and line terminators are ignored.
pub fn parse_command(line: &str) -> Result<Command, CommandError> {
    let line = line.trim();
    let mut chars = line.chars();
    let lead = chars.next().ok_or(CommandError::Empty)?;
    let arg = chars.as_str().trim();

    let no_arg = |cmd| if arg.is_empty() { Ok(cmd) } else { Err(CommandError::UnexpectedArgument(lead)) };
    let need_arg = || if arg.is_empty() { Err(CommandError::MissingArgument(lead)) } else { Ok(arg) };

    match lead {
        't' => no_arg(Command::ToggleSyncFilter),
        'r' => no_arg(Command::ToggleReferenceMode),
        'c' => no_arg(Command::QueryExternalFrequency),
        'g' => {
            let text = need_arg()?;
            let gain = text.parse::<u32>().map_err(|_| CommandError::GainNotAllowed(text.to_string()))?;
            PgaSetting::new(gain).map(Command::SetInputGain).map_err(|_| CommandError::GainNotAllowed(text.to_string()))
        }
        'e' => {
            let tau = parse_number(need_arg()?)?;
            if (MIN_TIME_CONSTANT..=MAX_TIME_CONSTANT).contains(&tau) {
                Ok(Command::SetTimeConstant(tau))
            } else {
                Err(CommandError::TimeConstantOutOfRange(tau))
            }
        }
        's' => {
            let gain = parse_number(need_arg()?)?;
            if (0.0..=MAX_OUTPUT_GAIN).contains(&gain) {
                Ok(Command::SetOutputGain(gain))
            } else {
                Err(CommandError::OutputGainOutOfRange(gain))
            }
        }
        'h' => {
            let text = need_arg()?;
            match text.parse::<u32>() {
                Ok(n) if n >= 2 => Ok(Command::SetLowestHarmonic(n)),
                _ => Err(CommandError::HarmonicOutOfRange(text.to_string())),
            }
        }
        c if c.is_ascii_digit() || matches!(c, '.' | '+' | '-') => {
            let f = parse_number(line)?;
            if (MIN_REFERENCE_HZ..=MAX_REFERENCE_HZ).contains(&f) {
                Ok(Command::SetFrequency(f))
            } else {
                Err(CommandError::FrequencyOutOfRange(f))
            }
        }
        other => Err(CommandError::Unknown(other)),
    }
}

impl fmt::Display for Command {
    /// The command text without terminator.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::ToggleSyncFilter => f.write_str("t"),
            Command::ToggleReferenceMode => f.write_str("r"),
            Command::QueryExternalFrequency => f.write_str("c"),
            Command::SetFrequency(hz) => write!(f, "{hz}"),
            Command::SetInputGain(g) => write!(f, "g{g}"),
            Command::SetTimeConstant(s) => write!(f, "e{s}"),
            Command::SetOutputGain(x) => write!(f, "s{x}"),
            Command::SetLowestHarmonic(n) => write!(f, "h{n}"),
        }
    }
}

/// Splits a byte stream into command lines at `\r` or `\n`.
#[derive(Debug, Default)]
pub struct CommandFramer {
    pending: String,
}

impl CommandFramer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds text and returns every complete, non-empty line it finished.
    pub fn push(&mut self, text: &str) -> Vec<String> {
        let mut lines = Vec::new();
        for c in text.chars() {
            if c == '\r' || c == '\n' {
                if !self.pending.trim().is_empty() {
                    lines.push(self.pending.trim().to_string());
                }
                self.pending.clear();
            } else {
                self.pending.push(c);
            }
        }
        lines
    }
}

/// Per-frame status bits: 1 = clipping, 2 = external reference lock failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ErrorIndicator {
    pub clipping: bool,
    pub lock_failure: bool,
}

impl ErrorIndicator {
    pub const NONE: ErrorIndicator = ErrorIndicator { clipping: false, lock_failure: false };

    pub fn code(self) -> u8 {
        self.clipping as u8 | (self.lock_failure as u8) << 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        (code <= 3).then_some(Self { clipping: code & 1 != 0, lock_failure: code & 2 != 0 })
    }
}

/// One status report, fields in wire order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputFrame {
    pub error: ErrorIndicator,
    pub output_gain: f64,
    pub input_gain: PgaSetting,
    pub sync_filter: bool,
    pub external_reference: bool,
    pub samples_per_period: u32,
    pub f_d: f64,
    pub f_r: f64,
    pub tau: f64,
    /// `None` exactly in internal reference mode, where the wire shows 0.
    pub undersampling: Option<Undersampling>,
    pub r1: f64,
    pub phi1: f64,
    pub s1: f64,
    pub x1: f64,
    pub y1: f64,
    /// In-phase outputs of harmonics n, n+1, n+2.
    pub harmonic_x: [f64; 3],
    /// Quadrature outputs of harmonics n, n+1, n+2.
    pub harmonic_y: [f64; 3],
    pub lowest_harmonic: u32,
}

impl Default for OutputFrame {
    fn default() -> Self {
        Self {
            error: ErrorIndicator::NONE,
            output_gain: DEFAULT_OUTPUT_GAIN,
            input_gain: PgaSetting::UNITY,
            sync_filter: false,
            external_reference: false,
            samples_per_period: 0,
            f_d: 0.0,
            f_r: 0.0,
            tau: 0.0,
            undersampling: None,
            r1: 0.0,
            phi1: 0.0,
            s1: 0.0,
            x1: 0.0,
            y1: 0.0,
            harmonic_x: [0.0; 3],
            harmonic_y: [0.0; 3],
            lowest_harmonic: DEFAULT_LOWEST_HARMONIC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    #[error("expected 22 fields, found {0}")]
    FieldCount(usize),
    #[error("field {index} ({name}): cannot parse '{text}'")]
    Field { index: usize, name: &'static str, text: String },
    #[error("invalid frame: {0}")]
    Invariant(String),
}

impl OutputFrame {
    /// Checks the cross-field invariants of a frame.
    pub fn validate(&self) -> Result<(), FrameError> {
        let bad = |msg: String| Err(FrameError::Invariant(msg));
        if self.external_reference != self.undersampling.is_some() {
            return bad("undersampling factor must be 0 exactly in internal reference mode".into());
        }
        if let Some(u) = self.undersampling {
            if self.samples_per_period != 0 && self.samples_per_period != u.samples_per_period() {
                return bad(format!(
                    "{} samples per period does not match N = {}",
                    self.samples_per_period,
                    u.factor()
                ));
            }
        }
        if !(0.0..=MAX_OUTPUT_GAIN).contains(&self.output_gain) {
            return bad(format!("output gain {} outside 0..1e6", self.output_gain));
        }
        if !(self.r1 >= 0.0) {
            return bad(format!("negative amplitude {}", self.r1));
        }
        if self.lowest_harmonic < 2 {
            return bad(format!("lowest higher harmonic {} below 2", self.lowest_harmonic));
        }
        let floats = [self.f_d, self.f_r, self.tau, self.phi1, self.s1, self.x1, self.y1];
        if floats.iter().chain(&self.harmonic_x).chain(&self.harmonic_y).any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(())
    }

    /// Field texts in wire order.
    pub fn fields(&self) -> [String; FIELD_COUNT] {
        let n_text = match self.undersampling {
            None => "0".to_string(),
            Some(Undersampling::Half) => "0.5".to_string(),
            Some(u) => format!("{}", u.factor() as u32),
        };
        [
            self.error.code().to_string(),
            fixed(self.output_gain, 2),
            self.input_gain.to_string(),
            (self.sync_filter as u8).to_string(),
            (self.external_reference as u8).to_string(),
            self.samples_per_period.to_string(),
            fixed(self.f_d, 2),
            fixed(self.f_r, 2),
            fixed(self.tau, 2),
            n_text,
            fixed(self.r1, 5),
            fixed(self.phi1, 5),
            fixed(self.s1, 5),
            fixed(self.x1, 5),
            fixed(self.y1, 5),
            fixed(self.harmonic_x[0], 5),
            fixed(self.harmonic_x[1], 5),
            fixed(self.harmonic_x[2], 5),
            fixed(self.harmonic_y[0], 5),
            fixed(self.harmonic_y[1], 5),
            fixed(self.harmonic_y[2], 5),
            self.lowest_harmonic.to_string(),
        ]
    }

    /// Rounds every decimal field to its wire precision.
    pub fn quantized(&self) -> OutputFrame {
        parse_frame(&format_frame(self)).expect("formatted frame parses")
    }
}

/// Fixed-point text; a value that rounds to zero prints without a sign.
fn fixed(v: f64, decimals: usize) -> String {
    let text = format!("{v:.decimals$}");
    match text.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => text,
    }
}

/// Encodes a frame as one wire line including the `\r\n` terminator.
pub fn format_frame(frame: &OutputFrame) -> String {
    let mut line = String::with_capacity(200);
    for (i, field) in frame.fields().iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        line.push_str(field);
    }
    let _ = write!(line, "\r\n");
    line
}

fn field<T: std::str::FromStr>(fields: &[&str], index: usize) -> Result<T, FrameError> {
    fields[index].parse::<T>().map_err(|_| FrameError::Field {
        index,
        name: FIELD_NAMES[index],
        text: fields[index].to_string(),
    })
}

fn float_field(fields: &[&str], index: usize) -> Result<f64, FrameError> {
    let v: f64 = field(fields, index)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FrameError::Field { index, name: FIELD_NAMES[index], text: fields[index].to_string() })
    }
}

fn flag_field(fields: &[&str], index: usize) -> Result<bool, FrameError> {
    match fields[index] {
        "0" => Ok(false),
        "1" => Ok(true),
        text => Err(FrameError::Field { index, name: FIELD_NAMES[index], text: text.to_string() }),
    }
}

/// Parses one frame line (terminator optional).
pub fn parse_frame(line: &str) -> Result<OutputFrame, FrameError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != FIELD_COUNT {
        return Err(FrameError::FieldCount(fields.len()));
    }
    let bad = |index: usize| FrameError::Field { index, name: FIELD_NAMES[index], text: fields[index].to_string() };

    let error = ErrorIndicator::from_code(field(&fields, 0)?).ok_or_else(|| bad(0))?;
    let input_gain = PgaSetting::new(field(&fields, 2)?).map_err(|_| bad(2))?;
    let n_factor = float_field(&fields, 9)?;
    let undersampling =
        if n_factor == 0.0 { None } else { Some(Undersampling::from_factor(n_factor).ok_or_else(|| bad(9))?) };

    let frame = OutputFrame {
        error,
        output_gain: float_field(&fields, 1)?,
        input_gain,
        sync_filter: flag_field(&fields, 3)?,
        external_reference: flag_field(&fields, 4)?,
        samples_per_period: field(&fields, 5)?,
        f_d: float_field(&fields, 6)?,
        f_r: float_field(&fields, 7)?,
        tau: float_field(&fields, 8)?,
        undersampling,
        r1: float_field(&fields, 10)?,
        phi1: float_field(&fields, 11)?,
        s1: float_field(&fields, 12)?,
        x1: float_field(&fields, 13)?,
        y1: float_field(&fields, 14)?,
        harmonic_x: [float_field(&fields, 15)?, float_field(&fields, 16)?, float_field(&fields, 17)?],
        harmonic_y: [float_field(&fields, 18)?, float_field(&fields, 19)?, float_field(&fields, 20)?],
        lowest_harmonic: field(&fields, 21)?,
    };
    frame.validate()?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "0 10.00 1 0 0 200 200000.00 1000.00 0.60 0 416.40687 -0.03235 0.01083 416.18902 -13.46777 -0.33040 138.06182 -0.60012 -4.63077 -13.43283 -4.57161 2\r\n";

    #[test]
    fn sample_line_parses_and_round_trips() {
        let frame = parse_frame(SAMPLE).unwrap();
        assert_eq!(frame.error, ErrorIndicator::NONE);
        assert_eq!(frame.output_gain, 10.0);
        assert_eq!(frame.f_d, 200_000.0);
        assert_eq!(frame.f_r, 1000.0);
        assert_eq!(frame.tau, 0.6);
        assert_eq!(frame.r1, 416.40687);
        assert_eq!(frame.lowest_harmonic, 2);
        assert_eq!(frame.undersampling, None);
        assert_eq!(format_frame(&frame), SAMPLE);
    }

    #[test]
    fn default_frame_encoding() {
        assert_eq!(
            format_frame(&OutputFrame::default()),
            "0 10.00 1 0 0 0 0.00 0.00 0.00 0 0.00000 0.00000 0.00000 0.00000 0.00000 0.00000 0.00000 0.00000 0.00000 0.00000 0.00000 2\r\n"
        );
    }

    #[test]
    fn error_indicator_bits() {
        let both = ErrorIndicator { clipping: true, lock_failure: true };
        assert_eq!(both.code(), 3);
        assert_eq!(ErrorIndicator::from_code(1).unwrap(), ErrorIndicator { clipping: true, lock_failure: false });
        assert_eq!(ErrorIndicator::from_code(2).unwrap(), ErrorIndicator { clipping: false, lock_failure: true });
        assert_eq!(ErrorIndicator::from_code(4), None);
        let line = format_frame(&OutputFrame { error: both, ..Default::default() });
        assert!(line.starts_with("3 "));
    }

    #[test]
    fn negative_zero_prints_unsigned() {
        let frame = OutputFrame { x1: -1e-9, phi1: -0.0, ..Default::default() };
        let line = format_frame(&frame);
        assert!(!line.contains("-0.00000"), "{line}");
        assert_eq!(fixed(-0.004, 2), "0.00");
        assert_eq!(fixed(-0.005001, 2), "-0.01");
    }

    #[test]
    fn external_frame_fields() {
        let frame = OutputFrame {
            external_reference: true,
            undersampling: Some(Undersampling::Half),
            samples_per_period: 128,
            ..Default::default()
        };
        let line = format_frame(&frame);
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields[9], "0.5");
        assert_eq!(parse_frame(&line).unwrap(), frame);
        let frame = OutputFrame { undersampling: Some(Undersampling::Sixteen), samples_per_period: 4, ..frame };
        assert_eq!(format_frame(&frame).split_whitespace().nth(9), Some("16"));
    }

    #[test]
    fn frame_errors_are_distinct() {
        let short: String = SAMPLE.split_whitespace().take(21).collect::<Vec<_>>().join(" ");
        assert_eq!(parse_frame(&short), Err(FrameError::FieldCount(21)));
        let bad_gain = SAMPLE.replacen("0 10.00 1 ", "0 10.00 3 ", 1);
        assert!(matches!(parse_frame(&bad_gain), Err(FrameError::Field { index: 2, .. })));
        let bad_float = SAMPLE.replace("416.40687", "4x6");
        assert!(matches!(parse_frame(&bad_float), Err(FrameError::Field { index: 10, .. })));
        let bad_error = SAMPLE.replacen('0', "7", 1);
        assert!(matches!(parse_frame(&bad_error), Err(FrameError::Field { index: 0, .. })));
        // ext flag set but N = 0
        let ext_without_n = SAMPLE.replacen("0 0 200 ", "0 1 200 ", 1);
        assert!(matches!(parse_frame(&ext_without_n), Err(FrameError::Invariant(_))));
        let negative_r = SAMPLE.replace("416.40687", "-1.00000");
        assert!(matches!(parse_frame(&negative_r), Err(FrameError::Invariant(_))));
        let bad_n = SAMPLE.replacen(" 0.60 0 ", " 0.60 3 ", 1);
        assert!(matches!(parse_frame(&bad_n), Err(FrameError::Field { index: 9, .. })));
    }

    #[test]
    fn documented_commands() {
        assert_eq!(parse_command("e6"), Ok(Command::SetTimeConstant(6.0)));
        assert_eq!(parse_command("200"), Ok(Command::SetFrequency(200.0)));
        assert_eq!(parse_command("g2\r\n"), Ok(Command::SetInputGain(PgaSetting::new(2).unwrap())));
        assert_eq!(parse_command("s10"), Ok(Command::SetOutputGain(10.0)));
        assert_eq!(parse_command("h2\n"), Ok(Command::SetLowestHarmonic(2)));
        assert_eq!(parse_command("t"), Ok(Command::ToggleSyncFilter));
        assert_eq!(parse_command("r\r"), Ok(Command::ToggleReferenceMode));
        assert_eq!(parse_command("c"), Ok(Command::QueryExternalFrequency));
        assert_eq!(parse_command("0.5e3"), Ok(Command::SetFrequency(500.0)));
    }

    #[test]
    fn rejected_commands() {
        assert_eq!(parse_command("g3"), Err(CommandError::GainNotAllowed("3".into())));
        assert_eq!(parse_command("g1.5"), Err(CommandError::GainNotAllowed("1.5".into())));
        assert_eq!(parse_command(""), Err(CommandError::Empty));
        assert_eq!(parse_command("  \r\n"), Err(CommandError::Empty));
        assert_eq!(parse_command("x1"), Err(CommandError::Unknown('x')));
        assert_eq!(parse_command("t1"), Err(CommandError::UnexpectedArgument('t')));
        assert_eq!(parse_command("e"), Err(CommandError::MissingArgument('e')));
        assert_eq!(parse_command("e0.001"), Err(CommandError::TimeConstantOutOfRange(0.001)));
        assert_eq!(parse_command("e11"), Err(CommandError::TimeConstantOutOfRange(11.0)));
        assert_eq!(parse_command("eabc"), Err(CommandError::InvalidNumber { text: "abc".into() }));
        assert_eq!(parse_command("s-1"), Err(CommandError::OutputGainOutOfRange(-1.0)));
        assert_eq!(parse_command("s2e6"), Err(CommandError::OutputGainOutOfRange(2e6)));
        assert_eq!(parse_command("h1"), Err(CommandError::HarmonicOutOfRange("1".into())));
        assert_eq!(parse_command("0.5"), Err(CommandError::FrequencyOutOfRange(0.5)));
        assert_eq!(parse_command("60000"), Err(CommandError::FrequencyOutOfRange(60_000.0)));
        assert_eq!(parse_command("-5"), Err(CommandError::FrequencyOutOfRange(-5.0)));
        assert_eq!(parse_command("1e400"), Err(CommandError::InvalidNumber { text: "1e400".into() }));
        assert!(matches!(parse_command("enan"), Err(CommandError::InvalidNumber { .. })));
    }

    #[test]
    fn command_text_round_trips() {
        for line in ["t", "r", "c", "200", "1000.5", "g64", "e0.6", "s20", "h3"] {
            let cmd = parse_command(line).unwrap();
            assert_eq!(cmd.to_string(), line);
        }
    }

    #[test]
    fn framer_splits_on_either_terminator() {
        let mut framer = CommandFramer::new();
        assert_eq!(framer.push("e6\rg2"), vec!["e6".to_string()]);
        assert_eq!(framer.push("\n\r\nh3\n"), vec!["g2".to_string(), "h3".to_string()]);
        assert!(framer.push("20").is_empty());
        assert_eq!(framer.push("0\r"), vec!["200".to_string()]);
    }
}
