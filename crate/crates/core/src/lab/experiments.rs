//! Sweeps and calibrations run on the emulator.
//!
//! Every point is an independent [`Scenario`]; sweeps run their points in parallel.

use rayon::prelude::*;

use super::fit::{fit_step_response, FitError, StepFit};
use super::scenario::{Scenario, ScenarioError, ScenarioResult};
use super::signal::{SignalSpec, TtlReference};
use crate::emulator::{ConfigError, InstrumentConfig, ReferenceMode, FRAME_INTERVAL};
use crate::frontend::{PgaSetting, CLIP_FRACTION, FULL_SCALE_V, OFFSET_V};
use crate::protocol::{Command, OutputFrame};
use crate::timing::plan_internal;

/// Averaging window and total length for one settled measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettlingPlan {
    pub duration: f64,
    pub window: f64,
}

impl SettlingPlan {
    /// Discards `10τ`, then averages over a window of at least a tenth of the run, widened to
    /// a whole number of beat periods when `beat_hz` is non-zero.
    pub fn new(tau: f64, beat_hz: f64) -> Self {
        let mut window = round_up_to_frames((10.0 * tau / 9.0).max(0.5));
        let beat = beat_hz.abs();
        if beat > 0.0 {
            window = (window * beat).ceil() / beat;
        }
        Self { duration: round_up_to_frames(10.0 * tau + window), window }
    }

    /// Mean of `value` over the frames in the window.
    pub fn settled(&self, result: &ScenarioResult, value: impl Fn(&OutputFrame) -> f64) -> f64 {
        result.mean_over(self.duration - self.window, self.duration, value).unwrap_or(f64::NAN)
    }
}

fn round_up_to_frames(t: f64) -> f64 {
    (t / FRAME_INTERVAL - 1e-9).ceil() * FRAME_INTERVAL
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("harmonic {k} of {f} Hz is above the Nyquist limit {nyquist} Hz")]
    AboveNyquist { k: u32, f: f64, nyquist: f64 },
    #[error("{0}")]
    Invalid(String),
}

fn settle(config: &InstrumentConfig, signal: SignalSpec, beat_hz: f64) -> Result<(f64, f64), ExperimentError> {
    let plan = SettlingPlan::new(config.tau, beat_hz);
    let result = Scenario::new(config.clone(), signal, plan.duration).run()?;
    Ok((plan.settled(&result, |f| f.r1), plan.settled(&result, |f| f.phi1)))
}

/// Settled amplitude for each input frequency in `f_list`, reference fixed at `f_r`.
pub fn frequency_response_sweep(
    config: &InstrumentConfig,
    f_list: &[f64],
    amplitude: f64,
) -> Result<Vec<(f64, f64)>, ExperimentError> {
    let f_r = plan_internal(config.f_r, config.f_d).map_err(|e| ExperimentError::Invalid(e.to_string()))?.f_r_actual();
    f_list
        .par_iter()
        .map(|&f_s| Ok((f_s, settle(config, SignalSpec::sine(amplitude, f_s, 0.0), f_s - f_r)?.0)))
        .collect()
}

/// Detuning at which the response, normalised to the largest point, first falls to 1 %.
///
/// Interpolates linearly in `log(ratio)` between the bracketing points on the side above
/// `f_r`. `None` if the sweep never reaches 1 %.
pub fn half_width_one_percent(points: &[(f64, f64)], f_r: f64) -> Option<f64> {
    let peak = points.iter().map(|p| p.1).fold(f64::NAN, f64::max);
    let mut above: Vec<(f64, f64)> = points.iter().filter(|p| p.0 >= f_r).map(|&(f, r)| (f - f_r, r / peak)).collect();
    above.sort_by(|a, b| a.0.total_cmp(&b.0));
    above.windows(2).find(|w| w[0].1 > 0.01 && w[1].1 <= 0.01).map(|w| {
        let (a, b) = (w[0], w[1]);
        let frac = (0.01f64.ln() - a.1.ln()) / (b.1.ln() - a.1.ln());
        a.0 + frac * (b.0 - a.0)
    })
}

/// Runs a step of `amplitude` mV at `f_r` switched on at `t_on` and fits the response.
pub fn step_settling(
    config: &InstrumentConfig,
    amplitude: f64,
    t_on: f64,
    duration: f64,
) -> Result<StepFit, ExperimentError> {
    let f = plan_internal(config.f_r, config.f_d).map_err(|e| ExperimentError::Invalid(e.to_string()))?.f_r_actual();
    let result = Scenario::new(config.clone(), SignalSpec::sine(amplitude, f, 0.0).step(t_on), duration).run()?;
    Ok(fit_step_response(&result.amplitude_series(), t_on)?)
}

/// Settled amplitude at harmonics `1..=k_max` of a square wave, with the reference at the
/// square's fundamental and the higher harmonics read from the harmonic channels.
pub fn harmonic_table(
    config: &InstrumentConfig,
    spec: &SignalSpec,
    k_max: u32,
) -> Result<Vec<(u32, f64)>, ExperimentError> {
    let SignalSpec::Square { frequency, .. } = *spec else {
        return Err(ExperimentError::Invalid(format!("harmonic table needs a square wave, got {spec}")));
    };
    let nyquist = config.f_d / 2.0;
    if k_max as f64 * frequency >= nyquist {
        return Err(ExperimentError::AboveNyquist { k: k_max, f: frequency, nyquist });
    }
    let base = InstrumentConfig { f_r: frequency, ..config.clone() };
    let plan = plan_internal(base.f_r, base.f_d).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    if (plan.f_r_actual() - frequency).abs() > 1e-9 * frequency {
        return Err(ExperimentError::Invalid(format!("{frequency} Hz is not a whole number of samples per period")));
    }
    let starts: Vec<u32> = (2..=k_max.max(2)).step_by(3).collect();
    let runs: Vec<Vec<(u32, f64)>> = starts
        .par_iter()
        .map(|&h| {
            let config = InstrumentConfig { lowest_harmonic: h, ..base.clone() };
            let settling = SettlingPlan::new(config.tau, 0.0);
            let result = Scenario::new(config.clone(), spec.clone(), settling.duration).run()?;
            let mut row: Vec<(u32, f64)> = (0..3)
                .map(|i| (h + i as u32, settling.settled(&result, |f| f.harmonic_x[i].hypot(f.harmonic_y[i]))))
                .collect();
            if h == 2 {
                row.push((1, settling.settled(&result, |f| f.r1)));
            }
            Ok(row)
        })
        .collect::<Result<_, ExperimentError>>()?;
    let mut table: Vec<(u32, f64)> = runs.into_iter().flatten().filter(|&(k, _)| k <= k_max).collect();
    table.sort_by_key(|&(k, _)| k);
    Ok(table)
}

/// Largest input gain that keeps `peak_mv` more than `CLIP_FRACTION` away from both rails.
pub fn max_safe_gain(peak_mv: f64) -> PgaSetting {
    let headroom_v = OFFSET_V - CLIP_FRACTION * FULL_SCALE_V;
    PgaSetting::ALLOWED
        .iter()
        .rev()
        .filter(|&&g| g > 0)
        .map(|&g| PgaSetting::new(g as u32).expect("listed gain"))
        .find(|g| g.gain() as f64 * peak_mv / 1000.0 < headroom_v)
        .unwrap_or(PgaSetting::UNITY)
}

/// One noise level of an SNR sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrPoint {
    /// Signal amplitude over noise RMS.
    pub snr: f64,
    pub seed: u64,
    pub gain: PgaSetting,
    pub settled: f64,
    /// Deviation from the noise-free baseline, percent.
    pub error_pct: f64,
}

/// Settled amplitude of a locked sine with added white noise, against a noise-free run.
///
/// Each point uses the highest input gain for which six noise standard deviations plus the
/// signal stay clear of the ADC rails. Returns the baseline and the points.
pub fn snr_sweep(
    config: &InstrumentConfig,
    amplitude: f64,
    noise_rms_list: &[f64],
    seeds: &[u64],
) -> Result<(f64, Vec<SnrPoint>), ExperimentError> {
    let f = plan_internal(config.f_r, config.f_d).map_err(|e| ExperimentError::Invalid(e.to_string()))?.f_r_actual();
    let sine = SignalSpec::sine(amplitude, f, 0.0);
    let baseline_config = InstrumentConfig { input_gain: max_safe_gain(amplitude), ..config.clone() };
    let jobs: Vec<(f64, u64)> = noise_rms_list.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let (baseline, points) = rayon::join(
        || settle(&baseline_config, sine.clone(), 0.0).map(|r| r.0),
        || {
            jobs.par_iter()
                .map(|&(rms, seed)| {
                    let gain = max_safe_gain(amplitude + 6.0 * rms);
                    let config = InstrumentConfig { input_gain: gain, ..config.clone() };
                    let (settled, _) = settle(&config, sine.clone().plus(SignalSpec::noise(rms, seed)), 0.0)?;
                    Ok((rms, seed, gain, settled))
                })
                .collect::<Result<Vec<_>, ExperimentError>>()
        },
    );
    let baseline = baseline?;
    let points = points?
        .into_iter()
        .map(|(rms, seed, gain, settled)| SnrPoint {
            snr: amplitude / rms,
            seed,
            gain,
            settled,
            error_pct: 100.0 * (settled / baseline - 1.0),
        })
        .collect();
    Ok((baseline, points))
}

/// Settled amplitude at each internal reference frequency, with the input sine on the
/// realised reference frequency. Returns `(f_r, R)` pairs.
pub fn rolloff_sweep(
    config: &InstrumentConfig,
    f_list: &[f64],
    amplitude: f64,
) -> Result<Vec<(f64, f64)>, ExperimentError> {
    f_list
        .par_iter()
        .map(|&f| {
            let config = InstrumentConfig { f_r: f, ..config.clone() };
            let f_actual =
                plan_internal(f, config.f_d).map_err(|e| ExperimentError::Invalid(e.to_string()))?.f_r_actual();
            Ok((f_actual, settle(&config, SignalSpec::sine(amplitude, f_actual, 0.0), 0.0)?.0))
        })
        .collect()
}

/// Settled `(φ_s, R, φ)` for a locked sine at each input phase (radians).
pub fn phase_sweep(
    config: &InstrumentConfig,
    phases: &[f64],
    amplitude: f64,
) -> Result<Vec<(f64, f64, f64)>, ExperimentError> {
    let f = plan_internal(config.f_r, config.f_d).map_err(|e| ExperimentError::Invalid(e.to_string()))?.f_r_actual();
    phases
        .par_iter()
        .map(|&phase| {
            let (r, phi) = settle(config, SignalSpec::sine(amplitude, f, phase), 0.0)?;
            Ok((phase, r, phi))
        })
        .collect()
}

/// Amplitude of the reference square used for phase calibration, mV.
pub const CALIBRATION_AMPLITUDE_MV: f64 = 500.0;

/// The instrument's systematic phase offset ϕ*: the settled phase measured with the
/// reference square output fed back to the input.
pub fn calibrate_phase_offset(config: &InstrumentConfig) -> Result<f64, ExperimentError> {
    if config.reference != ReferenceMode::Internal {
        return Err(ExperimentError::Invalid("phase calibration needs internal referencing".into()));
    }
    let config = InstrumentConfig { input_gain: PgaSetting::UNITY, ..config.clone() };
    Ok(settle(&config, SignalSpec::ReferenceDriven { amplitude: CALIBRATION_AMPLITUDE_MV }, 0.0)?.1)
}

/// Least-squares line `y = slope·x + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Settling times after the onset of a sine at `config.f_r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    /// Final amplitude the settling is measured against.
    pub final_r: f64,
    /// Time from onset until the output is first within `tolerance` of its final value and
    /// stays there, seconds.
    pub settled_after: Option<f64>,
    /// Time from onset until the output first reaches `(1 − tolerance)` of its final value.
    pub reached_after: Option<f64>,
}

/// Switches a sine on at `t_on` and measures how long the amplitude takes to settle.
/// The final value is the settled mean at the end of a run lasting `duration` past onset.
pub fn onset_latency(
    config: &InstrumentConfig,
    amplitude: f64,
    t_on: f64,
    duration: f64,
    tolerance: f64,
) -> Result<Latency, ExperimentError> {
    let f = plan_internal(config.f_r, config.f_d).map_err(|e| ExperimentError::Invalid(e.to_string()))?.f_r_actual();
    let end = round_up_to_frames(t_on + duration);
    let result = Scenario::new(config.clone(), SignalSpec::sine(amplitude, f, 0.0).step(t_on), end).run()?;
    let window = (end - t_on) / 10.0;
    let final_r = result.mean_over(end - window, end, |fr| fr.r1).unwrap_or(f64::NAN);
    let after: Vec<(f64, f64)> = result.amplitude_series().into_iter().filter(|p| p.0 > t_on).collect();
    let within = |r: f64| (r / final_r - 1.0).abs() <= tolerance;
    let settled_after = after
        .iter()
        .enumerate()
        .find(|(i, p)| within(p.1) && after[*i..].iter().all(|q| within(q.1)))
        .map(|(_, p)| p.0 - t_on);
    let reached_after = after.iter().find(|p| p.1 >= (1.0 - tolerance) * final_r).map(|p| p.0 - t_on);
    Ok(Latency { final_r, settled_after, reached_after })
}

/// Settled `(R, φ)` of a sine at `frequency` measured once with the internal reference and
/// once locked to a TTL reference of the same frequency.
pub fn external_vs_internal(
    config: &InstrumentConfig,
    frequency: f64,
    amplitude: f64,
) -> Result<((f64, f64), (f64, f64)), ExperimentError> {
    let signal = SignalSpec::sine(amplitude, frequency, 0.0);
    let internal = InstrumentConfig { f_r: frequency, reference: ReferenceMode::Internal, ..config.clone() };
    let external = InstrumentConfig { f_r: frequency, reference: ReferenceMode::External, ..config.clone() };
    let (a, b) = rayon::join(
        || settle(&internal, signal.clone(), 0.0),
        || {
            let plan = SettlingPlan::new(external.tau, 0.0);
            let start = round_up_to_frames(external.measurement_window);
            let result = Scenario::new(external.clone(), signal.clone(), start + plan.duration)
                .with_ttl(TtlReference::new(frequency))
                .command(0.0, Command::QueryExternalFrequency)
                .run()?;
            let shifted = SettlingPlan { duration: start + plan.duration, window: plan.window };
            if result.frames.last().is_some_and(|f| f.frame.error.lock_failure) {
                return Err(ExperimentError::Invalid(format!("no lock: {}", result.diagnostics.join("; "))));
            }
            Ok((shifted.settled(&result, |f| f.r1), shifted.settled(&result, |f| f.phi1)))
        },
    );
    Ok((a?, b?))
}
