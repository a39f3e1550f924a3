//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs without the libtest harness so every criterion reports even when an earlier one
//! fails. Oracles here are written independently of the library code they check.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::Instant;

use olia::dsp::{compute_alpha, reference_pair, step_response_model, HarmonicChannel, NoiseTracker, SyncAccumulator};
use olia::emulator::{Emulator, Input, InstrumentConfig};
use olia::frontend::PgaSetting;
use olia::lab::experiments::{
    calibrate_phase_offset, external_vs_internal, frequency_response_sweep, half_width_one_percent, harmonic_table,
    linear_fit, onset_latency, phase_sweep, rolloff_sweep, snr_sweep, step_settling,
};
use olia::lab::{SignalSpec, TtlReference};
use olia::protocol::{format_frame, parse_frame, ErrorIndicator, OutputFrame};
use olia::timing::{plan_external, Undersampling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn step_settling_criterion() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for tau in [0.06, 0.6, 6.0] {
        let config = InstrumentConfig { tau, ..Default::default() };
        let duration = (10.0 * tau).max(2.0);
        let fit = step_settling(&config, 380.0, 0.0, duration).map_err(|e| e.to_string())?;
        let rel = fit.tau_star / tau - 1.0;
        ok &= rel.abs() < 0.02;
        details.push(format!("τ={tau}: τ*={:.4} ({:+.2}%)", fit.tau_star, 100.0 * rel));
    }
    check(ok, details.join(", "))
}

fn selectivity_criterion() -> Outcome {
    let tau = 0.6;
    let config = InstrumentConfig { tau, ..Default::default() };
    let detunings = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 2.75, 3.0, 3.5, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0];
    let f_list: Vec<f64> = detunings.iter().map(|d| 1000.0 + d).collect();
    let points = frequency_response_sweep(&config, &f_list, 250.0).map_err(|e| e.to_string())?;
    let peak = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let worst = points
        .iter()
        .filter(|p| p.0 - 1000.0 >= 0.5)
        .map(|&(f, r)| {
            let x = TAU * (f - 1000.0) * tau;
            (r / peak - 1.0 / (1.0 + x * x)).abs()
        })
        .fold(0.0, f64::max);
    let width = half_width_one_percent(&points, 1000.0);
    let width_ok = width.is_some_and(|w| (2.0..=4.5).contains(&w));
    check(
        worst < 0.05 && width_ok,
        format!("max deviation {:.4} of peak, Δf₁% = {}", worst, width.map_or("none".into(), |w| format!("{w:.3} Hz"))),
    )
}

fn harmonic_criterion() -> Outcome {
    let config = InstrumentConfig { tau: 0.6, ..Default::default() };
    let table = harmonic_table(&config, &SignalSpec::square(250.0, 100.0), 21).map_err(|e| e.to_string())?;
    let r1 = table.iter().find(|p| p.0 == 1).ok_or("no fundamental")?.1;
    let mut worst_odd: f64 = 0.0;
    let mut worst_even: f64 = 0.0;
    for &(k, r) in &table {
        if k % 2 == 1 {
            worst_odd = worst_odd.max((r * k as f64 / r1 - 1.0).abs());
        } else {
            worst_even = worst_even.max(r / r1);
        }
    }
    let covered = (1..=21).all(|k| table.iter().any(|p| p.0 == k));
    check(
        covered && worst_odd < 0.02 && worst_even < 0.01,
        format!(
            "R(1) = {r1:.3} mV (4A/π = {:.3}), odd worst {:.3}%, even worst {:.3}% of R(1)",
            1000.0 / PI,
            100.0 * worst_odd,
            100.0 * worst_even
        ),
    )
}

fn noise_criterion() -> Outcome {
    let config = InstrumentConfig { tau: 6.0, ..Default::default() };
    let amplitude = 1.0;
    let seeds = [11, 22, 33];
    let (baseline, points) =
        snr_sweep(&config, amplitude, &[amplitude / 10.0, amplitude / 0.01], &seeds).map_err(|e| e.to_string())?;
    let passes = |snr: f64, limit: f64| {
        let errs: Vec<f64> = points.iter().filter(|p| (p.snr - snr).abs() < 1e-9 * snr).map(|p| p.error_pct).collect();
        (errs.iter().filter(|e| e.abs() < limit).count() * 2 > errs.len(), errs)
    };
    let (high_ok, high) = passes(10.0, 0.5);
    let (low_ok, low) = passes(0.01, 15.0);
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:+.3}%")).collect::<Vec<_>>().join(" ");
    check(high_ok && low_ok, format!("baseline {baseline:.5} mV; SNR 10: {}; SNR 0.01: {}", fmt(&high), fmt(&low)))
}

fn rolloff_criterion() -> Outcome {
    let config = InstrumentConfig { tau: 0.6, ..Default::default() };
    let f_list = [1e3, 2e3, 4e3, 5e3, 8e3, 1e4, 2e4, 2.5e4, 4e4, 5e4];
    let mut points = rolloff_sweep(&config, &f_list, 1000.0).map_err(|e| e.to_string())?;
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let r_ref = points[0].1;
    let norm: Vec<f64> = points.iter().map(|p| p.1 / r_ref).collect();
    let monotone = norm.windows(2).all(|w| w[1] <= w[0]);
    let droop = 1.0 - norm[norm.len() - 1];
    check(
        monotone && (0.10..=0.13).contains(&droop),
        format!(
            "normalised: {}; droop at 50 kHz {:.2}%",
            norm.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(" "),
            100.0 * droop
        ),
    )
}

fn phase_criterion() -> Outcome {
    let config = InstrumentConfig { tau: 0.6, ..Default::default() };
    let phases: Vec<f64> = (0..=9).map(|i| (10.0 * i as f64).to_radians()).collect();
    let sweep = phase_sweep(&config, &phases, 250.0).map_err(|e| e.to_string())?;
    let (slope, offset) = linear_fit(&sweep.iter().map(|p| (p.0, p.2)).collect::<Vec<_>>());
    let (r_min, r_max) = sweep.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let spread = (r_max - r_min) / r_min;
    let phi_star = calibrate_phase_offset(&config).map_err(|e| e.to_string())?;
    let residual = sweep.iter().map(|p| (p.2 - p.0 - phi_star).to_degrees().abs()).fold(0.0, f64::max);
    check(
        (slope - 1.0).abs() <= 0.005 && spread < 0.001 && residual < 0.02,
        format!(
            "slope {slope:.5}, offset {:.4}°, R spread {:.4}%, ϕ* {:.4}°, worst residual {residual:.4}°",
            offset.to_degrees(),
            100.0 * spread,
            phi_star.to_degrees()
        ),
    )
}

const SAMPLE: &str = "0 10.00 1 0 0 200 200000.00 1000.00 0.60 0 416.40687 -0.03235 0.01083 416.18902 -13.46777 -0.33040 138.06182 -0.60012 -4.63077 -13.43283 -4.57161 2\r\n";

fn random_frame(rng: &mut ChaCha8Rng) -> OutputFrame {
    let external = rng.random_bool(0.5);
    let undersampling = external.then(|| Undersampling::ALL[rng.random_range(0..6)]);
    let gain = PgaSetting::ALLOWED[rng.random_range(0..PgaSetting::ALLOWED.len())] as u32;
    let mut mv = || -> f64 { rng.random_range(-2000.0..2000.0) };
    let (x1, y1) = (mv(), mv());
    let harmonic_x = [mv(), mv(), mv()];
    let harmonic_y = [mv(), mv(), mv()];
    let samples_per_period = match undersampling {
        Some(u) if rng.random_bool(0.8) => u.samples_per_period(),
        Some(_) => 0,
        None => rng.random_range(3..200_000),
    };
    OutputFrame {
        error: ErrorIndicator { clipping: rng.random_bool(0.3), lock_failure: external && rng.random_bool(0.3) },
        output_gain: rng.random_range(0.0..1e6),
        input_gain: PgaSetting::new(gain).unwrap(),
        sync_filter: rng.random_bool(0.5),
        external_reference: external,
        samples_per_period,
        f_d: rng.random_range(0.0..200_000.0),
        f_r: rng.random_range(0.0..50_000.0),
        tau: rng.random_range(0.01..10.0),
        undersampling,
        r1: x1.hypot(y1),
        phi1: y1.atan2(x1),
        s1: rng.random_range(0.0..100.0),
        x1,
        y1,
        harmonic_x,
        harmonic_y,
        lowest_harmonic: rng.random_range(2..1000),
    }
    .quantized()
}

fn protocol_criterion() -> Outcome {
    let mut problems = Vec::new();
    let sample = parse_frame(SAMPLE).map_err(|e| e.to_string())?;
    let documented = sample.error == ErrorIndicator::NONE
        && sample.output_gain == 10.0
        && sample.f_d == 200_000.0
        && sample.f_r == 1000.0
        && sample.tau == 0.6
        && sample.r1 == 416.40687
        && sample.lowest_harmonic == 2;
    if !documented {
        problems.push("sample fields".to_string());
    }
    if format_frame(&sample) != SAMPLE {
        problems.push("sample re-encoding".to_string());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut round_trip_failures = 0;
    for _ in 0..10_000 {
        let frame = random_frame(&mut rng);
        let line = format_frame(&frame);
        match parse_frame(&line) {
            Ok(back) if back == frame && format_frame(&back) == line => {}
            _ => round_trip_failures += 1,
        }
    }
    if round_trip_failures > 0 {
        problems.push(format!("{round_trip_failures} random frames failed to round-trip"));
    }

    let mut emulator = Emulator::new(InstrumentConfig::default(), Input::default().with_ttl(TtlReference::new(500.0)))
        .map_err(|e| e.to_string())?;
    let mut command = |line: &str, expect: &dyn Fn(&OutputFrame) -> bool| {
        let ok = emulator.apply_line(line).is_ok() && expect(&emulator.frame());
        if !ok {
            problems.push(format!("command '{line}'"));
        }
    };
    command("t", &|f| f.sync_filter);
    command("t", &|f| !f.sync_filter);
    command("200", &|f| f.f_r == 200.0 && f.samples_per_period == 1000);
    command("g4", &|f| f.input_gain.gain() == 4);
    command("e6", &|f| f.tau == 6.0);
    command("s20", &|f| f.output_gain == 20.0);
    command("h3", &|f| f.lowest_harmonic == 3);
    command("r", &|f| f.external_reference && f.error.lock_failure);
    command("c", &|f| !f.error.lock_failure && f.f_r == 500.0 && f.undersampling == Some(Undersampling::Half));
    let before = emulator.frame();
    let invalid = ["g3", "e0", "e11", "s-1", "s2e6", "h1", "h2.5", "x", "t1", "", "60000", "0.5", "e", "g", "cq"];
    for line in invalid {
        if emulator.apply_line(line).is_ok() || emulator.frame() != before {
            problems.push(format!("invalid '{line}' accepted or changed state"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("sample line byte-identical, 10000 random frames, 9 command steps, {} rejections", invalid.len())
        } else {
            problems.join("; ")
        },
    )
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn oracle_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;
    let m = 200;
    let alpha = compute_alpha::<f64>(0.01, 20_000.0).map_err(|e| e.to_string())?.alpha();
    let signal: Vec<f64> = (0..n).map(|_| rng.random_range(-1000.0..1000.0)).collect();

    // cascade against convolution with the two-stage impulse response α²(j+1)(1−α)^j
    let mut channel = HarmonicChannel::<f64>::new(1).map_err(|e| e.to_string())?;
    let kernel: Vec<f64> = (0..n).map(|j| alpha * alpha * (j + 1) as f64 * (1.0 - alpha).powi(j as i32)).collect();
    let mixed: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let q = reference_pair::<f64>(i as u64, m, 1).unwrap();
            (signal[i] * q.qx, signal[i] * q.qy)
        })
        .collect();
    let mut cascade_err: f64 = 0.0;
    for i in 0..n {
        channel.update(signal[i], reference_pair(i as u64, m, 1).unwrap(), alpha);
        if i % 97 == 0 || i == n - 1 {
            let (x, y) = (0..=i)
                .fold((0.0, 0.0), |acc, j| (acc.0 + kernel[j] * mixed[i - j].0, acc.1 + kernel[j] * mixed[i - j].1));
            cascade_err = cascade_err.max(rel(channel.x2, x)).max(rel(channel.y2, y));
        }
    }

    // tracker against the weighted variance with weights α(1−α)^(n−i) and (1−α)^n on the zero start
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..500.0)).collect();
    let a = 0.003;
    let mut tracker = NoiseTracker::<f64>::new();
    let mut tracker_err: f64 = 0.0;
    for i in 0..n {
        tracker.update(r[i], a);
        if i % 997 == 0 || i == n - 1 {
            let len = i + 1;
            let w0 = (1.0 - a).powi(len as i32);
            let weights: Vec<f64> = (0..len).map(|j| a * (1.0 - a).powi((len - 1 - j) as i32)).collect();
            let mean: f64 = weights.iter().zip(&r).map(|(w, x)| w * x).sum();
            let var: f64 = weights.iter().zip(&r).map(|(w, x)| w * (x - mean).powi(2)).sum::<f64>() + w0 * mean * mean;
            tracker_err = tracker_err.max(rel(tracker.mean_r, mean)).max(rel(tracker.var_r, var));
        }
    }

    // one reference period of any harmonic k ≥ 2 mixes to zero
    let m = 2000;
    let mut null_worst: f64 = 0.0;
    for k in 2..=25u32 {
        let mut acc = SyncAccumulator::<f64>::new(m).unwrap();
        let mut out = None;
        for i in 0..m {
            let s = 1000.0 * (TAU * k as f64 * i as f64 / m as f64 + 0.3 * k as f64).sin();
            let q = reference_pair::<f64>(i as u64, m, 1).unwrap();
            out = acc.update(s * q.qx, s * q.qy);
        }
        let (x, y) = out.ok_or("sync accumulator produced no output")?;
        null_worst = null_worst.max(x.abs()).max(y.abs());
    }

    let model_ok = step_response_model::<f64>(0.0, 0.6, 380.0) == 0.0
        && (step_response_model::<f64>(0.6, 0.6, 380.0) / 380.0 - 0.26424).abs() < 1e-5
        && (step_response_model::<f64>(6.0, 0.6, 380.0) / 380.0 - 0.9995).abs() < 1e-5;

    check(
        cascade_err < 1e-9 && tracker_err < 1e-9 && null_worst < 1e-9 && model_ok,
        format!(
            "cascade rel err {cascade_err:.2e}, tracker rel err {tracker_err:.2e}, sync null {null_worst:.2e} mV, step model {}",
            if model_ok { "ok" } else { "wrong" }
        ),
    )
}

fn latency_criterion() -> Outcome {
    let sync = InstrumentConfig { f_r: 1.0, sync_filter: true, ..Default::default() };
    let s = onset_latency(&sync, 250.0, 0.3, 5.0, 0.005).map_err(|e| e.to_string())?;
    let exponential = InstrumentConfig { f_r: 1.0, tau: 2.5, ..Default::default() };
    let e = onset_latency(&exponential, 250.0, 0.3, 60.0, 0.005).map_err(|e| e.to_string())?;
    let sync_ok = s.settled_after.is_some_and(|t| t <= 2.0);
    let exp_ok = e.reached_after.is_some_and(|t| t > 20.0);
    let show = |t: Option<f64>| t.map_or("never".to_string(), |t| format!("{t:.1} s"));
    check(
        sync_ok && exp_ok,
        format!(
            "sync settled after {}; exponential τ=2.5 s reached 99.5% after {} (needs > 20 s; two-stage model: {:.1} s)",
            show(s.settled_after),
            show(e.reached_after),
            2.5 * two_stage_time_to(0.995)
        ),
    )
}

/// `x` with `1 − e^(−x)(1 + x) = level`, by bisection.
fn two_stage_time_to(level: f64) -> f64 {
    let (mut lo, mut hi): (f64, f64) = (0.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - (-mid).exp() * (1.0 + mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn ladder_criterion() -> Outcome {
    let rungs = [
        (1562.5, Undersampling::Half, 128),
        (3125.0, Undersampling::One, 64),
        (6250.0, Undersampling::Two, 32),
        (12_500.0, Undersampling::Four, 16),
        (25_000.0, Undersampling::Eight, 8),
        (50_000.0, Undersampling::Sixteen, 4),
    ];
    let mut problems = Vec::new();
    for (i, &(limit, rung, m)) in rungs.iter().enumerate() {
        match plan_external(limit) {
            Ok(p) if p.undersampling() == rung && p.samples_per_period() == m && p.f_d_effective() <= 200_000.0 => {}
            _ => problems.push(format!("{limit} Hz")),
        }
        if let Some(&(_, next, _)) = rungs.get(i + 1) {
            if plan_external(limit * (1.0 + 1e-12)).map(|p| p.undersampling()) != Ok(next) {
                problems.push(format!("just above {limit} Hz"));
            }
        }
    }
    if plan_external(50_000.0 * (1.0 + 1e-12)).is_ok() {
        problems.push("above 50 kHz accepted".into());
    }
    let config = InstrumentConfig { tau: 0.6, ..Default::default() };
    let ((r_int, _), (r_ext, _)) = external_vs_internal(&config, 1000.0, 250.0).map_err(|e| e.to_string())?;
    let m_star = plan_external(1000.0).map(|p| p.samples_per_period()).unwrap_or(0);
    let agreement = r_ext / r_int - 1.0;
    if m_star != 128 {
        problems.push(format!("m* = {m_star} at 1 kHz"));
    }
    check(
        problems.is_empty() && agreement.abs() < 0.005,
        format!(
            "{}; 1 kHz internal {r_int:.4} mV, external {r_ext:.4} mV ({:+.3}%), m* = {m_star}",
            if problems.is_empty() { "six rungs ok".to_string() } else { problems.join(", ") },
            100.0 * agreement
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("step settling", step_settling_criterion),
        ("frequency selectivity", selectivity_criterion),
        ("harmonic decomposition", harmonic_criterion),
        ("noise robustness", noise_criterion),
        ("roll-off", rolloff_criterion),
        ("phase behaviour", phase_criterion),
        ("protocol golden", protocol_criterion),
        ("oracle suites", oracle_criterion),
        ("synchronous vs exponential latency", latency_criterion),
        ("external scheduling ladder", ladder_criterion),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {}: {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
