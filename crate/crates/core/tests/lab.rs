use std::f64::consts::{PI, TAU};

use olia::emulator::InstrumentConfig;
use olia::lab::experiments::{frequency_response_sweep, harmonic_table, max_safe_gain, snr_sweep, step_settling};
use olia::lab::{read_frames_csv, run_scenario, write_frames_csv, Scenario, SignalSpec};

#[test]
fn instrument_step_fit_matches_set_time_constant() {
    let config = InstrumentConfig { tau: 0.6, ..Default::default() };
    let fit = step_settling(&config, 380.0, 0.0, 6.0).unwrap();
    assert!((fit.tau_star / 0.6 - 1.0).abs() < 0.01, "{fit:?}");
    assert!((fit.r_inf / 380.0 - 1.0).abs() < 0.005);
}

#[test]
fn half_power_detuning_halves_response() {
    let tau = 0.3;
    let config = InstrumentConfig { tau, ..Default::default() };
    let detuning = 1.0 / (TAU * tau);
    let points = frequency_response_sweep(&config, &[1000.0, 1000.0 + detuning], 250.0).unwrap();
    assert!(points[0].1 > points[1].1);
    assert!((points[1].1 / points[0].1 - 0.5).abs() < 0.01, "{points:?}");
}

#[test]
fn square_fundamental_is_four_over_pi_of_peak() {
    let config = InstrumentConfig { tau: 0.3, ..Default::default() };
    let table = harmonic_table(&config, &SignalSpec::square(250.0, 100.0), 4).unwrap();
    assert_eq!(table.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!((table[0].1 / (1000.0 / PI) - 1.0).abs() < 0.02);
    assert!((3.0 * table[2].1 / table[0].1 - 1.0).abs() < 0.02);
}

#[test]
fn noise_free_point_matches_baseline() {
    let config = InstrumentConfig { tau: 0.1, ..Default::default() };
    let (baseline, points) = snr_sweep(&config, 1.0, &[1e-9], &[1]).unwrap();
    assert!((baseline - 1.0).abs() < 0.01, "{baseline}");
    assert_eq!(points[0].gain, max_safe_gain(1.0));
    assert!(points[0].error_pct.abs() < 0.01, "{points:?}");
}

#[test]
fn scenario_files_round_trip_on_disk() {
    let dir = std::env::temp_dir().join(format!("olia-lab-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = InstrumentConfig { tau: 0.06, ..Default::default() };
    let scenario = Scenario::new(config.clone(), SignalSpec::sine(100.0, 1000.0, 0.0), 1.0);
    let path = dir.join("scenario.csv");
    scenario.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let loaded = Scenario::from_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(loaded, scenario);

    let result = run_scenario(&config, &SignalSpec::sine(100.0, 1000.0, 0.0), 1.0).unwrap();
    assert_eq!(loaded.run().unwrap(), result);
    let frames_path = dir.join("frames.csv");
    write_frames_csv(std::fs::File::create(&frames_path).unwrap(), &result.frames).unwrap();
    let text = std::fs::read_to_string(&frames_path).unwrap();
    assert!(text.starts_with("t_s,error,output_gain,input_gain,"));
    assert_eq!(text.lines().count(), 11);
    let back = read_frames_csv(text.as_bytes()).unwrap();
    assert_eq!(back.len(), 10);
    assert_eq!(back[9].frame, result.frames[9].frame.quantized());
    std::fs::remove_dir_all(&dir).unwrap();
}
