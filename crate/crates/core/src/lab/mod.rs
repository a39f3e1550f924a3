//! Test signals and the experiments built on the emulator.

pub mod experiments;
pub mod fit;
pub mod scenario;
pub mod signal;

pub use experiments::{
    calibrate_phase_offset, frequency_response_sweep, harmonic_table, snr_sweep, ExperimentError, SettlingPlan,
};
pub use fit::{fit_step_response, FitError, StepFit};
pub use scenario::{
    read_frames_csv, run_scenario, write_frames_csv, Event, FrameCsvWriter, Scenario, ScenarioError, ScenarioResult,
};
pub use signal::{ReferenceClock, SignalError, SignalSpec, Stimulus, TtlReference};
