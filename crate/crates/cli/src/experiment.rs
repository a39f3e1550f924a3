use std::io;

use anyhow::Context;
use clap::{Args, Subcommand};
use olia::emulator::InstrumentConfig;
use olia::lab::experiments::{phase_sweep, rolloff_sweep, step_settling};
use olia::lab::{calibrate_phase_offset, frequency_response_sweep, harmonic_table, snr_sweep, SignalSpec};

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Reference frequency in Hz.
    #[arg(long, default_value_t = 1000.0)]
    f_r: f64,
    /// Time constant in seconds.
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    /// Input amplitude in mV.
    #[arg(long, default_value_t = 250.0)]
    amplitude: f64,
    #[command(subcommand)]
    kind: Kind,
}

#[derive(Subcommand, Debug)]
enum Kind {
    /// Settled amplitude against input frequency around the reference.
    Response {
        /// Largest detuning in Hz.
        #[arg(long, default_value_t = 10.0)]
        span: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Harmonic content of a square wave at the reference frequency.
    Harmonics {
        #[arg(long, default_value_t = 15)]
        k_max: u32,
    },
    /// Fitted time constant of the response to a switched-on sine.
    Step,
    /// Settled amplitude error against added noise.
    Snr {
        /// Noise RMS values in mV.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        noise: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Settled amplitude against input frequency with the reference following it.
    Rolloff {
        #[arg(long, value_delimiter = ',', default_value = "100,1000,5000,10000,20000,50000")]
        frequencies: Vec<f64>,
    },
    /// Measured phase against input phase.
    Phase {
        #[arg(long, default_value_t = 13)]
        points: usize,
    },
    /// Phase offset of the modelled front end.
    Calibrate,
}

pub fn run(args: ExperimentArgs) -> anyhow::Result<()> {
    let config = InstrumentConfig { f_r: args.f_r, tau: args.tau, ..Default::default() };
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    match args.kind {
        Kind::Response { span, points } => {
            let n = points.max(2);
            let f_list: Vec<f64> = (0..n).map(|i| args.f_r - span + 2.0 * span * i as f64 / (n - 1) as f64).collect();
            out.write_record(["f_s_hz", "R1_mv"])?;
            for (f, r) in frequency_response_sweep(&config, &f_list, args.amplitude)? {
                out.serialize((f, r))?;
            }
        }
        Kind::Harmonics { k_max } => {
            out.write_record(["k", "R_mv"])?;
            for (k, r) in harmonic_table(&config, &SignalSpec::square(args.amplitude, args.f_r), k_max)? {
                out.serialize((k, r))?;
            }
        }
        Kind::Step => {
            let fit = step_settling(&config, args.amplitude, 0.0, 10.0 * args.tau)?;
            out.write_record(["r_inf_mv", "tau_star_s", "residual"])?;
            out.serialize((fit.r_inf, fit.tau_star, fit.residual_norm))?;
        }
        Kind::Snr { noise, seeds } => {
            let (baseline, points) = snr_sweep(&config, args.amplitude, &noise, &seeds)?;
            log::info!("noise-free baseline {baseline:.5} mV");
            out.write_record(["snr", "seed", "input_gain", "R1_mv", "error_pct"])?;
            for p in points {
                out.serialize((p.snr, p.seed, p.gain.to_string(), p.settled, p.error_pct))?;
            }
        }
        Kind::Rolloff { frequencies } => {
            out.write_record(["f_hz", "R1_mv"])?;
            for (f, r) in rolloff_sweep(&config, &frequencies, args.amplitude)? {
                out.serialize((f, r))?;
            }
        }
        Kind::Phase { points } => {
            let n = points.max(2);
            let phases: Vec<f64> =
                (0..n).map(|i| -180.0 + 360.0 * i as f64 / (n - 1) as f64).map(f64::to_radians).collect();
            out.write_record(["phase_in_deg", "R1_mv", "phi1_deg"])?;
            for (p, r, phi) in phase_sweep(&config, &phases, args.amplitude)? {
                out.serialize((p.to_degrees(), r, phi.to_degrees()))?;
            }
        }
        Kind::Calibrate => {
            let offset = calibrate_phase_offset(&config).context("calibration")?;
            out.write_record(["phase_offset_deg"])?;
            out.serialize((offset.to_degrees(),))?;
        }
    }
    out.flush()?;
    Ok(())
}
