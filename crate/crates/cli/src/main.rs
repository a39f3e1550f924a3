mod experiment;
mod plot;
mod serve;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use olia::emulator::{ClockMode, Input, InstrumentConfig};
use olia::lab::{write_frames_csv, Scenario, SignalSpec, TtlReference};

#[derive(Parser)]
#[command(name = "olia", version, about = "Virtual digital lock-in amplifier")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the instrument and speak the line protocol to one client.
    Serve(serve::ServeArgs),
    /// Run a scenario file and write the frames as CSV.
    Scenario {
        file: PathBuf,
        /// Frames CSV; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also plot R1 and phi1 to an SVG file.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Plot columns of a frames CSV file.
    Plot {
        frames: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "R1,phi1")]
        fields: Vec<String>,
    },
    /// Run a measurement campaign and print a CSV table.
    Experiment(experiment::ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Clock {
    Accelerated,
    Realtime,
}

impl From<Clock> for ClockMode {
    fn from(c: Clock) -> Self {
        match c {
            Clock::Accelerated => ClockMode::Accelerated,
            Clock::Realtime => ClockMode::RealTime,
        }
    }
}

/// Instrument and input settings shared by the subcommands that build an emulator.
#[derive(clap::Args, Clone, Debug)]
pub struct InstrumentArgs {
    /// Scenario file supplying the initial configuration and input.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Input signal, e.g. `sine(250,1000,0) + noise(5,1)`.
    #[arg(long)]
    signal: Option<SignalSpec>,
    /// TTL reference frequency in Hz.
    #[arg(long)]
    ttl: Option<f64>,
    /// Sampling frequency in Hz.
    #[arg(long)]
    f_d: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl InstrumentArgs {
    pub fn build(&self, clock: ClockMode) -> anyhow::Result<(InstrumentConfig, Input)> {
        let (mut config, mut input) = match &self.scenario {
            Some(path) => {
                let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let scenario = Scenario::from_csv(file).with_context(|| format!("reading {}", path.display()))?;
                if !scenario.events.is_empty() {
                    log::warn!("{} timed events in {} are ignored here", scenario.events.len(), path.display());
                }
                (scenario.config, scenario.input)
            }
            None => (InstrumentConfig::default(), Input::signal(SignalSpec::sine(250.0, 1000.0, 0.0))),
        };
        if let Some(signal) = &self.signal {
            input.signal = signal.clone();
        }
        if let Some(f) = self.ttl {
            input.ttl = Some(TtlReference::new(f));
        }
        if let Some(f_d) = self.f_d {
            config.f_d = f_d;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.clock = clock;
        Ok((config, input))
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Serve(args) => serve::run(args),
        Cmd::Scenario { file, output, plot } => {
            let scenario =
                Scenario::from_csv(File::open(&file).with_context(|| format!("opening {}", file.display()))?)?;
            let result = scenario.run()?;
            for message in &result.diagnostics {
                log::warn!("{message}");
            }
            match output {
                Some(path) => write_frames_csv(BufWriter::new(File::create(&path)?), &result.frames)?,
                None => write_frames_csv(std::io::stdout().lock(), &result.frames)?,
            }
            if let Some(path) = plot {
                plot::plot_frames(&result.frames, &["R1".into(), "phi1".into()], &path)?;
            }
            Ok(())
        }
        Cmd::Plot { frames, output, fields } => {
            let frames = olia::lab::read_frames_csv(
                File::open(&frames).with_context(|| format!("opening {}", frames.display()))?,
            )?;
            plot::plot_frames(&frames, &fields, &output)
        }
        Cmd::Experiment(args) => experiment::run(args),
    }
}
