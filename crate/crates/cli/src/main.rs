use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rram_cli::commands::{self, DevicesArgs, StatsArgs, TrainArgs};
use rram_cli::config::FileConfig;
use rram_cli::validate::{self, ValidateOptions};
use rram_cli::CliError;
use rram_sim::trainer::{DeviceSetup, TrainingMode};

/// Weak-RESET RRAM device simulation, ensemble statistics and pulse-trained binarized networks.
#[derive(Debug, Parser)]
#[command(name = "rram", version)]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, env = "RRAM_SEED")]
    seed: Option<u64>,
    /// Directory receiving output files.
    #[arg(long, global = true, env = "RRAM_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Flat JSON config file; flags and environment variables take precedence.
    #[arg(long, global = true, env = "RRAM_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an ensemble of devices and write their trajectories.
    Devices(DevicesCmd),
    /// Spectral, increment and correlation statistics of a trajectory file.
    Stats(StatsCmd),
    /// Train the binarized network on MNIST.
    Train(TrainCmd),
    /// Run the acceptance battery and print one line per criterion.
    Validate(ValidateCmd),
}

#[derive(Debug, Args)]
struct DevicesCmd {
    /// Number of devices.
    #[arg(short = 'n', long = "devices", env = "RRAM_DEVICES")]
    devices: Option<usize>,
    /// Pulses per device.
    #[arg(short = 'p', long = "pulses", env = "RRAM_PULSES")]
    pulses: Option<usize>,
    /// Disable pink and telegraph noise.
    #[arg(long)]
    no_noise: bool,
    /// Give every device the median parameters.
    #[arg(long)]
    no_d2d: bool,
    /// Only add telegraph noise after the drift knee.
    #[arg(long)]
    rtn_second_regime_only: bool,
    /// Output file (default: <out-dir>/trajectory.csv).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsCmd {
    /// Trajectory CSV written by `devices`.
    input: PathBuf,
    /// Remove the mean drift before the spectral estimate.
    #[arg(long)]
    detrend: bool,
    /// Use Welch averaging with this segment length.
    #[arg(long)]
    welch_segment: Option<usize>,
    /// Histogram bins for the increment distribution.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainCmd {
    /// Training mode, or `all` for every mode.
    #[arg(long, env = "RRAM_MODE")]
    mode: Option<String>,
    #[arg(long, env = "RRAM_EPOCHS")]
    epochs: Option<usize>,
    /// Use only the first N training images.
    #[arg(long)]
    limit: Option<usize>,
    /// Directory holding the MNIST IDX files.
    #[arg(long, env = "RRAM_MNIST_DIR")]
    mnist_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateCmd {
    /// Statistical criteria only (the default).
    #[arg(long, conflicts_with = "full")]
    fast: bool,
    /// Include the MNIST training ablation.
    #[arg(long)]
    full: bool,
    #[arg(long, env = "RRAM_MNIST_DIR")]
    mnist_dir: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed);
    let out_dir = cli.out_dir.clone().or(file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mnist_dir = |flag: Option<PathBuf>| flag.or(file.mnist_dir.clone()).unwrap_or_else(|| PathBuf::from("data/mnist"));
    match cli.command {
        Command::Devices(c) => {
            let rtn_late = c.rtn_second_regime_only || file.rtn_second_regime_only.unwrap_or(false);
            let args = DevicesArgs {
                seed: seed.unwrap_or(7),
                n_devices: c.devices.or(file.devices).unwrap_or(64),
                n_pulses: c.pulses.or(file.pulses).unwrap_or(10_000),
                no_noise: c.no_noise || file.no_noise.unwrap_or(false),
                no_d2d: c.no_d2d || file.no_d2d.unwrap_or(false),
                noise: file.noise,
                options: file.model_options(rtn_late),
                d2d: file.d2d.clone(),
                output: c.output.unwrap_or_else(|| out_dir.join("trajectory.csv")),
            };
            commands::devices(&args)
        }
        Command::Stats(c) => {
            let args = StatsArgs {
                input: c.input,
                out_dir,
                detrend: c.detrend || file.detrend.unwrap_or(false),
                welch_segment: c.welch_segment.or(file.welch_segment),
                bins: c.bins.or(file.bins).unwrap_or(200),
            };
            let report = commands::stats(&args)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
            Ok(())
        }
        Command::Train(c) => {
            let mut config = file.trainer.clone();
            if let Some(s) = seed {
                config.master_seed = s;
            }
            if let Some(e) = c.epochs {
                config.epochs = e;
            }
            if c.limit.is_some() {
                config.train_limit = c.limit;
            }
            let modes = match c.mode.as_deref() {
                None => vec![config.mode],
                Some("all") => TrainingMode::ALL.to_vec(),
                Some(m) => vec![m.parse().map_err(|e: rram_sim::trainer::TrainError| CliError::Config(e.to_string()))?],
            };
            let args = TrainArgs {
                config,
                modes,
                setup: DeviceSetup {
                    d2d: file.d2d.clone(),
                    noise: file.noise,
                    options: file.model_options(file.rtn_second_regime_only.unwrap_or(false)),
                },
                mnist_dir: mnist_dir(c.mnist_dir),
                out_dir,
            };
            commands::train(&args, |m| {
                println!(
                    "{} epoch {}: loss {:.4} test accuracy {:.4} pulses {}",
                    m.mode, m.epoch, m.train_loss, m.test_accuracy, m.total_pulses_applied
                )
            })?;
            Ok(())
        }
        Command::Validate(c) => {
            let seed = seed.ok_or_else(|| CliError::Config("validate needs --seed (or RRAM_SEED)".into()))?;
            let mut opts = ValidateOptions::new(seed);
            opts.full = c.full;
            opts.mnist_dir = mnist_dir(c.mnist_dir);
            opts.trainer = file.trainer.clone();
            let results = validate::run(&opts, |r| println!("{r}"));
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} of {} criteria passed", results.len() - failed, results.len());
            if failed == 0 {
                Ok(())
            } else {
                Err(CliError::Failed(format!("{failed} criteria failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
