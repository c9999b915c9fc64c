//! Subcommand implementations. Each one is a pure function of its inputs and
//! writes its results below an output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rram_sim::device::{CycleNoiseParams, ModelOptions, NoiseModel};
use rram_sim::stats::{correlation, delta_w_fit, ensemble_psd, histogram, pooled_increments, CorrelationMode, PsdOptions};
use rram_sim::trainer::{self, mnist, DeviceSetup, EpochMetrics, TrainError, TrainerConfig, TrainingMode};
use rram_sim::trajectory::{self, EnsembleSpec, TrajectoryError};
use rram_sim::variability::{median_device, D2DConfig, ParamSource};
use rram_sim::SeedPolicy;
use serde_json::json;

use crate::CliError;

pub const MNIST_HINT: &str = "MNIST not found. Place the four uncompressed IDX files \
(train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte) \
in the dataset directory, e.g. `npm pack mnist-data && tar xzf mnist-data-*.tgz && cp package/*-ubyte data/mnist/`, \
or point --mnist-dir / RRAM_MNIST_DIR at them";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

#[derive(Debug, Clone)]
pub struct DevicesArgs {
    pub seed: u64,
    pub n_devices: usize,
    pub n_pulses: usize,
    pub no_noise: bool,
    pub no_d2d: bool,
    pub noise: CycleNoiseParams,
    pub options: ModelOptions,
    pub d2d: D2DConfig,
    pub output: PathBuf,
}

/// Simulate an ensemble and write its trajectory CSV.
pub fn devices(args: &DevicesArgs) -> Result<(), CliError> {
    if args.n_devices == 0 {
        return Err(CliError::Config("device count must be at least 1".into()));
    }
    let mut noise = args.noise;
    if args.no_noise {
        noise.alpha = 0.0;
    }
    let noise = NoiseModel::new(noise, args.options).map_err(|e| CliError::Config(e.to_string()))?;
    let source = if args.no_d2d {
        ParamSource::Fixed(median_device(&args.d2d))
    } else {
        ParamSource::Sampled(args.d2d.clone())
    };
    let spec = EnsembleSpec {
        n_devices: args.n_devices,
        n_pulses: args.n_pulses,
        source,
        noise,
        disable_rtn: args.no_noise,
    };
    let traj = trajectory::simulate(&spec, &SeedPolicy::new(args.seed)).map_err(anyhow::Error::from)?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut out = create_file(&args.output)?;
    trajectory::write_csv(&traj, &mut out).context("writing trajectory")?;
    out.flush().context("writing trajectory")?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StatsArgs {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub detrend: bool,
    pub welch_segment: Option<usize>,
    pub bins: usize,
}

/// Spectral, increment and correlation statistics of a trajectory CSV.
pub fn stats(args: &StatsArgs) -> Result<serde_json::Value, CliError> {
    let file = File::open(&args.input)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", args.input.display())))?;
    let ens = trajectory::read_csv(BufReader::new(file)).map_err(|e| match e {
        TrajectoryError::Parse { .. } => CliError::Config(format!("{}: {e}", args.input.display())),
        other => CliError::Runtime(other.into()),
    })?;
    create_dir(&args.out_dir)?;

    let psd = ensemble_psd(
        &ens,
        &PsdOptions {
            detrend: args.detrend,
            welch_segment: args.welch_segment,
            ..Default::default()
        },
    )
    .map_err(anyhow::Error::from)?;
    let mut out = create_file(&args.out_dir.join("psd.csv"))?;
    writeln!(out, "freq,psd").context("writing psd.csv")?;
    for (f, p) in psd.frequencies.iter().zip(&psd.psd) {
        writeln!(out, "{f},{p}").context("writing psd.csv")?;
    }
    out.flush().context("writing psd.csv")?;

    let increments = pooled_increments(&ens);
    let fit = delta_w_fit(&ens);
    if let Ok(f) = &fit {
        let half = 10.0 * f.cauchy_gamma.max(f.gauss_sigma);
        let mut out = create_file(&args.out_dir.join("delta_w_hist.csv"))?;
        writeln!(out, "delta_w,bin_count").context("writing histogram")?;
        for (x, c) in histogram(&increments, args.bins, f.cauchy_x0 - half, f.cauchy_x0 + half) {
            writeln!(out, "{x},{c}").context("writing histogram")?;
        }
        out.flush().context("writing histogram")?;
    }

    let mode = if ens.n_devices() >= 2 {
        CorrelationMode::Cross
    } else {
        CorrelationMode::Auto
    };
    let corr = correlation(&ens, mode).map_err(anyhow::Error::from)?;
    let mut out = create_file(&args.out_dir.join("correlation.csv"))?;
    writeln!(out, "lag,auto,cross").context("writing correlation.csv")?;
    for (i, lag) in corr.lags.iter().enumerate() {
        let cross = corr.cross.as_ref().map_or(String::new(), |c| c[i].to_string());
        writeln!(out, "{lag},{},{cross}", corr.auto[i]).context("writing correlation.csv")?;
    }
    out.flush().context("writing correlation.csv")?;

    let delta_w = match &fit {
        Ok(f) => json!({
            "n_samples": f.n_samples,
            "cauchy_x0": f.cauchy_x0,
            "cauchy_gamma": f.cauchy_gamma,
            "gauss_mu": f.gauss_mu,
            "gauss_sigma": f.gauss_sigma,
            "aic_cauchy": f.aic_cauchy,
            "aic_gauss": f.aic_gauss,
            "cauchy_preferred": f.cauchy_preferred(),
            "degenerate": false,
        }),
        Err(e) => json!({ "degenerate": true, "reason": e.to_string() }),
    };
    let report = json!({
        "n_devices": ens.n_devices(),
        "n_pulses": ens.n_pulses(),
        "psd": {
            "slope_low": psd.slope_low,
            "slope_high": psd.slope_high,
            "low_band": [psd.low_band.0, psd.low_band.1],
            "high_band": [psd.high_band.0, psd.high_band.1],
        },
        "delta_w": delta_w,
        "correlation": {
            "auto0": corr.auto[0],
            "cross0": corr.cross.as_ref().map(|c| c[0]),
            "auto_cross_ratio": corr.zero_lag_ratio(),
        },
    });
    let text = serde_json::to_string_pretty(&report).expect("serializable report");
    fs::write(args.out_dir.join("stats.json"), text + "\n").context("writing stats.json")?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: TrainerConfig,
    /// Modes to run one after another.
    pub modes: Vec<TrainingMode>,
    pub setup: DeviceSetup,
    pub mnist_dir: PathBuf,
    pub out_dir: PathBuf,
}

fn load_data(dir: &Path) -> Result<(trainer::LabeledDataset, trainer::LabeledDataset), CliError> {
    mnist::load_mnist_dir(dir).map_err(|e| match e {
        mnist::MnistError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            CliError::Config(format!("{e}\n{MNIST_HINT}"))
        }
        other => CliError::Runtime(other.into()),
    })
}

/// Train each requested mode and write `metrics_<mode>.csv` for each.
pub fn train(args: &TrainArgs, mut progress: impl FnMut(&EpochMetrics)) -> Result<Vec<Vec<EpochMetrics>>, CliError> {
    args.config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (train_set, test_set) = load_data(&args.mnist_dir)?;
    create_dir(&args.out_dir)?;
    let mut all = Vec::new();
    for &mode in &args.modes {
        let cfg = TrainerConfig {
            mode,
            ..args.config.clone()
        };
        let (metrics, _) = trainer::train(&cfg, &args.setup, &train_set, &test_set, &mut progress).map_err(|e| match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.into()),
        })?;
        let path = args.out_dir.join(format!("metrics_{mode}.csv"));
        let mut out = create_file(&path)?;
        trainer::write_metrics_csv(&metrics, &mut out).with_context(|| format!("writing {}", path.display()))?;
        out.flush().with_context(|| format!("writing {}", path.display()))?;
        all.push(metrics);
    }
    Ok(all)
}
