//! The acceptance battery behind `rram validate`.

use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;
use rram_sim::device::{
    pink_coefficients, rtn_advance, CycleNoiseParams, Device, DeviceParams, ModelOptions, NoiseModel, RtnLevel,
    TransitionMatrix,
};
use rram_sim::stats::{
    self, correlation, delta_w_fit, ensemble_psd, ks_test, ks_two_sample, periodogram, CorrelationMode, PsdOptions,
};
use rram_sim::trainer::{self, load_mnist_dir, quantize_update, DeviceSetup, TrainerConfig, TrainingMode};
use rram_sim::trajectory::{self, EnsembleSpec};
use rram_sim::variability::{median_device, sample_device, D2DConfig, ParamSource, FIELDS};
use rram_sim::{SeedPolicy, StreamPurpose, SynapsePair};

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: &'static str,
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {} {}: {}", self.id, self.description, self.detail)
    }
}

fn result(id: &'static str, description: &str, passed: bool, detail: String) -> CriterionResult {
    CriterionResult {
        id,
        description: description.to_string(),
        passed,
        detail,
    }
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Include the training ablation.
    pub full: bool,
    pub mnist_dir: PathBuf,
    /// Base trainer settings for the ablation; `mode` is overridden per run.
    pub trainer: TrainerConfig,
    /// Cases per invariant sweep.
    pub property_cases: usize,
}

impl ValidateOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            full: false,
            mnist_dir: PathBuf::from("data/mnist"),
            trainer: TrainerConfig::default(),
            property_cases: 1000,
        }
    }
}

pub const ENSEMBLE_DEVICES: usize = 64;
pub const ENSEMBLE_PULSES: usize = 10_000;
pub const ENSEMBLE_TIME_LIMIT: Duration = Duration::from_secs(30);
pub const SLOPE_LOW_RANGE: (f64, f64) = (-2.4, -1.6);
pub const SLOPE_HIGH_RANGE: (f64, f64) = (-1.4, -0.6);
pub const ZERO_LAG_RATIO_RANGE: (f64, f64) = (1.5, 3.0);
pub const SEMIGROUP_TOL: f64 = 1e-12;
pub const SEMIGROUP_MAX_N: u64 = 1_000_000;
pub const OCCUPANCY_PULSES: usize = 1_000_000;
pub const OCCUPANCY_TARGET: f64 = 0.2857;
pub const OCCUPANCY_TOL: f64 = 0.05;
pub const PINK_SAMPLES: usize = 1 << 18;
pub const PINK_MID_BAND: (f64, f64) = (1.0 / 64.0, 0.25);
pub const PINK_SLOPE_TOL: f64 = 0.3;
pub const PINK_VAR_REL_TOL: f64 = 0.05;
pub const KS_SAMPLES: usize = 10_000;
pub const KS_MIN_P: f64 = 0.01;
pub const MEDIAN_SAMPLES: usize = 10_000_000;
pub const MEDIAN_REL_TOL: f64 = 0.02;
pub const BASELINE_MIN_ACCURACY: f64 = 0.97;
pub const IDEAL_DEVICE_GAP: f64 = 0.005;
pub const FULL_DEVICE_MAX_DEFICIT: f64 = 0.05;
pub const ORDERING_SLACK: f64 = 0.005;
pub const ABLATION_TIME_LIMIT: Duration = Duration::from_secs(30 * 60);

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

fn default_ensemble(seed: u64) -> Result<Vec<trajectory::DeviceTrajectory>, rram_sim::device::DeviceError> {
    let spec = EnsembleSpec {
        n_devices: ENSEMBLE_DEVICES,
        n_pulses: ENSEMBLE_PULSES,
        source: ParamSource::Sampled(D2DConfig::default()),
        noise: NoiseModel::default(),
        disable_rtn: false,
    };
    trajectory::simulate(&spec, &SeedPolicy::new(seed))
}

/// Ensemble statistics of the default device population.
pub fn ensemble_criteria(seed: u64) -> Vec<CriterionResult> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let start = Instant::now();
    let traj = match pool.install(|| default_ensemble(seed)) {
        Ok(t) => t,
        Err(e) => return vec![result("1", "ensemble simulation", false, e.to_string())],
    };
    let elapsed = start.elapsed();
    let mut out = vec![result(
        "1.time",
        "64 x 10000 ensemble simulated single-threaded within 30 s",
        elapsed <= ENSEMBLE_TIME_LIMIT,
        if elapsed <= ENSEMBLE_TIME_LIMIT {
            "within limit".into()
        } else {
            format!("took {:.1} s", elapsed.as_secs_f64())
        },
    )];
    let ens = trajectory::to_ensemble(&traj);

    out.push(match ensemble_psd(&ens, &PsdOptions::default()) {
        Ok(r) => result(
            "1a",
            "mean PSD slopes, low band in [-2.4, -1.6] and high band in [-1.4, -0.6]",
            in_range(r.slope_low, SLOPE_LOW_RANGE) && in_range(r.slope_high, SLOPE_HIGH_RANGE),
            format!("slope_low={:.4} slope_high={:.4}", r.slope_low, r.slope_high),
        ),
        Err(e) => result("1a", "mean PSD slopes", false, e.to_string()),
    });
    out.push(match delta_w_fit(&ens) {
        Ok(f) => result(
            "1b",
            "pooled increments: AIC(Cauchy) < AIC(Gaussian) and |x0| < gamma/10",
            f.cauchy_preferred() && f.cauchy_x0.abs() < f.cauchy_gamma / 10.0,
            format!(
                "aic_cauchy={:.1} aic_gauss={:.1} x0={:.3e} gamma={:.3e}",
                f.aic_cauchy, f.aic_gauss, f.cauchy_x0, f.cauchy_gamma
            ),
        ),
        Err(e) => result("1b", "increment fit", false, e.to_string()),
    });
    out.push(match correlation(&ens, CorrelationMode::Cross) {
        Ok(c) => {
            let ratio = c.zero_lag_ratio().unwrap_or(f64::NAN);
            result(
                "1c",
                "auto(0)/cross(0) in [1.5, 3.0]",
                in_range(ratio, ZERO_LAG_RATIO_RANGE),
                format!("ratio={ratio:.4}"),
            )
        }
        Err(e) => result("1c", "correlation", false, e.to_string()),
    });
    out
}

/// Telegraph-process exactness.
pub fn rtn_criteria(seed: u64) -> Vec<CriterionResult> {
    let noise = CycleNoiseParams::default();
    let t = TransitionMatrix::from_noise(&noise);
    let mut rng = SeedPolicy::new(seed).stream(0, StreamPurpose::Validation);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n1 = rng.random_range(0..=SEMIGROUP_MAX_N);
        let n2 = rng.random_range(0..=SEMIGROUP_MAX_N - n1);
        worst = worst.max(t.pow(n1).mul(&t.pow(n2)).max_abs_diff(&t.pow(n1 + n2)));
    }
    let semigroup = result(
        "2a",
        "T^n1 T^n2 = T^(n1+n2) within 1e-12 for n up to 1e6",
        worst <= SEMIGROUP_TOL,
        format!("max_abs_diff={worst:.3e} over 1000 pairs"),
    );

    let mut rng = SeedPolicy::new(seed).stream(1, StreamPurpose::Validation);
    let mut x = RtnLevel::Low;
    let mut high = 0usize;
    for _ in 0..OCCUPANCY_PULSES {
        x = rtn_advance(x, 1, &t, &mut rng);
        high += x.index();
    }
    let occ = high as f64 / OCCUPANCY_PULSES as f64;
    let occupancy = result(
        "2b",
        "stationary high occupancy 0.2857 +/- 0.05 over 1e6 pulses",
        (occ - OCCUPANCY_TARGET).abs() <= OCCUPANCY_TOL,
        format!("occupancy={occ:.4} (analytic {:.4})", noise.rtn_stationary_high()),
    );
    vec![semigroup, occupancy]
}

/// Pink-noise synthesis: spectral slope and variance of the filtered output.
pub fn pink_criteria(seed: u64) -> Vec<CriterionResult> {
    let noise_params = CycleNoiseParams::default();
    let noise = NoiseModel::new(noise_params, ModelOptions::default()).expect("default noise");
    // Pink noise only: no drift, no telegraph contribution.
    let params = DeviceParams {
        mean: rram_sim::MeanModelParams {
            m1: 0.0,
            c1: 0.0,
            t_star: 1.0,
            m2: 0.0,
        },
        rtn_amplitude: 0.0,
        r0: 1.0,
    };
    let mut dev = Device::new(params, &noise, SeedPolicy::new(seed).stream(2, StreamPurpose::Validation));
    let series: Vec<f64> = (0..PINK_SAMPLES)
        .map(|_| {
            dev.apply_pulses(&noise, 1);
            dev.state().w_pink()
        })
        .collect();
    let slope = periodogram(&series).and_then(|s| stats::loglog_slope(&s, PINK_MID_BAND.0, PINK_MID_BAND.1));
    let slope_result = match slope {
        Ok(s) => result(
            "3a",
            "pink mid-band PSD slope -1.0 +/- 0.3",
            (s + 1.0).abs() <= PINK_SLOPE_TOL,
            format!("slope={s:.4} over f in [1/64, 1/4]"),
        ),
        Err(e) => result("3a", "pink PSD slope", false, e.to_string()),
    };
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected = noise_params.alpha.powi(2) * pink_coefficients(noise_params.pole).iter().map(|b| b * b).sum::<f64>();
    let rel = (var - expected).abs() / expected;
    let var_result = result(
        "3b",
        "Var(w_pink) = alpha^2 sum b_r^2 within 5%",
        rel <= PINK_VAR_REL_TOL,
        format!("var={var:.5e} expected={expected:.5e} rel_err={rel:.4}"),
    );
    vec![slope_result, var_result]
}

fn median_of(mut v: Vec<f64>) -> f64 {
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Parameter samplers against their densities and analytic medians.
pub fn sampler_criteria(seed: u64) -> Vec<CriterionResult> {
    let cfg = D2DConfig::default();
    let seeds = SeedPolicy::new(seed);
    let mut ks_detail = Vec::new();
    let mut ks_ok = true;
    let mut med_detail = Vec::new();
    let mut med_ok = true;
    for (k, name) in FIELDS.iter().enumerate() {
        let field = cfg.field(name).expect("known field");
        let mut rng = seeds.stream(10 + k as u64, StreamPurpose::Validation);
        let samples: Vec<f64> = (0..KS_SAMPLES).map(|_| field.sample(&mut rng)).collect();
        let ks = ks_test(&samples, |x| field.dist.cdf(x));
        ks_ok &= ks.p_value > KS_MIN_P;
        ks_detail.push(format!("{name}:p={:.3}", ks.p_value));

        let mut rng = seeds.stream(20 + k as u64, StreamPurpose::Validation);
        let mc = median_of((0..MEDIAN_SAMPLES).map(|_| field.sample(&mut rng)).collect());
        let analytic = field.dist.median();
        let rel = (mc - analytic).abs() / analytic.abs();
        med_ok &= rel <= MEDIAN_REL_TOL;
        med_detail.push(format!("{name}:{rel:.2e}"));
    }
    let md = median_device(&cfg);
    let consistent = md.rtn_amplitude == cfg.a.dist.median()
        && md.mean.m1 == cfg.m1.dist.median()
        && md.mean.c1 == cfg.c1.dist.median()
        && md.mean.t_star == cfg.t_star.dist.median()
        && md.mean.m2 == cfg.m2.dist.median()
        && md.r0 == cfg.r0.dist.median();
    vec![
        result(
            "4a",
            "KS test of 1e4 draws per field at p > 0.01",
            ks_ok,
            ks_detail.join(" "),
        ),
        result(
            "4b",
            "median_device matches Monte-Carlo medians (1e7 draws) within 2%",
            med_ok && consistent,
            format!("rel_err {}", med_detail.join(" ")),
        ),
    ]
}

/// Byte-identical trajectories under one and several worker threads.
pub fn determinism_criterion(seed: u64) -> CriterionResult {
    let spec = EnsembleSpec {
        n_devices: 16,
        n_pulses: 2000,
        source: ParamSource::Sampled(D2DConfig::default()),
        noise: NoiseModel::default(),
        disable_rtn: false,
    };
    let render = |threads: usize| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        let traj = pool.install(|| trajectory::simulate(&spec, &SeedPolicy::new(seed))).expect("simulate");
        let mut buf = Vec::new();
        trajectory::write_csv(&traj, &mut buf).expect("in-memory write");
        buf
    };
    let one = render(1);
    let same = [2, 4].iter().all(|&t| render(t) == one) && render(1) == one;
    result(
        "6",
        "seeded simulation is byte-identical across reruns and thread counts",
        same,
        format!("{} bytes compared for 1, 2 and 4 threads", one.len()),
    )
}

fn bl_ge_blb(pair: &SynapsePair) -> bool {
    pair.bl.w() - pair.blb.w() + (pair.bl.params.r0 / pair.blb.params.r0).ln() >= 0.0
}

/// Seeded invariant sweeps, each over `cases` random draws.
pub fn property_criteria(seed: u64, cases: usize) -> Vec<CriterionResult> {
    let cfg = D2DConfig::default();
    let seeds = SeedPolicy::new(seed);
    let mut rng = seeds.stream(30, StreamPurpose::Validation);
    let noiseless = NoiseModel::new(
        CycleNoiseParams {
            alpha: 0.0,
            ..Default::default()
        },
        ModelOptions::default(),
    )
    .expect("noise-free model");
    let noise = NoiseModel::default();
    let mut out = Vec::new();

    let mut cont_worst = 0.0f64;
    for i in 0..cases {
        let p = sample_device(&cfg, i as u64, &seeds).mean;
        let t = p.t_star.round().max(1.0) as u64;
        // The two branches agree at t*, so adjacent steps differ by at most one slope.
        let jump = (p.w_mean(t) - p.w_mean(t - 1)).abs();
        let bound = p.m1.abs().max(p.m2.abs()) * 1.000_001 + 1e-15;
        cont_worst = cont_worst.max(jump / bound);
    }
    out.push(result(
        "7.continuity",
        "mean drift continuous at t*",
        cont_worst <= 1.0,
        format!("{cases} devices, worst step/slope ratio {cont_worst:.6}"),
    ));

    let mut mono_ok = true;
    for i in 0..cases {
        let mut p = sample_device(&cfg, 2 * i as u64, &seeds);
        p.rtn_amplitude = 0.0;
        let mut q = sample_device(&cfg, 2 * i as u64 + 1, &seeds);
        q.rtn_amplitude = 0.0;
        let mut pair = SynapsePair::new(
            Device::new(p, &noiseless, seeds.stream(2 * i as u64, StreamPurpose::DeviceNoise)),
            Device::new(q, &noiseless, seeds.stream(2 * i as u64 + 1, StreamPurpose::DeviceNoise)),
        );
        let mut prev = pair.real_weight(&noiseless).expect("finite");
        let n = rng.random_range(1..=100);
        for _ in 0..n {
            pair.apply_update(1, &noiseless);
            let w = pair.real_weight(&noiseless).expect("finite");
            mono_ok &= w >= prev;
            prev = w;
        }
    }
    out.push(result(
        "7.monotonic",
        "noise-free +pulses never decrease the real weight",
        mono_ok,
        format!("{cases} pairs, 1..100 pulses each"),
    ));

    let params = median_device(&cfg);
    let (n1, n2) = (rng.random_range(1..=50u64), rng.random_range(1..=50u64));
    let split: Vec<f64> = (0..cases)
        .map(|i| {
            let mut d = Device::new(params, &noise, seeds.stream(1_000 + i as u64, StreamPurpose::DeviceNoise));
            d.apply_pulses(&noise, n1);
            d.apply_pulses(&noise, n2);
            d.w()
        })
        .collect();
    let joint: Vec<f64> = (0..cases)
        .map(|i| {
            let mut d = Device::new(params, &noise, seeds.stream(100_000 + i as u64, StreamPurpose::DeviceNoise));
            d.apply_pulses(&noise, n1 + n2);
            d.w()
        })
        .collect();
    let ks = ks_two_sample(&split, &joint);
    out.push(result(
        "7.additivity",
        "n1 then n2 pulses matches n1+n2 pulses in distribution (KS p > 0.01)",
        ks.p_value > KS_MIN_P,
        format!("n1={n1} n2={n2} D={:.4} p={:.3}", ks.statistic, ks.p_value),
    ));

    let mut anti_worst = 0.0f64;
    let mut sign_ok = true;
    for i in 0..cases {
        let p = sample_device(&cfg, 3 * i as u64, &seeds);
        let q = sample_device(&cfg, 3 * i as u64 + 1, &seeds);
        let mut pair = SynapsePair::new(
            Device::new(p, &noise, seeds.stream(3 * i as u64, StreamPurpose::DeviceNoise)),
            Device::new(q, &noise, seeds.stream(3 * i as u64 + 1, StreamPurpose::DeviceNoise)),
        );
        pair.apply_update(rng.random_range(-200..=200), &noise);
        let w = pair.real_weight(&noise).expect("finite");
        let ws = pair.swapped().real_weight(&noise).expect("finite");
        anti_worst = anti_worst.max((w + ws).abs());
        let b = pair.binary_weight(&noise).expect("finite");
        sign_ok &= (b == 1) == bl_ge_blb(&pair);
    }
    out.push(result(
        "7.antisymmetry",
        "swapping BL and BLb negates the real weight",
        anti_worst <= 1e-12 && sign_ok,
        format!("{cases} pairs, worst |w + w_swapped| {anti_worst:.2e}"),
    ));

    let mut quant_ok = true;
    for _ in 0..cases {
        let d: f64 = rng.random_range(-1.0..1.0);
        let g: f64 = rng.random_range(1.0..10_000.0);
        let n = quantize_update(d, g);
        quant_ok &= n == -quantize_update(-d, g);
        quant_ok &= (n.unsigned_abs() as f64) <= (d * g).abs() && (d * g).abs() < n.unsigned_abs() as f64 + 1.0;
    }
    out.push(result(
        "7.quantize",
        "quantize_update is an odd floor",
        quant_ok,
        format!("{cases} random updates"),
    ));

    let mut parseval_worst = 0.0f64;
    for _ in 0..cases {
        let n = 2 * rng.random_range(8..=256usize);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let s = periodogram(&x).expect("long enough");
        let k = s.psd.len();
        let power = (2.0 * s.psd[..k - 1].iter().sum::<f64>() + s.psd[k - 1]) / n as f64;
        parseval_worst = parseval_worst.max((power - var).abs() / var);
    }
    out.push(result(
        "7.parseval",
        "periodogram power equals sample variance",
        parseval_worst <= 1e-9,
        format!("{cases} series, worst relative error {parseval_worst:.2e}"),
    ));
    out
}

/// Accuracies and runtime of the training ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub baseline: f64,
    pub ideal_devices: f64,
    pub full_devices: f64,
    pub elapsed: Duration,
}

pub fn run_ablation(opts: &ValidateOptions) -> Result<AblationOutcome, trainer::TrainError> {
    let (train, test) = load_mnist_dir(&opts.mnist_dir)?;
    let start = Instant::now();
    let final_accuracy = |mode: TrainingMode| -> Result<f64, trainer::TrainError> {
        let cfg = TrainerConfig {
            mode,
            master_seed: opts.seed,
            ..opts.trainer.clone()
        };
        let (metrics, _) = trainer::train(&cfg, &DeviceSetup::default(), &train, &test, |m| {
            eprintln!(
                "  {} epoch {}: loss {:.4} accuracy {:.4} pulses {}",
                m.mode, m.epoch, m.train_loss, m.test_accuracy, m.total_pulses_applied
            )
        })?;
        Ok(metrics.last().map_or(0.0, |m| m.test_accuracy))
    };
    let baseline = final_accuracy(TrainingMode::FloatBaseline)?;
    let ideal_devices = final_accuracy(TrainingMode::DeviceNoNoiseNoD2d)?;
    let full_devices = final_accuracy(TrainingMode::DeviceFull)?;
    Ok(AblationOutcome {
        baseline,
        ideal_devices,
        full_devices,
        elapsed: start.elapsed(),
    })
}

pub fn ablation_criteria(outcome: &AblationOutcome) -> Vec<CriterionResult> {
    let AblationOutcome {
        baseline,
        ideal_devices,
        full_devices,
        elapsed,
    } = *outcome;
    vec![
        result(
            "5a",
            "float baseline test accuracy >= 97%",
            baseline >= BASELINE_MIN_ACCURACY,
            format!("accuracy={baseline:.4}"),
        ),
        result(
            "5b",
            "ideal devices within 0.5 points of the baseline",
            (baseline - ideal_devices).abs() <= IDEAL_DEVICE_GAP,
            format!("baseline={baseline:.4} ideal={ideal_devices:.4}"),
        ),
        result(
            "5c",
            "full device model deficit <= 5 points",
            baseline - full_devices <= FULL_DEVICE_MAX_DEFICIT,
            format!("baseline={baseline:.4} full={full_devices:.4}"),
        ),
        result(
            "5d",
            "ordering baseline >= ideal >= full with 0.5 point slack",
            baseline >= ideal_devices - ORDERING_SLACK && ideal_devices >= full_devices - ORDERING_SLACK,
            format!("{baseline:.4} / {ideal_devices:.4} / {full_devices:.4}"),
        ),
        result(
            "5.time",
            "three ablation runs within 30 min",
            elapsed <= ABLATION_TIME_LIMIT,
            if elapsed <= ABLATION_TIME_LIMIT {
                "within limit".into()
            } else {
                format!("took {:.0} s", elapsed.as_secs_f64())
            },
        ),
    ]
}

/// Run the battery, printing each line to `report` as soon as it is known.
pub fn run(opts: &ValidateOptions, mut report: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let mut all = Vec::new();
    let mut emit = |rs: Vec<CriterionResult>| {
        for r in rs {
            report(&r);
            all.push(r);
        }
    };
    emit(ensemble_criteria(opts.seed));
    emit(rtn_criteria(opts.seed));
    emit(pink_criteria(opts.seed));
    emit(sampler_criteria(opts.seed));
    if opts.full {
        match run_ablation(opts) {
            Ok(outcome) => emit(ablation_criteria(&outcome)),
            Err(e) => emit(vec![result("5", "training ablation", false, e.to_string())]),
        }
    }
    emit(vec![determinism_criterion(opts.seed)]);
    emit(property_criteria(opts.seed, opts.property_cases));
    all
}
