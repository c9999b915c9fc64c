//! Binarized network training with weights held in simulated 2T2R arrays.

pub mod bnn;
pub mod mnist;
pub mod optim;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{ArrayError, SynapseArray};
use crate::device::{CycleNoiseParams, DeviceError, ModelOptions, NoiseModel};
use crate::rng::{SeedPolicy, StreamPurpose};
use crate::variability::{median_device, D2DConfig, ParamSource};

pub use bnn::{binarize_activation, pack_signs, popcount_xnor, BnnLinearLayer};
pub use mnist::{load_mnist, load_mnist_dir, LabeledDataset, MnistError};
pub use optim::{quantize_update, MomentState};

pub const METRICS_HEADER: &str = "epoch,mode,train_loss,test_accuracy,total_pulses_applied";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Array(#[from] ArrayError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Data(#[from] MnistError),
    #[error("input has {got} features, network expects {expected}")]
    Shape { got: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    FloatBaseline,
    DeviceFull,
    DeviceNoNoise,
    DeviceNoD2d,
    DeviceNoNoiseNoD2d,
}

impl TrainingMode {
    pub const ALL: [TrainingMode; 5] = [
        TrainingMode::FloatBaseline,
        TrainingMode::DeviceFull,
        TrainingMode::DeviceNoNoise,
        TrainingMode::DeviceNoD2d,
        TrainingMode::DeviceNoNoiseNoD2d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::FloatBaseline => "float_baseline",
            TrainingMode::DeviceFull => "device_full",
            TrainingMode::DeviceNoNoise => "device_no_noise",
            TrainingMode::DeviceNoD2d => "device_no_d2d",
            TrainingMode::DeviceNoNoiseNoD2d => "device_no_noise_no_d2d",
        }
    }

    pub fn uses_devices(self) -> bool {
        self != TrainingMode::FloatBaseline
    }

    pub fn noise_enabled(self) -> bool {
        matches!(self, TrainingMode::DeviceFull | TrainingMode::DeviceNoD2d)
    }

    pub fn d2d_enabled(self) -> bool {
        matches!(self, TrainingMode::DeviceFull | TrainingMode::DeviceNoNoise)
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown mode `{s}`")))
    }
}

/// Training hyperparameters. Weight-valued quantities are on the log10 resistance-ratio scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Layer widths from input to output.
    pub layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f32,
    /// Learning rate for normalization shifts and scales.
    pub bn_learning_rate: f32,
    /// Pulses per unit of real-weight update.
    pub pulse_gain: f64,
    /// Straight-through clip bound on real weights.
    pub w_clip: f32,
    pub mode: TrainingMode,
    pub master_seed: u64,
    /// Initial programming draws `Uniform{-k..=k}` pulses per synapse in device modes.
    pub init_pulses: u32,
    /// Float-mode weights start uniform on `[-float_init, float_init]`.
    pub float_init: f32,
    /// Straight-through window on normalized hidden activations.
    pub act_window: f32,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            layers: vec![784, 512, 10],
            epochs: 10,
            batch_size: 100,
            learning_rate: 2e-3,
            lr_decay: 0.75,
            bn_learning_rate: 1e-2,
            pulse_gain: 3000.0,
            w_clip: 1.0,
            mode: TrainingMode::FloatBaseline,
            master_seed: 7,
            init_pulses: 3,
            float_init: 0.01,
            act_window: 0.75,
            train_limit: None,
            test_limit: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return bad("layers needs at least two nonzero widths");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.pulse_gain.is_finite() && self.pulse_gain > 0.0) {
            return bad("pulse_gain must be positive");
        }
        if !(self.w_clip.is_finite() && self.w_clip > 0.0) {
            return bad("w_clip must be positive");
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("bn_learning_rate", self.bn_learning_rate),
            ("lr_decay", self.lr_decay),
            ("float_init", self.float_init),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and nonnegative"));
            }
        }
        if !(self.act_window.is_finite() && self.act_window > 0.0) {
            return bad("act_window must be positive");
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Device-side settings used to build arrays in device modes.
#[derive(Debug, Clone, Default)]
pub struct DeviceSetup {
    pub d2d: D2DConfig,
    pub noise: CycleNoiseParams,
    pub options: ModelOptions,
}

/// Pixels above `threshold` map to +1, the rest to -1.
pub fn binarize_inputs(data: &LabeledDataset, threshold: f64) -> Array2<f32> {
    let p = data.pixels_per_image();
    Array2::from_shape_fn((data.len(), p), |(i, j)| {
        if f64::from(data.images[i * p + j]) > threshold {
            1.0
        } else {
            -1.0
        }
    })
}

#[derive(Debug, Clone)]
pub struct BnnModel {
    pub mode: TrainingMode,
    pub layers: Vec<BnnLinearLayer>,
}

impl BnnModel {
    /// Build a model for `config.mode`, including initial programming in device modes.
    pub fn build(config: &TrainerConfig, setup: &DeviceSetup) -> Result<Self, TrainError> {
        config.validate()?;
        let seeds = SeedPolicy::new(config.master_seed);
        let n = config.layers.len() - 1;
        let mut layers = Vec::with_capacity(n);
        let mut device_offset = 0u64;
        for l in 0..n {
            let (fan_in, fan_out) = (config.layers[l], config.layers[l + 1]);
            let is_output = l + 1 == n;
            let mut rng = seeds.stream(l as u64, StreamPurpose::WeightInit);
            let layer = if config.mode.uses_devices() {
                let array = build_array(config.mode, setup, fan_out, fan_in, &seeds, device_offset)?;
                device_offset += 2 * (fan_in * fan_out) as u64;
                let mut layer = BnnLinearLayer::device(array, is_output)?;
                if config.init_pulses > 0 {
                    let k = i64::from(config.init_pulses);
                    let grid: Vec<i64> = (0..fan_in * fan_out).map(|_| rng.random_range(-k..=k)).collect();
                    layer.apply_pulses(&grid)?;
                }
                layer
            } else {
                let b = config.float_init;
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 });
                BnnLinearLayer::float(w, is_output)
            };
            layers.push(layer);
        }
        Ok(Self {
            mode: config.mode,
            layers,
        })
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].fan_in
    }

    /// Inference-mode class scores for a ±1 input batch.
    pub fn forward(&self, input: &Array2<f32>) -> Result<Array2<f32>, TrainError> {
        if input.ncols() != self.input_len() {
            return Err(TrainError::Shape {
                got: input.ncols(),
                expected: self.input_len(),
            });
        }
        let mut x = input.clone();
        for layer in &self.layers {
            x = bnn::layer_forward_infer(layer, &x);
        }
        Ok(x)
    }

    pub fn predict(&self, input: &Array2<f32>) -> Result<Vec<u8>, TrainError> {
        let scores = self.forward(input)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect())
    }

    /// Fraction of correctly classified items, evaluated in chunks.
    pub fn accuracy(&self, inputs: &Array2<f32>, labels: &[u8]) -> Result<f64, TrainError> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for (chunk, lab) in inputs.axis_chunks_iter(Axis(0), 1000).zip(labels.chunks(1000)) {
            let pred = self.predict(&chunk.to_owned())?;
            correct += pred.iter().zip(lab).filter(|(p, l)| p == l).count();
        }
        Ok(correct as f64 / labels.len() as f64)
    }
}

fn build_array(
    mode: TrainingMode,
    setup: &DeviceSetup,
    rows: usize,
    cols: usize,
    seeds: &SeedPolicy,
    offset: u64,
) -> Result<SynapseArray, TrainError> {
    let source = if mode.d2d_enabled() {
        ParamSource::Sampled(setup.d2d.clone())
    } else {
        ParamSource::Fixed(median_device(&setup.d2d))
    };
    let mut noise = setup.noise;
    if !mode.noise_enabled() {
        noise.alpha = 0.0;
    }
    let model = NoiseModel::new(noise, setup.options)?;
    let array = SynapseArray::new(rows, cols, &source, model, seeds, offset)?;
    Ok(if mode.noise_enabled() { array } else { array.without_rtn() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mode: TrainingMode,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Cumulative training pulses, excluding initial programming.
    pub total_pulses_applied: u64,
}

pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{}",
            m.epoch, m.mode, m.train_loss, m.test_accuracy, m.total_pulses_applied
        )?;
    }
    Ok(())
}

struct LayerOptim {
    weights: MomentState,
    gamma: MomentState,
    beta: MomentState,
}

/// Stateful trainer over one model.
pub struct Trainer {
    pub config: TrainerConfig,
    pub model: BnnModel,
    optim: Vec<LayerOptim>,
    total_pulses: u64,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainerConfig, setup: &DeviceSetup) -> Result<Self, TrainError> {
        let model = BnnModel::build(&config, setup)?;
        let optim = model
            .layers
            .iter()
            .map(|l| LayerOptim {
                weights: MomentState::new(l.fan_in * l.fan_out, 0.9, 0.999, 1e-8),
                gamma: MomentState::new(l.fan_out, 0.9, 0.999, 1e-8),
                beta: MomentState::new(l.fan_out, 0.9, 0.999, 1e-8),
            })
            .collect();
        Ok(Self {
            config,
            model,
            optim,
            total_pulses: 0,
            epoch: 0,
        })
    }

    pub fn total_pulses(&self) -> u64 {
        self.total_pulses
    }

    /// One optimization step on a ±1 input batch; returns the mean loss.
    pub fn step(&mut self, input: ArrayView2<f32>, labels: &[u8], lr: f32) -> Result<f32, TrainError> {
        let mut caches = Vec::with_capacity(self.model.layers.len());
        let mut x = input.to_owned();
        for layer in &self.model.layers {
            let (out, cache) = bnn::layer_forward_train(layer, layer.binary_weights().view(), x);
            caches.push(cache);
            x = out;
        }
        let (loss, mut grad) = bnn::softmax_cross_entropy(&x, labels);

        let bn_lr = self.config.bn_learning_rate * lr / self.config.learning_rate.max(f32::MIN_POSITIVE);
        for l in (0..self.model.layers.len()).rev() {
            let layer = &self.model.layers[l];
            let (mut grads, d_in) = bnn::layer_backward(
                layer,
                layer.binary_weights().view(),
                &caches[l],
                grad,
                self.config.act_window,
            );
            grad = d_in;

            let clip = self.config.w_clip;
            bnn::ste_clip(&mut grads.weights, layer.real_weights(), clip);

            let opt = &mut self.optim[l];
            let mut delta = vec![0.0f32; layer.fan_in * layer.fan_out];
            opt.weights
                .update(grads.weights.as_slice().expect("contiguous"), lr, &mut delta);

            let layer = &mut self.model.layers[l];
            let cache = &caches[l];
            layer.bn.update_running(&cache.batch_mean, &cache.batch_var);
            let mut d_beta = vec![0.0f32; layer.fan_out];
            opt.beta.update(grads.beta.as_slice().expect("contiguous"), bn_lr, &mut d_beta);
            layer.bn.beta += &Array1::from(d_beta);
            if layer.bn.learn_gamma {
                let mut d_gamma = vec![0.0f32; layer.fan_out];
                opt.gamma.update(grads.gamma.as_slice().expect("contiguous"), bn_lr, &mut d_gamma);
                layer.bn.gamma += &Array1::from(d_gamma);
            }
            self.total_pulses += layer.apply_delta(&delta, self.config.pulse_gain, clip)?;
        }
        Ok(loss)
    }

    /// Run one epoch over `inputs`; returns the mean training loss.
    pub fn run_epoch(&mut self, inputs: &Array2<f32>, labels: &[u8]) -> Result<f64, TrainError> {
        let seeds = SeedPolicy::new(self.config.master_seed);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut seeds.stream(self.epoch as u64, StreamPurpose::Shuffle));
        let lr = self.config.learning_rate * self.config.lr_decay.powi(self.epoch as i32);
        let bs = self.config.batch_size;
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(bs) {
            // A single-item batch has no variance to normalize with.
            if idx.len() < 2 {
                continue;
            }
            let batch = inputs.select(Axis(0), idx);
            let lab: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            loss_sum += f64::from(self.step(batch.view(), &lab, lr)?);
            batches += 1;
        }
        self.epoch += 1;
        Ok(if batches == 0 { 0.0 } else { loss_sum / batches as f64 })
    }
}

/// Train for `config.epochs` epochs, reporting each epoch's metrics to `on_epoch`.
pub fn train(
    config: &TrainerConfig,
    setup: &DeviceSetup,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Vec<EpochMetrics>, BnnModel), TrainError> {
    let train_set = train_set.clone().truncated(config.train_limit);
    let test_set = test_set.clone().truncated(config.test_limit);
    let threshold = train_set.mean_pixel();
    let x_train = binarize_inputs(&train_set, threshold);
    let x_test = binarize_inputs(&test_set, threshold);
    let mut trainer = Trainer::new(config.clone(), setup)?;
    if x_train.ncols() != trainer.model.input_len() {
        return Err(TrainError::Shape {
            got: x_train.ncols(),
            expected: trainer.model.input_len(),
        });
    }
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let train_loss = trainer.run_epoch(&x_train, &train_set.labels)?;
        let m = EpochMetrics {
            epoch,
            mode: config.mode,
            train_loss,
            test_accuracy: trainer.model.accuracy(&x_test, &test_set.labels)?,
            total_pulses_applied: trainer.total_pulses(),
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok((metrics, trainer.model))
}
