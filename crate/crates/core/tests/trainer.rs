use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rram_sim::trainer::{
    self, binarize_inputs, bnn, load_mnist_dir, BnnLinearLayer, BnnModel, DeviceSetup, LabeledDataset, Trainer,
    TrainerConfig, TrainingMode, METRICS_HEADER,
};
use rram_sim::{SeedPolicy, StreamPurpose};

/// Two noisy prototype images per class on a 4x4 grid.
fn toy_dataset(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = SeedPolicy::new(seed).stream(0, StreamPurpose::Validation);
    let protos: Vec<Vec<u8>> = (0..3)
        .map(|c| (0..16).map(|j| if (j + c * 5) % 3 == 0 { 255 } else { 0 }).collect())
        .collect();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let c = rng.random_range(0..3usize);
        for &p in &protos[c] {
            images.push(if rng.random::<f64>() < 0.1 { 255 - p } else { p });
        }
        labels.push(c as u8);
    }
    LabeledDataset {
        rows: 4,
        cols: 4,
        images,
        labels,
    }
}

fn toy_config(mode: TrainingMode) -> TrainerConfig {
    TrainerConfig {
        layers: vec![16, 32, 3],
        epochs: 4,
        batch_size: 20,
        learning_rate: 0.01,
        pulse_gain: 1000.0,
        init_pulses: 3,
        mode,
        master_seed: 11,
        ..Default::default()
    }
}

#[test]
fn every_mode_learns_the_toy_task() {
    let train = toy_dataset(600, 1);
    let test = toy_dataset(300, 2);
    for mode in TrainingMode::ALL {
        let (metrics, _) = trainer::train(&toy_config(mode), &DeviceSetup::default(), &train, &test, |_| {}).unwrap();
        assert_eq!(metrics.len(), 4);
        let last = metrics.last().unwrap();
        assert!(last.test_accuracy > 0.9, "{mode}: {last:?}");
        assert_eq!(last.mode, mode);
        if mode.uses_devices() {
            assert!(last.total_pulses_applied > 0, "{mode}");
            assert!(metrics.windows(2).all(|w| w[1].total_pulses_applied >= w[0].total_pulses_applied));
        } else {
            assert_eq!(last.total_pulses_applied, 0);
        }
    }
}

#[test]
fn runs_are_reproducible() {
    let train = toy_dataset(200, 3);
    let test = toy_dataset(100, 4);
    for mode in [TrainingMode::FloatBaseline, TrainingMode::DeviceFull] {
        let mut cfg = toy_config(mode);
        cfg.epochs = 2;
        let (a, _) = trainer::train(&cfg, &DeviceSetup::default(), &train, &test, |_| {}).unwrap();
        let (b, _) = trainer::train(&cfg, &DeviceSetup::default(), &train, &test, |_| {}).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn device_binary_weights_are_array_readouts() {
    let train = toy_dataset(200, 5);
    let threshold = train.mean_pixel();
    let x = binarize_inputs(&train, threshold);
    let mut t = Trainer::new(toy_config(TrainingMode::DeviceFull), &DeviceSetup::default()).unwrap();
    for _ in 0..5 {
        t.run_epoch(&x, &train.labels).unwrap();
    }
    for layer in &t.model.layers {
        let array = layer.device_array().unwrap();
        for r in 0..layer.fan_out {
            for c in 0..layer.fan_in {
                let b = f32::from(array.binary_weight(r, c).unwrap());
                assert_eq!(layer.binary_weights()[[r, c]], b);
                assert_eq!(layer.real_weights()[[r, c]], array.real_weight(r, c).unwrap() as f32);
                assert_eq!(b, bnn::sign(layer.real_weights()[[r, c]]));
            }
        }
    }
}

#[test]
fn float_and_ideal_device_models_agree_when_signs_agree() {
    let cfg = TrainerConfig {
        layers: vec![16, 8, 3],
        init_pulses: 5,
        ..toy_config(TrainingMode::DeviceNoNoiseNoD2d)
    };
    let device = BnnModel::build(&cfg, &DeviceSetup::default()).unwrap();
    let mut float = BnnModel::build(
        &TrainerConfig {
            mode: TrainingMode::FloatBaseline,
            ..cfg.clone()
        },
        &DeviceSetup::default(),
    )
    .unwrap();
    for (f, d) in float.layers.iter_mut().zip(&device.layers) {
        let mut copy = BnnLinearLayer::float(d.real_weights().clone(), d.is_output);
        copy.bn = d.bn.clone();
        *f = copy;
    }
    let mut rng = SeedPolicy::new(3).stream(0, StreamPurpose::Validation);
    let x = Array2::from_shape_fn((50, 16), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
    assert_eq!(float.forward(&x).unwrap(), device.forward(&x).unwrap());
}

#[test]
fn forward_rejects_wrong_width() {
    let model = BnnModel::build(&toy_config(TrainingMode::FloatBaseline), &DeviceSetup::default()).unwrap();
    assert!(matches!(
        model.forward(&Array2::zeros((2, 15))),
        Err(trainer::TrainError::Shape { got: 15, expected: 16 })
    ));
}

#[test]
fn config_round_trip_and_validation() {
    let cfg = TrainerConfig::default();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(TrainerConfig::from_json_str(&text).unwrap(), cfg);
    let parsed = TrainerConfig::from_json_str(r#"{"mode": "device_no_d2d", "epochs": 3}"#).unwrap();
    assert_eq!(parsed.mode, TrainingMode::DeviceNoD2d);
    assert_eq!(parsed.epochs, 3);
    for bad in [
        r#"{"pulse_gain": 0}"#,
        r#"{"w_clip": -1}"#,
        r#"{"mode": "analog"}"#,
        r#"{"layers": [784]}"#,
        r#"{"epochz": 1}"#,
    ] {
        assert!(TrainerConfig::from_json_str(bad).is_err(), "{bad}");
    }
    for m in TrainingMode::ALL {
        assert_eq!(m.as_str().parse::<TrainingMode>().unwrap(), m);
    }
}

#[test]
fn metrics_csv_layout() {
    let train = toy_dataset(100, 6);
    let mut cfg = toy_config(TrainingMode::FloatBaseline);
    cfg.epochs = 2;
    let (metrics, _) = trainer::train(&cfg, &DeviceSetup::default(), &train, &train, |_| {}).unwrap();
    let mut buf = Vec::new();
    trainer::write_metrics_csv(&metrics, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,float_baseline,"));
}

#[test]
fn standard_mnist_files_have_canonical_counts() {
    let dir = std::env::var("MNIST_DIR").unwrap_or_else(|_| concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist").into());
    let dir = Path::new(&dir);
    if !dir.join("train-images-idx3-ubyte").exists() {
        eprintln!("MNIST files not present in {}, skipping", dir.display());
        return;
    }
    let (train, test) = load_mnist_dir(dir).unwrap();
    assert_eq!((train.len(), test.len()), (60_000, 10_000));
    assert_eq!((train.rows, train.cols), (28, 28));
}
