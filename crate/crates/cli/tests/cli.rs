use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rram_sim::trainer::METRICS_HEADER;
use rram_sim::trajectory::TRAJECTORY_HEADER;

fn rram(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rram"));
    cmd.args(args);
    for var in ["RRAM_SEED", "RRAM_OUT_DIR", "RRAM_CONFIG", "RRAM_MNIST_DIR", "RRAM_MODE", "RRAM_EPOCHS"] {
        cmd.env_remove(var);
    }
    if let Some(t) = threads {
        cmd.env("RAYON_NUM_THREADS", t.to_string());
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn mnist_dir() -> std::path::PathBuf {
    std::env::var("MNIST_DIR")
        .map(Into::into)
        .unwrap_or_else(|_| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn devices(dir: &Path, name: &str, extra: &[&str], threads: Option<usize>) -> String {
    let out = dir.join(name);
    let mut args = vec!["devices", "--seed", "7", "-n", "8", "-p", "500", "-o", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = rram(&args, threads);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::read_to_string(out).unwrap()
}

#[test]
fn devices_writes_one_row_per_pulse() {
    let dir = tempfile::tempdir().unwrap();
    let text = devices(dir.path(), "t.csv", &[], None);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8 * 500);
    assert!(rows[0].starts_with("0,1,1,"));
    assert!(rows.last().unwrap().starts_with("7,500,500,"));
}

#[test]
fn devices_output_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let one = devices(dir.path(), "a.csv", &[], Some(1));
    let four = devices(dir.path(), "b.csv", &[], Some(4));
    assert_eq!(one, four);
}

#[test]
fn without_noise_or_variation_all_devices_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let text = devices(dir.path(), "t.csv", &["--no-noise", "--no-d2d"], None);
    let per_device: Vec<Vec<String>> = (0..8)
        .map(|d| {
            text.lines()
                .skip(1)
                .filter(|l| l.split(',').next() == Some(&d.to_string()))
                .map(|l| l.splitn(2, ',').nth(1).unwrap().to_string())
                .collect()
        })
        .collect();
    assert_eq!(per_device[0].len(), 500);
    assert!(per_device.iter().all(|d| d == &per_device[0]));
    for line in &per_device[0] {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[3], "0");
        assert_eq!(f[4], "0");
    }
}

#[test]
fn stats_writes_report_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.csv");
    let o = rram(&["devices", "--seed", "3", "-n", "4", "-p", "2048", "-o", traj.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("stats");
    let o = rram(&["stats", traj.to_str().unwrap(), "--out-dir", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(report["n_devices"], 4);
    assert_eq!(report["n_pulses"], 2048);
    assert!(report["psd"]["slope_low"].is_f64());
    assert!(report["psd"]["slope_high"].is_f64());
    assert_eq!(report["delta_w"]["degenerate"], false);
    assert!(report["delta_w"]["cauchy_gamma"].as_f64().unwrap() > 0.0);
    assert!(report["correlation"]["auto_cross_ratio"].is_f64());
    let stdout: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stdout, report);
    for (file, header) in [
        ("psd.csv", "freq,psd"),
        ("delta_w_hist.csv", "delta_w,bin_count"),
        ("correlation.csv", "lag,auto,cross"),
    ] {
        let text = fs::read_to_string(out.join(file)).unwrap();
        assert_eq!(text.lines().next(), Some(header), "{file}");
        assert!(text.lines().count() > 2, "{file}");
    }
    let hist = fs::read_to_string(out.join("delta_w_hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 201);
}

#[test]
fn stats_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, format!("{TRAJECTORY_HEADER}\n0,1,1,0,0,0,0.1,7000\n0,2,2,0,0,0,oops,7000\n")).unwrap();
    let o = rram(&["stats", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"devices": 4, "nosie.alpha": 0.1}"#).unwrap();
    let o = rram(&["--config", cfg.to_str().unwrap(), "devices"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nosie.alpha"), "{}", stderr(&o));
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(rram(&["--config", cfg.to_str().unwrap(), "devices"], None).status.code(), Some(2));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 5, "devices": 3, "pulses": 40, "noise.alpha": 0.01}"#).unwrap();
    let out = dir.path().join("t.csv");
    let o = rram(&["--config", cfg.to_str().unwrap(), "devices", "-p", "10", "-o", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 1 + 3 * 10);
}

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(rram(&["devices", "--pulses", "many"], None).status.code(), Some(2));
    assert_eq!(rram(&["frobnicate"], None).status.code(), Some(2));
    let o = rram(&["validate", "--fast"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn missing_dataset_prints_download_hint() {
    let dir = tempfile::tempdir().unwrap();
    let o = rram(
        &["train", "--epochs", "1", "--mnist-dir", dir.path().join("none").to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("npm pack mnist-data"), "{}", stderr(&o));
}

#[test]
fn unknown_training_mode_is_a_config_error() {
    assert_eq!(rram(&["train", "--mode", "analog"], None).status.code(), Some(2));
}

#[test]
fn train_smoke_run() {
    let data = mnist_dir();
    if !data.join("train-images-idx3-ubyte").exists() {
        eprintln!("MNIST files not present in {}, skipping", data.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = rram(
        &[
            "train",
            "--seed",
            "7",
            "--mode",
            "device_full",
            "--epochs",
            "1",
            "--limit",
            "1000",
            "--mnist-dir",
            data.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(60));
    let text = fs::read_to_string(dir.path().join("metrics_device_full.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 2);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[0], "1");
    assert_eq!(fields[1], "device_full");
    let acc: f64 = fields[3].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(fields[4].parse::<u64>().unwrap() > 0);
}

#[test]
fn fast_validation_is_reproducible_across_thread_counts() {
    let one = rram(&["validate", "--fast", "--seed", "7"], Some(1));
    let four = rram(&["validate", "--fast", "--seed", "7"], Some(4));
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(one.status.code(), four.status.code());
    let text = String::from_utf8(one.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("[PASS] 2a ")));
    assert!(text.lines().last().unwrap().ends_with("criteria passed"));
}
