//! Ensembles of independent devices driven by one pulse at a time.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::device::{Device, DeviceError, NoiseModel};
use crate::rng::{SeedPolicy, StreamPurpose};
use crate::stats::Ensemble;
use crate::variability::ParamSource;

pub const TRAJECTORY_HEADER: &str = "device_id,pulse,t,w_mean,w_rtn,w_pink,w_total,resistance_ohm";

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// One reading taken after a pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub t: u64,
    pub w_mean: f64,
    pub w_rtn: f64,
    pub w_pink: f64,
    pub w_total: f64,
    pub resistance: f64,
}

#[derive(Debug, Clone)]
pub struct DeviceTrajectory {
    pub device_id: u64,
    pub readings: Vec<Reading>,
}

/// Settings for an ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub n_devices: usize,
    pub n_pulses: usize,
    pub source: ParamSource,
    pub noise: NoiseModel,
    /// Force every device's telegraph amplitude to zero.
    pub disable_rtn: bool,
}

/// Apply `n_pulses` single pulses to each device, reading after every pulse.
pub fn simulate(spec: &EnsembleSpec, seeds: &SeedPolicy) -> Result<Vec<DeviceTrajectory>, DeviceError> {
    (0..spec.n_devices as u64)
        .into_par_iter()
        .map(|id| simulate_device(spec, seeds, id))
        .collect()
}

fn simulate_device(spec: &EnsembleSpec, seeds: &SeedPolicy, id: u64) -> Result<DeviceTrajectory, DeviceError> {
    let noise = &spec.noise;
    let mut params = spec.source.params_for(id, seeds);
    if spec.disable_rtn {
        params.rtn_amplitude = 0.0;
    }
    let mut dev = Device::new(params, noise, seeds.stream(id, StreamPurpose::DeviceNoise));
    let mut readings = Vec::with_capacity(spec.n_pulses);
    for _ in 0..spec.n_pulses {
        dev.apply_pulses(noise, 1);
        readings.push(Reading {
            t: dev.state().t,
            w_mean: dev.w_mean(),
            w_rtn: dev.w_rtn(&noise.options),
            w_pink: dev.state().w_pink(),
            w_total: dev.w(),
            resistance: dev.resistance(&noise.options)?,
        });
    }
    Ok(DeviceTrajectory {
        device_id: id,
        readings,
    })
}

pub fn to_ensemble(trajectories: &[DeviceTrajectory]) -> Ensemble {
    let column = |f: fn(&Reading) -> f64| -> Vec<Vec<f64>> {
        trajectories.iter().map(|d| d.readings.iter().map(f).collect()).collect()
    };
    Ensemble::from_rows(&column(|r| r.w_total))
        .and_then(|e| e.with_mean(&column(|r| r.w_mean)))
        .expect("trajectories are rectangular")
}

pub fn write_csv<W: Write>(trajectories: &[DeviceTrajectory], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for d in trajectories {
        for (k, r) in d.readings.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                d.device_id,
                k + 1,
                r.t,
                r.w_mean,
                r.w_rtn,
                r.w_pink,
                r.w_total,
                r.resistance
            )?;
        }
    }
    Ok(())
}

/// Read the `w_total` and `w_mean` columns of a trajectory CSV into an ensemble.
///
/// Rows must be grouped by device and ordered by pulse.
pub fn read_csv<R: BufRead>(input: R) -> Result<Ensemble, TrajectoryError> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != TRAJECTORY_HEADER {
        return Err(TrajectoryError::Parse {
            line: 1,
            reason: format!("expected header `{TRAJECTORY_HEADER}`"),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut means: Vec<Vec<f64>> = Vec::new();
    let mut current: Option<u64> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(TrajectoryError::Parse {
                line: line_no,
                reason: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str| TrajectoryError::Parse {
            line: line_no,
            reason: format!("cannot parse {what}"),
        };
        let id: u64 = fields[0].parse().map_err(|_| parse_err("device_id"))?;
        let number = |k: usize, what: &str| -> Result<f64, TrajectoryError> {
            match fields[k].parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(what)),
            }
        };
        let w = number(6, "w_total")?;
        let mean = number(3, "w_mean")?;
        if current != Some(id) {
            current = Some(id);
            rows.push(Vec::new());
            means.push(Vec::new());
        }
        rows.last_mut().expect("row pushed").push(w);
        means.last_mut().expect("row pushed").push(mean);
    }
    Ensemble::from_rows(&rows).and_then(|e| e.with_mean(&means)).map_err(|e| TrajectoryError::Parse {
        line: 0,
        reason: e.to_string(),
    })
}
