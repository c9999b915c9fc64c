//! 2T2R differential synapses and crossbar arrays of them.
//!
//! A synapse stores one real weight as `log10(R_BL / R_BLb)`. Only RESET pulses
//! are ever issued: a positive update pulses the BL device, a negative one the
//! BLb device. The binary weight is the sense-amplifier comparison of the two
//! resistances.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::device::{Device, DeviceError, NoiseModel};
use crate::rng::{SeedPolicy, StreamPurpose};
use crate::variability::ParamSource;

#[derive(Debug, Error)]
pub enum ArrayError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("duplicate pulse command for cell ({row}, {col})")]
    DuplicateCommand { row: usize, col: usize },
    #[error("cell ({row}, {col}) outside {rows}x{cols} array")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("pulse grid has {got} entries, array has {expected} cells")]
    GridShape { got: usize, expected: usize },
    #[error("array must have at least one row and one column")]
    EmptyShape,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bl,
    Blb,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bl => "BL",
            Side::Blb => "BLb",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynapsePair {
    pub bl: Device,
    pub blb: Device,
}

impl SynapsePair {
    pub fn new(bl: Device, blb: Device) -> Self {
        Self { bl, blb }
    }

    pub fn device(&self, side: Side) -> &Device {
        match side {
            Side::Bl => &self.bl,
            Side::Blb => &self.blb,
        }
    }

    /// `log10(R_BL) - log10(R_BLb)`.
    pub fn real_weight(&self, noise: &NoiseModel) -> Result<f64, DeviceError> {
        let r_bl = self.bl.resistance(&noise.options)?;
        let r_blb = self.blb.resistance(&noise.options)?;
        Ok(r_bl.log10() - r_blb.log10())
    }

    /// Sense-amplifier readout; an exact tie reads as +1.
    pub fn binary_weight(&self, noise: &NoiseModel) -> Result<i8, DeviceError> {
        let r_bl = self.bl.resistance(&noise.options)?;
        let r_blb = self.blb.resistance(&noise.options)?;
        Ok(if r_bl >= r_blb { 1 } else { -1 })
    }

    /// Route `signed_pulses` RESET pulses to BL (positive) or BLb (negative).
    pub fn apply_update(&mut self, signed_pulses: i64, noise: &NoiseModel) {
        let n = signed_pulses.unsigned_abs();
        match signed_pulses.signum() {
            1 => self.bl.apply_pulses(noise, n),
            -1 => self.blb.apply_pulses(noise, n),
            _ => {}
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            bl: self.blb.clone(),
            blb: self.bl.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseCommand {
    pub row: usize,
    pub col: usize,
    /// Sign selects the device, magnitude is the pulse count.
    pub signed_pulses: i64,
}

/// A `rows x cols` grid of synapses sharing one noise model.
#[derive(Debug, Clone)]
pub struct SynapseArray {
    rows: usize,
    cols: usize,
    pairs: Vec<SynapsePair>,
    noise: NoiseModel,
}

impl SynapseArray {
    /// Build an array whose devices are numbered from `device_offset`.
    ///
    /// Cell `(r, c)` owns devices `offset + 2 (r cols + c)` (BL) and that plus one (BLb);
    /// each device draws parameters and noise from its own stream.
    pub fn new(
        rows: usize,
        cols: usize,
        source: &ParamSource,
        noise: NoiseModel,
        seeds: &SeedPolicy,
        device_offset: u64,
    ) -> Result<Self, ArrayError> {
        if rows == 0 || cols == 0 {
            return Err(ArrayError::EmptyShape);
        }
        let make = |index: u64| {
            let params = source.params_for(index, seeds);
            Device::new(params, &noise, seeds.stream(index, StreamPurpose::DeviceNoise))
        };
        let pairs = (0..rows * cols)
            .into_par_iter()
            .map(|cell| {
                let base = device_offset + 2 * cell as u64;
                SynapsePair::new(make(base), make(base + 1))
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            pairs,
            noise,
        })
    }

    /// Same as [`SynapseArray::new`] but with every device's telegraph amplitude forced to zero.
    pub fn without_rtn(mut self) -> Self {
        let noise = self.noise.clone();
        for pair in &mut self.pairs {
            for dev in [&mut pair.bl, &mut pair.blb] {
                let mut params = dev.params;
                params.rtn_amplitude = 0.0;
                dev.set_params(params, &noise);
            }
        }
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn pair(&self, row: usize, col: usize) -> &SynapsePair {
        &self.pairs[row * self.cols + col]
    }

    pub fn pairs(&self) -> &[SynapsePair] {
        &self.pairs
    }

    pub fn real_weight(&self, row: usize, col: usize) -> Result<f64, DeviceError> {
        self.pair(row, col).real_weight(&self.noise)
    }

    pub fn binary_weight(&self, row: usize, col: usize) -> Result<i8, DeviceError> {
        self.pair(row, col).binary_weight(&self.noise)
    }

    /// Row-major real weights.
    pub fn real_weights(&self) -> Result<Vec<f64>, DeviceError> {
        self.pairs.par_iter().map(|p| p.real_weight(&self.noise)).collect()
    }

    /// Row-major binary weights.
    pub fn binary_weights(&self) -> Result<Vec<i8>, DeviceError> {
        self.pairs.par_iter().map(|p| p.binary_weight(&self.noise)).collect()
    }

    pub fn apply_update(&mut self, row: usize, col: usize, signed_pulses: i64) -> Result<(), ArrayError> {
        self.check_bounds(row, col)?;
        let cols = self.cols;
        self.pairs[row * cols + col].apply_update(signed_pulses, &self.noise);
        Ok(())
    }

    fn check_bounds(&self, row: usize, col: usize) -> Result<(), ArrayError> {
        if row >= self.rows || col >= self.cols {
            return Err(ArrayError::OutOfBounds {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    /// Apply a set of commands with at most one command per cell.
    ///
    /// Cells are independent, so the result does not depend on command order.
    pub fn batch_update(&mut self, commands: &[PulseCommand]) -> Result<(), ArrayError> {
        let mut grid = vec![0i64; self.rows * self.cols];
        let mut seen = vec![false; self.rows * self.cols];
        for c in commands {
            self.check_bounds(c.row, c.col)?;
            let idx = c.row * self.cols + c.col;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(ArrayError::DuplicateCommand { row: c.row, col: c.col });
            }
            grid[idx] = c.signed_pulses;
        }
        self.apply_pulse_grid(&grid)
    }

    /// Apply a dense row-major grid of signed pulse counts (zero means untouched).
    pub fn apply_pulse_grid(&mut self, grid: &[i64]) -> Result<(), ArrayError> {
        if grid.len() != self.pairs.len() {
            return Err(ArrayError::GridShape {
                got: grid.len(),
                expected: self.pairs.len(),
            });
        }
        let noise = &self.noise;
        self.pairs
            .par_iter_mut()
            .zip(grid.par_iter())
            .for_each(|(pair, &n)| pair.apply_update(n, noise));
        Ok(())
    }

    /// Snapshot CSV with one line per device.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<(), ArrayError> {
        writeln!(out, "row,col,side,t,x,w_total,resistance_ohm,real_weight,binary_weight")?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let pair = self.pair(r, c);
                let real = pair.real_weight(&self.noise)?;
                let bin = pair.binary_weight(&self.noise)?;
                for side in [Side::Bl, Side::Blb] {
                    let d = pair.device(side);
                    writeln!(
                        out,
                        "{r},{c},{},{},{},{},{},{real},{bin}",
                        side.as_str(),
                        d.state().t,
                        d.state().x.index(),
                        d.w(),
                        d.resistance(&self.noise.options)?,
                    )?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{CycleNoiseParams, DeviceParams, MeanModelParams, ModelOptions};
    use crate::variability::D2DConfig;

    fn quiet() -> NoiseModel {
        NoiseModel::new(
            CycleNoiseParams {
                alpha: 0.0,
                ..Default::default()
            },
            ModelOptions::default(),
        )
        .unwrap()
    }

    fn fixed(r0: f64, c1: f64) -> DeviceParams {
        DeviceParams {
            mean: MeanModelParams {
                m1: 1e-3,
                c1,
                t_star: 500.0,
                m2: 1e-4,
            },
            rtn_amplitude: 0.0,
            r0,
        }
    }

    fn pair(r_bl: f64, r_blb: f64) -> SynapsePair {
        let noise = quiet();
        let seeds = SeedPolicy::new(1);
        SynapsePair::new(
            Device::new(fixed(r_bl, 0.0), &noise, seeds.stream(0, StreamPurpose::DeviceNoise)),
            Device::new(fixed(r_blb, 0.0), &noise, seeds.stream(1, StreamPurpose::DeviceNoise)),
        )
    }

    #[test]
    fn weight_examples() {
        let noise = quiet();
        assert_eq!(pair(7000.0, 7000.0).real_weight(&noise).unwrap(), 0.0);
        assert!((pair(70000.0, 7000.0).real_weight(&noise).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pair(2.0, 1.0).binary_weight(&noise).unwrap(), 1);
        assert_eq!(pair(1.0, 2.0).binary_weight(&noise).unwrap(), -1);
        assert_eq!(pair(5.0, 5.0).binary_weight(&noise).unwrap(), 1);
    }

    #[test]
    fn routing() {
        let noise = quiet();
        let mut p = pair(7000.0, 7000.0);
        let blb_before = p.blb.clone();
        p.apply_update(3, &noise);
        assert_eq!(p.bl.state().t, 3);
        assert_eq!(p.blb.state().t, 0);
        assert_eq!(p.blb.state().rng(), blb_before.state().rng());
        let bl_before = p.bl.clone();
        p.apply_update(-2, &noise);
        assert_eq!(p.blb.state().t, 2);
        assert_eq!(p.bl.state().t, 3);
        assert_eq!(p.bl.state().rng(), bl_before.state().rng());
        p.apply_update(0, &noise);
        assert_eq!((p.bl.state().t, p.blb.state().t), (3, 2));
    }

    #[test]
    fn batch_update_rejects_duplicates_and_bounds() {
        let cfg = D2DConfig::default();
        let mut arr = SynapseArray::new(2, 3, &ParamSource::Sampled(cfg), NoiseModel::default(), &SeedPolicy::new(4), 0)
            .unwrap();
        let dup = [
            PulseCommand { row: 1, col: 1, signed_pulses: 2 },
            PulseCommand { row: 1, col: 1, signed_pulses: -2 },
        ];
        assert!(matches!(arr.batch_update(&dup), Err(ArrayError::DuplicateCommand { row: 1, col: 1 })));
        let oob = [PulseCommand { row: 2, col: 0, signed_pulses: 1 }];
        assert!(matches!(arr.batch_update(&oob), Err(ArrayError::OutOfBounds { .. })));
        assert!(matches!(arr.apply_pulse_grid(&[0; 5]), Err(ArrayError::GridShape { .. })));
    }

    #[test]
    fn empty_batch_leaves_array_unchanged() {
        let mut arr = SynapseArray::new(
            3,
            3,
            &ParamSource::Sampled(D2DConfig::default()),
            NoiseModel::default(),
            &SeedPolicy::new(9),
            0,
        )
        .unwrap();
        let before = arr.real_weights().unwrap();
        arr.batch_update(&[]).unwrap();
        assert_eq!(arr.real_weights().unwrap(), before);
    }

    #[test]
    fn snapshot_has_two_lines_per_cell() {
        let arr = SynapseArray::new(
            2,
            2,
            &ParamSource::Sampled(D2DConfig::default()),
            NoiseModel::default(),
            &SeedPolicy::new(9),
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        arr.write_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(text.starts_with("row,col,side,t,x,w_total,resistance_ohm,real_weight,binary_weight\n"));
    }
}
