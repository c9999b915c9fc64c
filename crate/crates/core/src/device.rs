//! Weak-RESET dynamics of a single HfOx RRAM cell.
//!
//! The cell is described by a dimensionless tunneling gap `w` built from three
//! superposed components:
//!
//! * a piecewise-linear mean drift in the number of applied pulses,
//! * random telegraph noise (a two-state Markov chain scaled by an amplitude),
//! * pink noise obtained by FIR-filtering a rolling buffer of white Gaussian draws.
//!
//! The resistance follows `R = R0 * exp(w)`.
//!
//! Pulses are applied in batches: the telegraph state is resampled from the
//! `n`-th power of the transition matrix and only `min(n, pole + 1)` fresh
//! Gaussian values are drawn, so a batch of `n` pulses costs `O(log n + pole)`
//! regardless of `n`.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::DeviceRng;

/// Gaps above this value are treated as a diverged model.
pub const DEFAULT_W_CAP: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("gap out of physical range: w = {w} exceeds cap {cap}")]
    GapOutOfRange { w: f64, cap: f64 },
    #[error("gap is not finite: {0}")]
    NonFiniteGap(f64),
    #[error("invalid noise parameter `{name}`: {reason}")]
    InvalidNoise { name: &'static str, reason: String },
}

/// Piecewise-linear mean-drift parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanModelParams {
    /// Slope per pulse before the threshold.
    pub m1: f64,
    /// Intercept.
    pub c1: f64,
    /// Pulse-count threshold between the two regimes.
    pub t_star: f64,
    /// Slope per pulse after the threshold.
    pub m2: f64,
}

impl MeanModelParams {
    pub fn w_mean(&self, t: u64) -> f64 {
        w_mean(self, t)
    }
}

/// Mean gap after `t` pulses.
///
/// Both branches agree at `t == t_star`, so the drift is continuous.
pub fn w_mean(p: &MeanModelParams, t: u64) -> f64 {
    let t = t as f64;
    if t < p.t_star {
        p.m1 * t + p.c1
    } else {
        p.m2 * t + (p.m1 - p.m2) * p.t_star + p.c1
    }
}

/// Ensemble-wide cycle-to-cycle noise constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleNoiseParams {
    /// Per-pulse probability of the 0 -> 1 telegraph transition.
    pub p_high: f64,
    /// Per-pulse probability of the 1 -> 0 telegraph transition.
    pub p_low: f64,
    /// Pink-noise scale.
    pub alpha: f64,
    /// Pink-filter order; the filter has `pole + 1` taps.
    pub pole: usize,
}

impl Default for CycleNoiseParams {
    fn default() -> Self {
        Self {
            p_high: 0.0008,
            p_low: 0.002,
            alpha: 0.025,
            pole: 15,
        }
    }
}

impl CycleNoiseParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let prob = |name: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(DeviceError::InvalidNoise {
                    name,
                    reason: format!("{v} is not a probability"),
                })
            }
        };
        prob("p_high", self.p_high)?;
        prob("p_low", self.p_low)?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DeviceError::InvalidNoise {
                name: "alpha",
                reason: format!("{} must be finite and >= 0", self.alpha),
            });
        }
        if self.pole == 0 {
            return Err(DeviceError::InvalidNoise {
                name: "pole",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Stationary probability of the high telegraph level.
    pub fn rtn_stationary_high(&self) -> f64 {
        let total = self.p_high + self.p_low;
        if total == 0.0 {
            0.0
        } else {
            self.p_high / total
        }
    }
}

/// Per-device parameters drawn from the device-to-device distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub mean: MeanModelParams,
    /// Telegraph jump amplitude on the gap scale.
    pub rtn_amplitude: f64,
    /// Zero-gap (LRS) resistance in ohms.
    pub r0: f64,
}

/// Model switches shared by every device of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Zero the telegraph contribution while `t < t_star`.
    pub rtn_second_regime_only: bool,
    pub w_cap: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            rtn_second_regime_only: false,
            w_cap: DEFAULT_W_CAP,
        }
    }
}

/// Resistance in ohms for gap `w`.
pub fn resistance(params: &DeviceParams, w: f64) -> Result<f64, DeviceError> {
    resistance_capped(params, w, DEFAULT_W_CAP)
}

pub fn resistance_capped(params: &DeviceParams, w: f64, cap: f64) -> Result<f64, DeviceError> {
    if !w.is_finite() {
        return Err(DeviceError::NonFiniteGap(w));
    }
    if w > cap {
        return Err(DeviceError::GapOutOfRange { w, cap });
    }
    Ok(params.r0 * w.exp())
}

/// Telegraph level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RtnLevel {
    Low,
    High,
}

impl RtnLevel {
    pub fn as_f64(self) -> f64 {
        match self {
            RtnLevel::Low => 0.0,
            RtnLevel::High => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            RtnLevel::Low => 0,
            RtnLevel::High => 1,
        }
    }
}

/// Telegraph contribution `a * x`.
pub fn w_rtn(x: RtnLevel, a: f64) -> f64 {
    a * x.as_f64()
}

/// Row-stochastic 2x2 transition matrix of the telegraph chain.
///
/// `m[i][j]` is the probability of moving from level `i` to level `j` in one pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    pub m: [[f64; 2]; 2],
}

impl TransitionMatrix {
    pub const IDENTITY: Self = Self {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub fn new(p_high: f64, p_low: f64) -> Self {
        Self {
            m: [[1.0 - p_high, p_high], [p_low, 1.0 - p_low]],
        }
    }

    pub fn from_noise(noise: &CycleNoiseParams) -> Self {
        Self::new(noise.p_high, noise.p_low)
    }

    /// Product of two row-stochastic matrices.
    ///
    /// Diagonals are recovered as `1 - off_diagonal` so rows keep summing to one;
    /// otherwise rounding in the unit eigenvalue compounds over long powers.
    pub fn mul(&self, other: &Self) -> Self {
        let a = &self.m;
        let b = &other.m;
        let up = a[0][0] * b[0][1] + a[0][1] * b[1][1];
        let down = a[1][0] * b[0][0] + a[1][1] * b[1][0];
        Self {
            m: [[1.0 - up, up], [down, 1.0 - down]],
        }
    }

    /// `self^n` by binary exponentiation.
    pub fn pow(&self, mut n: u64) -> Self {
        let mut result = Self::IDENTITY;
        let mut base = *self;
        while n > 0 {
            if n & 1 == 1 {
                result = result.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        d
    }
}

/// Telegraph level after `n` pulses, sampled directly from row `x` of `T^n`.
///
/// Consumes exactly one uniform draw when `n > 0` and none otherwise.
pub fn rtn_advance<R: Rng + ?Sized>(
    x: RtnLevel,
    n: u64,
    transition: &TransitionMatrix,
    rng: &mut R,
) -> RtnLevel {
    if n == 0 {
        return x;
    }
    let p_to_high = transition.pow(n).m[x.index()][1];
    let u: f64 = rng.random();
    if u < p_to_high {
        RtnLevel::High
    } else {
        RtnLevel::Low
    }
}

/// FIR coefficients of the discrete 1/f filter: `b_0 = 1`, `b_k = b_{k-1} (k - 1/2) / k`.
pub fn pink_coefficients(pole: usize) -> Vec<f64> {
    const BETA: f64 = 1.0;
    let mut b = Vec::with_capacity(pole + 1);
    b.push(1.0);
    for k in 1..=pole {
        let prev = b[k - 1];
        b.push(prev * ((k as f64 - 1.0) + BETA / 2.0) / k as f64);
    }
    b
}

/// Rolling window of white Gaussian values feeding the pink filter, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PinkBuffer {
    values: VecDeque<f64>,
}

impl PinkBuffer {
    /// A buffer of `pole + 1` fresh standard-normal draws.
    pub fn fresh<R: Rng + ?Sized>(pole: usize, rng: &mut R) -> Self {
        let values = (0..=pole).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { values }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            values: values.into(),
        }
    }

    pub fn zeros(pole: usize) -> Self {
        Self {
            values: std::iter::repeat_n(0.0, pole + 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values ordered newest first.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.values.iter()
    }

    pub fn filtered(&self, coeffs: &[f64], alpha: f64) -> f64 {
        if alpha == 0.0 {
            return 0.0;
        }
        alpha
            * self
                .values
                .iter()
                .zip(coeffs)
                .map(|(w, b)| w * b)
                .sum::<f64>()
    }
}

/// Shift `n` pulses worth of fresh white noise into `buffer` and return the filtered value.
///
/// Draws `min(n, pole + 1)` Gaussian values; older draws beyond the window are discarded.
pub fn pink_advance<R: Rng + ?Sized>(
    buffer: &mut PinkBuffer,
    n: u64,
    coeffs: &[f64],
    alpha: f64,
    rng: &mut R,
) -> f64 {
    let len = buffer.values.len();
    let fresh = usize::try_from(n).unwrap_or(usize::MAX).min(len);
    for _ in 0..fresh {
        buffer.values.pop_back();
        buffer.values.push_front(rng.sample::<f64, _>(StandardNormal));
    }
    buffer.filtered(coeffs, alpha)
}

/// Noise constants together with the quantities derived from them once per ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub params: CycleNoiseParams,
    pub options: ModelOptions,
    coeffs: Vec<f64>,
    transition: TransitionMatrix,
}

impl NoiseModel {
    pub fn new(params: CycleNoiseParams, options: ModelOptions) -> Result<Self, DeviceError> {
        params.validate()?;
        Ok(Self {
            coeffs: pink_coefficients(params.pole),
            transition: TransitionMatrix::from_noise(&params),
            params,
            options,
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::new(CycleNoiseParams::default(), ModelOptions::default())
            .expect("default noise parameters are valid")
    }
}

/// Mutable state of one cell.
#[derive(Debug, Clone)]
pub struct DeviceState {
    /// Pulses applied so far.
    pub t: u64,
    pub x: RtnLevel,
    pub pink: PinkBuffer,
    w_pink: f64,
    rng: DeviceRng,
}

impl DeviceState {
    /// Fresh cell: no pulses, telegraph low, pink window filled from `rng`.
    pub fn new(noise: &NoiseModel, mut rng: DeviceRng) -> Self {
        let pink = PinkBuffer::fresh(noise.params.pole, &mut rng);
        let w_pink = pink.filtered(noise.coeffs(), noise.params.alpha);
        Self {
            t: 0,
            x: RtnLevel::Low,
            pink,
            w_pink,
            rng,
        }
    }

    pub fn w_pink(&self) -> f64 {
        self.w_pink
    }

    pub fn rng(&self) -> &DeviceRng {
        &self.rng
    }
}

/// Telegraph contribution honoring the second-regime gating option.
pub fn gated_w_rtn(state: &DeviceState, params: &DeviceParams, options: &ModelOptions) -> f64 {
    if options.rtn_second_regime_only && (state.t as f64) < params.mean.t_star {
        0.0
    } else {
        w_rtn(state.x, params.rtn_amplitude)
    }
}

/// `w_mean + w_rtn + w_pink` for the current state.
pub fn compose_w(state: &DeviceState, params: &DeviceParams, noise: &NoiseModel) -> f64 {
    w_mean(&params.mean, state.t) + gated_w_rtn(state, params, &noise.options) + state.w_pink
}

/// Advance `state` by `n` weak-RESET pulses. `n == 0` is a no-op that draws nothing.
pub fn apply_pulses(state: &mut DeviceState, noise: &NoiseModel, n: u64) {
    if n == 0 {
        return;
    }
    state.t += n;
    state.x = rtn_advance(state.x, n, noise.transition(), &mut state.rng);
    state.w_pink = pink_advance(
        &mut state.pink,
        n,
        noise.coeffs(),
        noise.params.alpha,
        &mut state.rng,
    );
}

/// One cell: its sampled parameters, its state, and a cached gap.
#[derive(Debug, Clone)]
pub struct Device {
    pub params: DeviceParams,
    state: DeviceState,
    w: f64,
}

impl Device {
    pub fn new(params: DeviceParams, noise: &NoiseModel, rng: DeviceRng) -> Self {
        let state = DeviceState::new(noise, rng);
        let w = compose_w(&state, &params, noise);
        Self { params, state, w }
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    /// Replace the parameters, keeping the state, and refresh the cached gap.
    pub fn set_params(&mut self, params: DeviceParams, noise: &NoiseModel) {
        self.params = params;
        self.w = compose_w(&self.state, &self.params, noise);
    }

    /// Cached total gap.
    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn w_mean(&self) -> f64 {
        w_mean(&self.params.mean, self.state.t)
    }

    pub fn w_rtn(&self, options: &ModelOptions) -> f64 {
        gated_w_rtn(&self.state, &self.params, options)
    }

    pub fn apply_pulses(&mut self, noise: &NoiseModel, n: u64) {
        if n == 0 {
            return;
        }
        apply_pulses(&mut self.state, noise, n);
        self.w = compose_w(&self.state, &self.params, noise);
    }

    pub fn resistance(&self, options: &ModelOptions) -> Result<f64, DeviceError> {
        resistance_capped(&self.params, self.w, options.w_cap)
    }
}
