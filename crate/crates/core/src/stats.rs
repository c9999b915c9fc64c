//! Statistics over device ensembles: power spectra, pulse-to-pulse increments,
//! auto/cross-correlation, and Kolmogorov-Smirnov goodness-of-fit helpers.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series too short: need at least {min} samples, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("ensemble rows differ in length ({expected} vs {got})")]
    Ragged { expected: usize, got: usize },
    #[error("ensemble contains a non-finite value")]
    NonFinite,
    #[error("all pooled increments are equal ({0}); no spread to fit")]
    Degenerate(f64),
    #[error("cross-correlation needs at least two devices, got {0}")]
    InsufficientDevices(usize),
    #[error("detrending requires the mean-drift component")]
    MissingMean,
    #[error("band [{lo}, {hi}] contains fewer than two usable frequency bins")]
    EmptyBand { lo: f64, hi: f64 },
}

/// A rectangular `n_devices x n_pulses` matrix of gap readings.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    n_devices: usize,
    n_pulses: usize,
    w: Vec<f64>,
    mean: Option<Vec<f64>>,
}

impl Ensemble {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, StatsError> {
        let n_pulses = rows.first().map(Vec::len).ok_or(StatsError::EmptyEnsemble)?;
        let mut w = Vec::with_capacity(rows.len() * n_pulses);
        for r in rows {
            if r.len() != n_pulses {
                return Err(StatsError::Ragged {
                    expected: n_pulses,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite);
            }
            w.extend_from_slice(r);
        }
        Ok(Self {
            n_devices: rows.len(),
            n_pulses,
            w,
            mean: None,
        })
    }

    /// Attach the per-device mean-drift component (same shape) for detrending.
    pub fn with_mean(mut self, mean_rows: &[Vec<f64>]) -> Result<Self, StatsError> {
        let m = Self::from_rows(mean_rows)?;
        if m.n_devices != self.n_devices || m.n_pulses != self.n_pulses {
            return Err(StatsError::Ragged {
                expected: self.n_pulses,
                got: m.n_pulses,
            });
        }
        self.mean = Some(m.w);
        Ok(self)
    }

    pub fn n_devices(&self) -> usize {
        self.n_devices
    }

    pub fn n_pulses(&self) -> usize {
        self.n_pulses
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n_pulses..(i + 1) * self.n_pulses]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.w.chunks(self.n_pulses)
    }

    fn detrended_row(&self, i: usize) -> Result<Vec<f64>, StatsError> {
        let mean = self.mean.as_ref().ok_or(StatsError::MissingMean)?;
        let m = &mean[i * self.n_pulses..(i + 1) * self.n_pulses];
        Ok(self.row(i).iter().zip(m).map(|(w, m)| w - m).collect())
    }
}

/// One-sided spectrum at frequencies in cycles per pulse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub psd: Vec<f64>,
}

pub const MIN_PERIODOGRAM_LEN: usize = 16;

fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(len)
}

/// Plain periodogram `|X_k|^2 / N` for `k = 1..=N/2` at `f = k / N`; DC excluded.
pub fn periodogram(series: &[f64]) -> Result<Spectrum, StatsError> {
    let n = series.len();
    if n < MIN_PERIODOGRAM_LEN {
        return Err(StatsError::TooShort {
            min: MIN_PERIODOGRAM_LEN,
            got: n,
        });
    }
    let fft = forward_fft(n);
    Ok(periodogram_with(series, fft.as_ref()))
}

fn periodogram_with(series: &[f64], fft: &dyn Fft<f64>) -> Spectrum {
    let n = series.len();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    let half = n / 2;
    let frequencies = (1..=half).map(|k| k as f64 / n as f64).collect();
    let psd = buf[1..=half].iter().map(|c| c.norm_sqr() / n as f64).collect();
    Spectrum { frequencies, psd }
}

/// Welch estimate with a Hann window and 50 % overlap, scaled like [`periodogram`].
pub fn welch(series: &[f64], segment_len: usize) -> Result<Spectrum, StatsError> {
    if segment_len < MIN_PERIODOGRAM_LEN || series.len() < segment_len {
        return Err(StatsError::TooShort {
            min: segment_len.max(MIN_PERIODOGRAM_LEN),
            got: series.len(),
        });
    }
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / segment_len as f64).cos())
        .collect();
    let norm = window.iter().map(|w| w * w).sum::<f64>() / segment_len as f64;
    let step = segment_len / 2;
    let fft = forward_fft(segment_len);
    let mut acc = vec![0.0; segment_len / 2];
    let mut count = 0usize;
    let mut start = 0;
    while start + segment_len <= series.len() {
        let seg = &series[start..start + segment_len];
        let mu = seg.iter().sum::<f64>() / segment_len as f64;
        let windowed: Vec<f64> = seg.iter().zip(&window).map(|(x, w)| (x - mu) * w).collect();
        let spec = periodogram_with(&windowed, fft.as_ref());
        for (a, p) in acc.iter_mut().zip(spec.psd) {
            *a += p / norm;
        }
        count += 1;
        start += step;
    }
    let frequencies = (1..=segment_len / 2).map(|k| k as f64 / segment_len as f64).collect();
    Ok(Spectrum {
        frequencies,
        psd: acc.into_iter().map(|a| a / count as f64).collect(),
    })
}

/// Least-squares slope of `log10(psd)` against `log10(f)` over `lo <= f <= hi`.
pub fn loglog_slope(spec: &Spectrum, lo: f64, hi: f64) -> Result<f64, StatsError> {
    let pts: Vec<(f64, f64)> = spec
        .frequencies
        .iter()
        .zip(&spec.psd)
        .filter(|(f, p)| **f >= lo && **f <= hi && **p > 0.0)
        .map(|(f, p)| (f.log10(), p.log10()))
        .collect();
    if pts.len() < 2 {
        return Err(StatsError::EmptyBand { lo, hi });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::EmptyBand { lo, hi });
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PsdOptions {
    /// Subtract the mean-drift component before transforming.
    pub detrend: bool,
    /// Welch segment length; `None` for the plain periodogram.
    pub welch_segment: Option<usize>,
    /// Overrides for the slope bands, in cycles per pulse.
    pub low_band: Option<(f64, f64)>,
    pub high_band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdReport {
    pub frequencies: Vec<f64>,
    pub psd: Vec<f64>,
    pub low_band: (f64, f64),
    pub high_band: (f64, f64),
    pub slope_low: f64,
    pub slope_high: f64,
}

/// Mean of per-device spectra with log-log slopes over a low and a high band.
///
/// Default bands: the lowest decade above DC (`[f_min, 10 f_min]`) and the decade ending at Nyquist.
pub fn ensemble_psd(ensemble: &Ensemble, opts: &PsdOptions) -> Result<PsdReport, StatsError> {
    if ensemble.n_devices == 0 {
        return Err(StatsError::EmptyEnsemble);
    }
    let spectra: Vec<Spectrum> = (0..ensemble.n_devices)
        .into_par_iter()
        .map(|i| {
            let row = if opts.detrend {
                ensemble.detrended_row(i)?
            } else {
                ensemble.row(i).to_vec()
            };
            match opts.welch_segment {
                Some(seg) => welch(&row, seg),
                None => periodogram(&row),
            }
        })
        .collect::<Result<_, _>>()?;
    let frequencies = spectra[0].frequencies.clone();
    let mut psd = vec![0.0; frequencies.len()];
    for s in &spectra {
        for (a, p) in psd.iter_mut().zip(&s.psd) {
            *a += p;
        }
    }
    let n = spectra.len() as f64;
    psd.iter_mut().for_each(|p| *p /= n);
    let f_min = frequencies[0];
    let low_band = opts.low_band.unwrap_or((f_min, 10.0 * f_min));
    let high_band = opts.high_band.unwrap_or((0.05, 0.5));
    let spec = Spectrum { frequencies, psd };
    let slope_low = loglog_slope(&spec, low_band.0, low_band.1)?;
    let slope_high = loglog_slope(&spec, high_band.0, high_band.1)?;
    Ok(PsdReport {
        frequencies: spec.frequencies,
        psd: spec.psd,
        low_band,
        high_band,
        slope_low,
        slope_high,
    })
}

/// Cauchy and Gaussian fits of the pooled pulse-to-pulse increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaWFit {
    pub n_samples: usize,
    pub cauchy_x0: f64,
    pub cauchy_gamma: f64,
    pub gauss_mu: f64,
    pub gauss_sigma: f64,
    pub aic_cauchy: f64,
    pub aic_gauss: f64,
}

impl DeltaWFit {
    pub fn cauchy_preferred(&self) -> bool {
        self.aic_cauchy < self.aic_gauss
    }
}

/// `w(t+1) - w(t)` pooled over devices and pulses.
pub fn pooled_increments(ensemble: &Ensemble) -> Vec<f64> {
    ensemble
        .rows()
        .flat_map(|r| r.windows(2).map(|w| w[1] - w[0]))
        .collect()
}

pub fn delta_w_fit(ensemble: &Ensemble) -> Result<DeltaWFit, StatsError> {
    if ensemble.n_pulses < 2 {
        return Err(StatsError::TooShort {
            min: 2,
            got: ensemble.n_pulses,
        });
    }
    fit_increments(&pooled_increments(ensemble))
}

pub fn fit_increments(samples: &[f64]) -> Result<DeltaWFit, StatsError> {
    let (cauchy_x0, cauchy_gamma) = fit_cauchy(samples)?;
    let (gauss_mu, gauss_sigma) = fit_gaussian(samples)?;
    let n = samples.len() as f64;
    let ll_c = cauchy_log_likelihood(samples, cauchy_x0, cauchy_gamma);
    let ll_g = -0.5 * n * (2.0 * std::f64::consts::PI * gauss_sigma * gauss_sigma).ln() - 0.5 * n;
    Ok(DeltaWFit {
        n_samples: samples.len(),
        cauchy_x0,
        cauchy_gamma,
        gauss_mu,
        gauss_sigma,
        aic_cauchy: 2.0 * 2.0 - 2.0 * ll_c,
        aic_gauss: 2.0 * 2.0 - 2.0 * ll_g,
    })
}

fn check_spread(samples: &[f64]) -> Result<(), StatsError> {
    let first = *samples.first().ok_or(StatsError::TooShort { min: 2, got: 0 })?;
    if samples.iter().all(|&x| x == first) {
        return Err(StatsError::Degenerate(first));
    }
    Ok(())
}

/// Moment (= maximum-likelihood) Gaussian fit.
pub fn fit_gaussian(samples: &[f64]) -> Result<(f64, f64), StatsError> {
    check_spread(samples)?;
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

pub fn cauchy_log_likelihood(samples: &[f64], x0: f64, gamma: f64) -> f64 {
    let n = samples.len() as f64;
    -n * (std::f64::consts::PI * gamma).ln()
        - samples
            .iter()
            .map(|x| ((x - x0) / gamma).powi(2).ln_1p())
            .sum::<f64>()
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Maximum-likelihood Cauchy location and scale.
///
/// Expectation-maximization for the Student-t family with one degree of freedom,
/// started from the median and half the interquartile range.
pub fn fit_cauchy(samples: &[f64]) -> Result<(f64, f64), StatsError> {
    check_spread(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut x0 = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let mut gamma2 = if iqr > 0.0 {
        (0.5 * iqr).powi(2)
    } else {
        let (_, sigma) = fit_gaussian(samples)?;
        sigma * sigma
    };
    let n = samples.len() as f64;
    for _ in 0..5000 {
        let (mut su, mut sux) = (0.0, 0.0);
        for &x in samples {
            let d = x - x0;
            let u = 2.0 / (1.0 + d * d / gamma2);
            su += u;
            sux += u * x;
        }
        let new_x0 = sux / su;
        let mut sud2 = 0.0;
        for &x in samples {
            let d = x - x0;
            let u = 2.0 / (1.0 + d * d / gamma2);
            let dn = x - new_x0;
            sud2 += u * dn * dn;
        }
        let new_gamma2 = sud2 / n;
        let scale = new_gamma2.sqrt();
        let done = (new_x0 - x0).abs() <= 1e-12 * scale && (new_gamma2 / gamma2 - 1.0).abs() <= 1e-12;
        x0 = new_x0;
        gamma2 = new_gamma2;
        if done {
            break;
        }
    }
    Ok((x0, gamma2.sqrt()))
}

/// Equal-width histogram over `[lo, hi]`; returns bin centers and counts.
pub fn histogram(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<(f64, u64)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        if x < lo || x > hi {
            continue;
        }
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, c))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMode {
    Auto,
    Cross,
}

/// Raw (unnormalized) lagged product sums.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub lags: Vec<usize>,
    /// Mean over devices of `sum_t w_i(t) w_i(t + lag)`.
    pub auto: Vec<f64>,
    /// Mean over ordered pairs `i != j` of `sum_t w_i(t) w_j(t + lag)`.
    pub cross: Option<Vec<f64>>,
}

impl CorrelationReport {
    pub fn zero_lag_ratio(&self) -> Option<f64> {
        self.cross.as_ref().map(|c| self.auto[0] / c[0])
    }
}

/// `sum_t x(t) x(t + lag)` for every lag, via zero-padded FFT.
fn lagged_self_products(x: &[f64], fwd: &dyn Fft<f64>, inv: &dyn Fft<f64>) -> Vec<f64> {
    let m = fwd.len();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    fwd.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    buf[..x.len()].iter().map(|c| c.re / m as f64).collect()
}

/// Lagged product sums over the ensemble.
///
/// The pairwise cross sum uses `sum_{i != j} c_ij = acf(sum_i w_i) - sum_i acf(w_i)`,
/// so the cost is linear in the number of devices.
pub fn correlation(ensemble: &Ensemble, mode: CorrelationMode) -> Result<CorrelationReport, StatsError> {
    let n_dev = ensemble.n_devices;
    if n_dev == 0 {
        return Err(StatsError::EmptyEnsemble);
    }
    if mode == CorrelationMode::Cross && n_dev < 2 {
        return Err(StatsError::InsufficientDevices(n_dev));
    }
    let n = ensemble.n_pulses;
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let per_device: Vec<Vec<f64>> = ensemble
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|r| lagged_self_products(r, fwd.as_ref(), inv.as_ref()))
        .collect();
    let mut auto_sum = vec![0.0; n];
    for r in &per_device {
        for (a, v) in auto_sum.iter_mut().zip(r) {
            *a += v;
        }
    }
    let auto: Vec<f64> = auto_sum.iter().map(|a| a / n_dev as f64).collect();
    let cross = match mode {
        CorrelationMode::Auto => None,
        CorrelationMode::Cross => {
            let mut total = vec![0.0; n];
            for r in ensemble.rows() {
                for (t, v) in total.iter_mut().zip(r) {
                    *t += v;
                }
            }
            let all = lagged_self_products(&total, fwd.as_ref(), inv.as_ref());
            let pairs = (n_dev * (n_dev - 1)) as f64;
            Some(all.iter().zip(&auto_sum).map(|(a, s)| (a - s) / pairs).collect())
        }
    };
    Ok(CorrelationReport {
        lags: (0..n).collect(),
        auto,
        cross,
    })
}

/// Kolmogorov-Smirnov statistic and asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sqrt_n = n_eff.sqrt();
    kolmogorov_q((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
}

/// One-sample test of `samples` against a continuous `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// Two-sample test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_series_has_no_ac_power() {
        let s = periodogram(&[3.5; 64]).unwrap();
        assert_eq!(s.frequencies.len(), 32);
        assert!(s.psd.iter().all(|p| p.abs() < 1e-20));
        assert_eq!(s.frequencies[31], 0.5);
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(periodogram(&[1.0; 8]), Err(StatsError::TooShort { .. })));
    }

    #[test]
    fn parseval_convention() {
        let mut rng = seeded(4);
        let x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 3.0 + 1.0).collect();
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        let s = periodogram(&x).unwrap();
        let half = s.psd.len();
        let total = 2.0 * s.psd[..half - 1].iter().sum::<f64>() + s.psd[half - 1];
        assert!((total / n / var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn white_noise_is_flat() {
        let mut rng = seeded(5);
        let x: Vec<f64> = (0..1 << 16).map(|_| rng.sample(StandardNormal)).collect();
        let s = periodogram(&x).unwrap();
        let slope = loglog_slope(&s, 1e-3, 0.5).unwrap();
        assert!(slope.abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn identical_rows_match_single_periodogram() {
        let mut rng = seeded(6);
        let row: Vec<f64> = (0..256).map(|_| rng.random()).collect();
        let ens = Ensemble::from_rows(&[row.clone(), row.clone(), row.clone()]).unwrap();
        let rep = ensemble_psd(&ens, &PsdOptions::default()).unwrap();
        let single = periodogram(&row).unwrap();
        for (a, b) in rep.psd.iter().zip(&single.psd) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn cauchy_fit_recovers_standard_cauchy() {
        let mut rng = seeded(7);
        let x: Vec<f64> = (0..1_000_000)
            .map(|_| (std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan())
            .collect();
        let (x0, gamma) = fit_cauchy(&x).unwrap();
        assert!(x0.abs() < 0.01, "x0 {x0}");
        assert!((gamma - 1.0).abs() < 0.02, "gamma {gamma}");
    }

    #[test]
    fn negated_samples_negate_location() {
        let mut rng = seeded(8);
        let x: Vec<f64> = (0..20_000)
            .map(|_| 0.3 + 2.0 * (std::f64::consts::PI * (rng.random::<f64>() - 0.5)).tan())
            .collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (a0, ag) = fit_cauchy(&x).unwrap();
        let (b0, bg) = fit_cauchy(&neg).unwrap();
        assert!((a0 + b0).abs() < 1e-8);
        assert!((ag - bg).abs() < 1e-8);
    }

    #[test]
    fn degenerate_increments_rejected() {
        // Exactly representable slope so every increment is bit-identical.
        let ramp: Vec<f64> = (0..100).map(|t| 0.25 * t as f64).collect();
        let ens = Ensemble::from_rows(&[ramp.clone(), ramp]).unwrap();
        assert!(matches!(delta_w_fit(&ens), Err(StatsError::Degenerate(_))));
    }

    #[test]
    fn duplicated_device_cross_equals_auto() {
        let mut rng = seeded(9);
        let row: Vec<f64> = (0..300).map(|_| rng.random::<f64>() - 0.2).collect();
        let ens = Ensemble::from_rows(&[row.clone(), row]).unwrap();
        let rep = correlation(&ens, CorrelationMode::Cross).unwrap();
        let cross = rep.cross.unwrap();
        for (a, c) in rep.auto.iter().zip(&cross) {
            assert!((a - c).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn correlation_matches_direct_sums() {
        let mut rng = seeded(10);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..50).map(|_| rng.random::<f64>()).collect())
            .collect();
        let ens = Ensemble::from_rows(&rows).unwrap();
        let rep = correlation(&ens, CorrelationMode::Cross).unwrap();
        let cross = rep.cross.as_ref().unwrap();
        for lag in [0usize, 1, 7, 49] {
            let mut auto = 0.0;
            let mut cr = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let s: f64 = (0..50 - lag).map(|t| rows[i][t] * rows[j][t + lag]).sum();
                    if i == j {
                        auto += s;
                    } else {
                        cr += s;
                    }
                }
            }
            assert!((rep.auto[lag] - auto / 4.0).abs() < 1e-9);
            assert!((cross[lag] - cr / 12.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_row_contributes_nothing() {
        let ens = Ensemble::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0; 3]]).unwrap();
        let rep = correlation(&ens, CorrelationMode::Cross).unwrap();
        assert!(rep.cross.unwrap().iter().all(|c| c.abs() < 1e-12));
        assert!((rep.auto[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn cross_needs_two_devices() {
        let ens = Ensemble::from_rows(&[vec![1.0; 20]]).unwrap();
        assert!(matches!(
            correlation(&ens, CorrelationMode::Cross),
            Err(StatsError::InsufficientDevices(1))
        ));
        assert!(correlation(&ens, CorrelationMode::Auto).is_ok());
    }

    #[test]
    fn ks_accepts_and_rejects() {
        let mut rng = seeded(11);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        assert!(ks_test(&x, |v| v.clamp(0.0, 1.0)).p_value > 0.01);
        assert!(ks_test(&x, |v| (v * v).clamp(0.0, 1.0)).p_value < 1e-6);
        let y: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        assert!(ks_two_sample(&x, &y).p_value > 0.01);
        let z: Vec<f64> = y.iter().map(|v| v + 0.1).collect();
        assert!(ks_two_sample(&x, &z).p_value < 1e-6);
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.1, 0.2, 0.9, 1.0, 5.0], 2, 0.0, 1.0);
        assert_eq!(h, vec![(0.25, 2), (0.75, 2)]);
    }

    #[test]
    fn ragged_rejected() {
        assert!(matches!(
            Ensemble::from_rows(&[vec![1.0, 2.0], vec![1.0]]),
            Err(StatsError::Ragged { .. })
        ));
        assert!(matches!(Ensemble::from_rows(&[]), Err(StatsError::EmptyEnsemble)));
    }
}
