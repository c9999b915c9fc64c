//! Device-to-device variability: per-field parameter distributions and per-device sampling.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde_json::{Map, Value};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::device::{DeviceParams, MeanModelParams};
use crate::rng::{SeedPolicy, StreamPurpose};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid distribution for `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("unknown distribution kind `{kind}` for `{field}`")]
    UnknownKind { field: String, kind: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("malformed value for `{key}`: {reason}")]
    Malformed { key: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One of the density families used for device parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionSpec {
    /// `1 / (high - low)` on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// `exp(-(x - x0) / lambda) / lambda` for `x >= x0`.
    Exponential { x0: f64, lambda: f64 },
    Gaussian { mu: f64, sigma: f64 },
    /// `exp(-0.5 (ln(x / scale) / s)^2) / (s x sqrt(2 pi))`; `scale` is the median.
    LogNormal { s: f64, scale: f64 },
    /// Point mass, used to switch variability off for a field.
    Constant { value: f64 },
}

impl DistributionSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DistributionSpec::Uniform { .. } => "uniform",
            DistributionSpec::Exponential { .. } => "exponential",
            DistributionSpec::Gaussian { .. } => "gaussian",
            DistributionSpec::LogNormal { .. } => "lognormal",
            DistributionSpec::Constant { .. } => "constant",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            DistributionSpec::Uniform { low, high } => vec![low, high],
            DistributionSpec::Exponential { x0, lambda } => vec![x0, lambda],
            DistributionSpec::Gaussian { mu, sigma } => vec![mu, sigma],
            DistributionSpec::LogNormal { s, scale } => vec![s, scale],
            DistributionSpec::Constant { value } => vec![value],
        }
    }

    pub fn from_kind(field: &str, kind: &str, p: &[f64]) -> Result<Self, ConfigError> {
        let want = |n: usize| {
            if p.len() == n {
                Ok(())
            } else {
                Err(ConfigError::InvalidSpec {
                    field: field.to_string(),
                    reason: format!("`{kind}` takes {n} parameters, got {}", p.len()),
                })
            }
        };
        let spec = match kind {
            "uniform" => {
                want(2)?;
                DistributionSpec::Uniform { low: p[0], high: p[1] }
            }
            "exponential" => {
                want(2)?;
                DistributionSpec::Exponential { x0: p[0], lambda: p[1] }
            }
            "gaussian" => {
                want(2)?;
                DistributionSpec::Gaussian { mu: p[0], sigma: p[1] }
            }
            "lognormal" => {
                want(2)?;
                DistributionSpec::LogNormal { s: p[0], scale: p[1] }
            }
            "constant" => {
                want(1)?;
                DistributionSpec::Constant { value: p[0] }
            }
            other => {
                return Err(ConfigError::UnknownKind {
                    field: field.to_string(),
                    kind: other.to_string(),
                })
            }
        };
        spec.validate(field)?;
        Ok(spec)
    }

    pub fn validate(&self, field: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::InvalidSpec {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err(bad("parameters must be finite"));
        }
        match *self {
            DistributionSpec::Uniform { low, high } if low > high => Err(bad("requires low <= high")),
            DistributionSpec::Exponential { lambda, .. } if lambda <= 0.0 => {
                Err(bad("requires lambda > 0"))
            }
            DistributionSpec::Gaussian { sigma, .. } if sigma <= 0.0 => Err(bad("requires sigma > 0")),
            DistributionSpec::LogNormal { s, scale } if s <= 0.0 || scale <= 0.0 => {
                Err(bad("requires s > 0 and scale > 0"))
            }
            _ => Ok(()),
        }
    }

    /// One draw from the density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistributionSpec::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            DistributionSpec::Exponential { x0, lambda } => x0 + lambda * rng.sample::<f64, _>(Exp1),
            DistributionSpec::Gaussian { mu, sigma } => mu + sigma * rng.sample::<f64, _>(StandardNormal),
            DistributionSpec::LogNormal { s, scale } => {
                scale * (s * rng.sample::<f64, _>(StandardNormal)).exp()
            }
            DistributionSpec::Constant { value } => value,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            DistributionSpec::Uniform { low, high } => {
                if x < low {
                    0.0
                } else if x >= high {
                    1.0
                } else {
                    (x - low) / (high - low)
                }
            }
            DistributionSpec::Exponential { x0, lambda } => {
                if x < x0 {
                    0.0
                } else {
                    -(-(x - x0) / lambda).exp_m1()
                }
            }
            DistributionSpec::Gaussian { mu, sigma } => std_normal_cdf((x - mu) / sigma),
            DistributionSpec::LogNormal { s, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x / scale).ln() / s)
                }
            }
            DistributionSpec::Constant { value } => {
                if x < value {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    pub fn median(&self) -> f64 {
        match *self {
            DistributionSpec::Uniform { low, high } => 0.5 * (low + high),
            DistributionSpec::Exponential { x0, lambda } => x0 + lambda * std::f64::consts::LN_2,
            DistributionSpec::Gaussian { mu, .. } => mu,
            DistributionSpec::LogNormal { scale, .. } => scale,
            DistributionSpec::Constant { value } => value,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Uniform { low, high } => 0.5 * (low + high),
            DistributionSpec::Exponential { x0, lambda } => x0 + lambda,
            DistributionSpec::Gaussian { mu, .. } => mu,
            DistributionSpec::LogNormal { s, scale } => scale * (0.5 * s * s).exp(),
            DistributionSpec::Constant { value } => value,
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:?}", self.kind(), self.params())
    }
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// How out-of-range draws are handled for one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipPolicy {
    None,
    /// Redraw until the value is strictly above the bound.
    RedrawAtOrBelow(f64),
}

impl ClipPolicy {
    fn accepts(&self, v: f64) -> bool {
        match *self {
            ClipPolicy::None => true,
            ClipPolicy::RedrawAtOrBelow(bound) => v > bound,
        }
    }
}

/// A distribution together with its clipping policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSpec {
    pub dist: DistributionSpec,
    pub clip: ClipPolicy,
}

impl FieldSpec {
    pub fn new(dist: DistributionSpec) -> Self {
        Self {
            dist,
            clip: ClipPolicy::None,
        }
    }

    const MAX_REDRAWS: usize = 10_000;

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        for _ in 0..Self::MAX_REDRAWS {
            let v = self.dist.sample(rng);
            if self.clip.accepts(v) {
                return v;
            }
        }
        // Validation guarantees the accepted region carries mass; reaching this is a bug.
        panic!("clip policy {:?} rejected {} consecutive draws of {}", self.clip, Self::MAX_REDRAWS, self.dist)
    }
}

/// Names of the sampled device fields, in draw order.
pub const FIELDS: [&str; 6] = ["a", "m1", "c1", "t_star", "m2", "r0"];

/// Per-field distributions for device parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct D2DConfig {
    pub a: FieldSpec,
    pub m1: FieldSpec,
    pub c1: FieldSpec,
    pub t_star: FieldSpec,
    pub m2: FieldSpec,
    pub r0: FieldSpec,
}

impl Default for D2DConfig {
    /// Distributions fitted over 64 measured devices.
    fn default() -> Self {
        Self {
            a: FieldSpec::new(DistributionSpec::Uniform { low: 0.0, high: 0.5 }),
            m1: FieldSpec::new(DistributionSpec::Exponential {
                x0: 3.74e-5,
                lambda: 6.56e-4,
            }),
            c1: FieldSpec::new(DistributionSpec::Gaussian {
                mu: 5.29e-3,
                sigma: 5.32e-2,
            }),
            t_star: FieldSpec::new(DistributionSpec::LogNormal { s: 0.80, scale: 542.5 }),
            m2: FieldSpec::new(DistributionSpec::Exponential {
                x0: 1.64e-34,
                lambda: 2.89e-5,
            }),
            r0: FieldSpec {
                dist: DistributionSpec::Gaussian {
                    mu: 6988.0,
                    sigma: 381.7,
                },
                clip: ClipPolicy::RedrawAtOrBelow(0.0),
            },
        }
    }
}

impl D2DConfig {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        match name {
            "a" => Some(&self.a),
            "m1" => Some(&self.m1),
            "c1" => Some(&self.c1),
            "t_star" => Some(&self.t_star),
            "m2" => Some(&self.m2),
            "r0" => Some(&self.r0),
            _ => None,
        }
    }

    fn field_mut(&mut self, name: &str) -> Option<&mut FieldSpec> {
        match name {
            "a" => Some(&mut self.a),
            "m1" => Some(&mut self.m1),
            "c1" => Some(&mut self.c1),
            "t_star" => Some(&mut self.t_star),
            "m2" => Some(&mut self.m2),
            "r0" => Some(&mut self.r0),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for name in FIELDS {
            let f = self.field(name).expect("known field");
            f.dist.validate(name)?;
            if let ClipPolicy::RedrawAtOrBelow(bound) = f.clip {
                if f.dist.cdf(bound) >= 1.0 - 1e-12 {
                    return Err(ConfigError::InvalidSpec {
                        field: name.to_string(),
                        reason: format!("no probability mass above clip bound {bound}"),
                    });
                }
            }
        }
        let must_be_positive = |name: &str, f: &FieldSpec| {
            let support_ok = match f.dist {
                DistributionSpec::LogNormal { .. } => true,
                DistributionSpec::Constant { value } => value > 0.0,
                _ => matches!(f.clip, ClipPolicy::RedrawAtOrBelow(b) if b >= 0.0),
            };
            if support_ok {
                Ok(())
            } else {
                Err(ConfigError::InvalidSpec {
                    field: name.to_string(),
                    reason: "must be strictly positive: use lognormal, a positive constant, or `min` >= 0".into(),
                })
            }
        };
        must_be_positive("t_star", &self.t_star)?;
        must_be_positive("r0", &self.r0)?;
        Ok(())
    }

    /// Every field replaced by a point mass at its median.
    pub fn point_mass_at_medians(&self) -> Self {
        let pm = |f: &FieldSpec| FieldSpec::new(DistributionSpec::Constant { value: f.dist.median() });
        Self {
            a: pm(&self.a),
            m1: pm(&self.m1),
            c1: pm(&self.c1),
            t_star: pm(&self.t_star),
            m2: pm(&self.m2),
            r0: pm(&self.r0),
        }
    }

    /// Parse the flat key/value form: `{"m1.kind": "exponential", "m1.params": [x0, lambda], "r0.min": 0}`.
    ///
    /// Keys that are absent keep their default value.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)?;
        let map = value.as_object().ok_or_else(|| ConfigError::Malformed {
            key: "<root>".into(),
            reason: "expected a JSON object".into(),
        })?;
        Self::from_flat_map(map)
    }

    pub fn from_flat_map(map: &Map<String, Value>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for key in map.keys() {
            let (field, attr) = key
                .split_once('.')
                .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
            if cfg.field(field).is_none() || !matches!(attr, "kind" | "params" | "min") {
                return Err(ConfigError::UnknownKey(key.clone()));
            }
        }
        for name in FIELDS {
            let kind = map.get(&format!("{name}.kind"));
            let params = map.get(&format!("{name}.params"));
            let target = cfg.field_mut(name).expect("known field");
            match (kind, params) {
                (None, None) => {}
                (Some(k), Some(p)) => {
                    let kind = k.as_str().ok_or_else(|| ConfigError::Malformed {
                        key: format!("{name}.kind"),
                        reason: "expected a string".into(),
                    })?;
                    let params = parse_params(&format!("{name}.params"), p)?;
                    target.dist = DistributionSpec::from_kind(name, kind, &params)?;
                }
                (Some(_), None) => return Err(ConfigError::MissingKey(format!("{name}.params"))),
                (None, Some(_)) => return Err(ConfigError::MissingKey(format!("{name}.kind"))),
            }
            if let Some(v) = map.get(&format!("{name}.min")) {
                target.clip = match v {
                    Value::Null => ClipPolicy::None,
                    v => ClipPolicy::RedrawAtOrBelow(v.as_f64().ok_or_else(|| ConfigError::Malformed {
                        key: format!("{name}.min"),
                        reason: "expected a number or null".into(),
                    })?),
                };
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_flat_json(&self) -> Value {
        let mut map = Map::new();
        for name in FIELDS {
            let f = self.field(name).expect("known field");
            map.insert(format!("{name}.kind"), Value::from(f.dist.kind()));
            map.insert(format!("{name}.params"), Value::from(f.dist.params()));
            if let ClipPolicy::RedrawAtOrBelow(b) = f.clip {
                map.insert(format!("{name}.min"), Value::from(b));
            }
        }
        Value::Object(map)
    }
}

fn parse_params(key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
    let arr = v.as_array().ok_or_else(|| ConfigError::Malformed {
        key: key.to_string(),
        reason: "expected an array of numbers".into(),
    })?;
    arr.iter()
        .map(|x| {
            x.as_f64().ok_or_else(|| ConfigError::Malformed {
                key: key.to_string(),
                reason: format!("`{x}` is not a number"),
            })
        })
        .collect()
}

/// Draw one device's parameters from its private parameter stream.
pub fn sample_device(config: &D2DConfig, device_index: u64, seeds: &SeedPolicy) -> DeviceParams {
    let mut rng = seeds.stream(device_index, StreamPurpose::DeviceParams);
    let a = config.a.sample(&mut rng);
    let m1 = config.m1.sample(&mut rng);
    let c1 = config.c1.sample(&mut rng);
    let t_star = config.t_star.sample(&mut rng);
    let m2 = config.m2.sample(&mut rng);
    let r0 = config.r0.sample(&mut rng);
    DeviceParams {
        mean: MeanModelParams { m1, c1, t_star, m2 },
        rtn_amplitude: a,
        r0,
    }
}

/// Analytic per-field medians.
pub fn median_device(config: &D2DConfig) -> DeviceParams {
    DeviceParams {
        mean: MeanModelParams {
            m1: config.m1.dist.median(),
            c1: config.c1.dist.median(),
            t_star: config.t_star.dist.median(),
            m2: config.m2.dist.median(),
        },
        rtn_amplitude: config.a.dist.median(),
        r0: config.r0.dist.median(),
    }
}

/// Where the parameters of each device in an ensemble come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSource {
    Sampled(D2DConfig),
    Fixed(DeviceParams),
}

impl ParamSource {
    pub fn params_for(&self, device_index: u64, seeds: &SeedPolicy) -> DeviceParams {
        match self {
            ParamSource::Sampled(cfg) => sample_device(cfg, device_index, seeds),
            ParamSource::Fixed(p) => *p,
        }
    }
}
