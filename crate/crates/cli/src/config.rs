//! Flat JSON run configuration. Command-line flags and `RRAM_*` environment
//! variables take precedence over values read here.

use std::path::{Path, PathBuf};

use rram_sim::device::{CycleNoiseParams, ModelOptions};
use rram_sim::trainer::TrainerConfig;
use rram_sim::variability::D2DConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

const PLAIN_KEYS: [&str; 12] = [
    "seed",
    "out_dir",
    "devices",
    "pulses",
    "no_noise",
    "no_d2d",
    "rtn_second_regime_only",
    "w_cap",
    "mnist_dir",
    "detrend",
    "welch_segment",
    "bins",
];

/// Everything a config file may set.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub devices: Option<usize>,
    pub pulses: Option<usize>,
    pub no_noise: Option<bool>,
    pub no_d2d: Option<bool>,
    pub rtn_second_regime_only: Option<bool>,
    pub w_cap: Option<f64>,
    pub mnist_dir: Option<PathBuf>,
    pub detrend: Option<bool>,
    pub welch_segment: Option<usize>,
    pub bins: Option<usize>,
    pub noise: CycleNoiseParams,
    pub d2d: D2DConfig,
    pub trainer: TrainerConfig,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn typed<T: DeserializeOwned>(key: &str, v: &Value) -> Result<T, CliError> {
    serde_json::from_value(v.clone()).map_err(|e| config_err(format!("`{key}`: {e}")))
}

/// Overlay `overrides` onto the serialized defaults of `T` and deserialize the result.
fn overlay<T: Serialize + DeserializeOwned>(section: &str, base: &T, overrides: Map<String, Value>) -> Result<T, CliError> {
    let Value::Object(mut merged) = serde_json::to_value(base).expect("serializable defaults") else {
        unreachable!("config sections serialize to objects")
    };
    for (k, v) in overrides {
        if !merged.contains_key(&k) {
            return Err(config_err(format!("unknown key `{section}.{k}`")));
        }
        merged.insert(k, v);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| config_err(format!("`{section}`: {e}")))
}

impl FileConfig {
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err(format!("invalid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(config_err("config must be a JSON object"));
        };
        let mut cfg = Self::default();
        let (mut noise, mut d2d, mut trainer) = (Map::new(), Map::new(), Map::new());
        for (key, v) in &map {
            if let Some(rest) = key.strip_prefix("noise.") {
                noise.insert(rest.to_string(), v.clone());
            } else if let Some(rest) = key.strip_prefix("d2d.") {
                d2d.insert(rest.to_string(), v.clone());
            } else if let Some(rest) = key.strip_prefix("trainer.") {
                trainer.insert(rest.to_string(), v.clone());
            } else if !PLAIN_KEYS.contains(&key.as_str()) {
                return Err(config_err(format!("unknown key `{key}`")));
            }
        }
        let get = |k: &str| map.get(k);
        if let Some(v) = get("seed") {
            cfg.seed = Some(typed("seed", v)?);
        }
        if let Some(v) = get("out_dir") {
            cfg.out_dir = Some(typed("out_dir", v)?);
        }
        if let Some(v) = get("devices") {
            cfg.devices = Some(typed("devices", v)?);
        }
        if let Some(v) = get("pulses") {
            cfg.pulses = Some(typed("pulses", v)?);
        }
        if let Some(v) = get("no_noise") {
            cfg.no_noise = Some(typed("no_noise", v)?);
        }
        if let Some(v) = get("no_d2d") {
            cfg.no_d2d = Some(typed("no_d2d", v)?);
        }
        if let Some(v) = get("rtn_second_regime_only") {
            cfg.rtn_second_regime_only = Some(typed("rtn_second_regime_only", v)?);
        }
        if let Some(v) = get("w_cap") {
            cfg.w_cap = Some(typed("w_cap", v)?);
        }
        if let Some(v) = get("mnist_dir") {
            cfg.mnist_dir = Some(typed("mnist_dir", v)?);
        }
        if let Some(v) = get("detrend") {
            cfg.detrend = Some(typed("detrend", v)?);
        }
        if let Some(v) = get("welch_segment") {
            cfg.welch_segment = Some(typed("welch_segment", v)?);
        }
        if let Some(v) = get("bins") {
            cfg.bins = Some(typed("bins", v)?);
        }
        cfg.noise = overlay("noise", &cfg.noise, noise)?;
        cfg.noise.validate().map_err(|e| config_err(e.to_string()))?;
        cfg.d2d = D2DConfig::from_flat_map(&d2d).map_err(|e| config_err(format!("d2d: {e}")))?;
        cfg.trainer = overlay("trainer", &cfg.trainer, trainer)?;
        cfg.trainer.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn model_options(&self, rtn_second_regime_only: bool) -> ModelOptions {
        ModelOptions {
            rtn_second_regime_only,
            w_cap: self.w_cap.unwrap_or(ModelOptions::default().w_cap),
        }
    }
}
