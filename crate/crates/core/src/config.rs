//! Flat `section.key = value` run configuration. Every training, network,
//! optimizer, smoothing-filter and loss knob is addressable here; unknown
//! keys are hard errors and `dump()` emits a file that parses back to the
//! same config.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::nets::{NetConfig, UpsampleMode};
use crate::wls::WlsParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key:?}: cannot parse {value:?} as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Decom,
    Joint,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Decom => "decom",
            Stage::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    /// Hard cap on optimizer steps; 0 means no cap.
    pub max_steps: usize,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    /// Feed the full image to the decomposition net instead of its
    /// low-frequency layer.
    pub decom_full_input: bool,
    /// Directory for cached frequency splits; empty disables the cache.
    pub wls_cache_dir: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            stage: Stage::Decom,
            epochs: 30,
            batch_size: 1,
            patch_size: 192,
            seed: 0,
            max_steps: 0,
            lr_decay: 1.0,
            decom_full_input: false,
            wls_cache_dir: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSection {
    fn default() -> Self {
        AdamSection {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSection {
    /// Feature-extractor layer indices averaged by the content term.
    pub content_taps: Vec<usize>,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            content_taps: vec![2, 4, 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub train: TrainSection,
    pub wls: WlsParams,
    pub net: NetConfig,
    pub adam: AdamSection,
    pub loss: LossSection,
}

fn parse_as<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

impl Config {
    /// Apply one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "train.stage" => {
                self.train.stage = match value {
                    "decom" => Stage::Decom,
                    "joint" => Stage::Joint,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            expected: "decom | joint",
                        })
                    }
                }
            }
            "train.epochs" => self.train.epochs = parse_as(key, value, "integer")?,
            "train.batch_size" => self.train.batch_size = parse_as(key, value, "integer")?,
            "train.patch_size" => self.train.patch_size = parse_as(key, value, "integer")?,
            "train.seed" => self.train.seed = parse_as(key, value, "integer")?,
            "train.max_steps" => self.train.max_steps = parse_as(key, value, "integer")?,
            "train.lr_decay" => self.train.lr_decay = parse_as(key, value, "number")?,
            "train.decom_full_input" => {
                self.train.decom_full_input = parse_as(key, value, "true | false")?
            }
            "train.wls_cache_dir" => self.train.wls_cache_dir = value.to_string(),
            "wls.lambda" => self.wls.lambda = parse_as(key, value, "number")?,
            "wls.alpha" => self.wls.alpha = parse_as(key, value, "number")?,
            "wls.eps" => self.wls.eps = parse_as(key, value, "number")?,
            "wls.per_channel" => self.wls.per_channel = parse_as(key, value, "true | false")?,
            "net.depth_levels" => self.net.depth_levels = parse_as(key, value, "integer")?,
            "net.base_channels" => self.net.base_channels = parse_as(key, value, "integer")?,
            "net.dense_growth" => self.net.dense_growth = parse_as(key, value, "integer")?,
            "net.upsample" => {
                self.net.upsample_mode = match value {
                    "nearest" => UpsampleMode::Nearest,
                    "pixel_shuffle" => UpsampleMode::PixelShuffle,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            expected: "nearest | pixel_shuffle",
                        })
                    }
                }
            }
            "adam.lr" => self.adam.lr = parse_as(key, value, "number")?,
            "adam.beta1" => self.adam.beta1 = parse_as(key, value, "number")?,
            "adam.beta2" => self.adam.beta2 = parse_as(key, value, "number")?,
            "adam.epsilon" => self.adam.epsilon = parse_as(key, value, "number")?,
            "loss.content_taps" => {
                let taps: Result<Vec<usize>, _> = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse())
                    .collect();
                self.loss.content_taps = taps.map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    expected: "comma-separated integers",
                })?;
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Apply config-file assignments on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::parse(&text)
    }

    /// Emit every key; the output parses back to an equal config.
    pub fn dump(&self) -> String {
        let taps = self
            .loss
            .content_taps
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let upsample = match self.net.upsample_mode {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::PixelShuffle => "pixel_shuffle",
        };
        format!(
            "train.stage = {}\n\
             train.epochs = {}\n\
             train.batch_size = {}\n\
             train.patch_size = {}\n\
             train.seed = {}\n\
             train.max_steps = {}\n\
             train.lr_decay = {}\n\
             train.decom_full_input = {}\n\
             train.wls_cache_dir = {}\n\
             wls.lambda = {}\n\
             wls.alpha = {}\n\
             wls.eps = {}\n\
             wls.per_channel = {}\n\
             net.depth_levels = {}\n\
             net.base_channels = {}\n\
             net.dense_growth = {}\n\
             net.upsample = {}\n\
             adam.lr = {}\n\
             adam.beta1 = {}\n\
             adam.beta2 = {}\n\
             adam.epsilon = {}\n\
             loss.content_taps = {}\n",
            self.train.stage,
            self.train.epochs,
            self.train.batch_size,
            self.train.patch_size,
            self.train.seed,
            self.train.max_steps,
            self.train.lr_decay,
            self.train.decom_full_input,
            self.train.wls_cache_dir,
            self.wls.lambda,
            self.wls.alpha,
            self.wls.eps,
            self.wls.per_channel,
            self.net.depth_levels,
            self.net.base_channels,
            self.net.dense_growth,
            upsample,
            self.adam.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.epsilon,
            taps,
        )
    }
}
