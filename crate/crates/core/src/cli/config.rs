//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` (and anything after a `#`) are comments. Every key
//! has a default; unknown keys are rejected. [`Experiment::echo`] writes the
//! fully resolved configuration in the same format, so a run can be repeated
//! from its echo.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::cube::{BlockLayout, SyntheticSpec};
use crate::error::{Error, Result};
use crate::masking::Strategy;
use crate::trainer::{ModelShape, TrainConfig};

/// Recognized keys with their defaults, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("cube", ""),
    ("labels", ""),
    ("checkpoint", ""),
    ("syn_bands", "16"),
    ("syn_height", "48"),
    ("syn_width", "48"),
    ("syn_classes", "4"),
    ("syn_groups", "pairs"),
    ("syn_gain_min", "0.8"),
    ("syn_gain_max", "1.2"),
    ("syn_noise", "0.01"),
    ("syn_block_rows", "4"),
    ("syn_block_cols", "4"),
    ("syn_base_level", "1"),
    ("syn_class_spread", "0.3"),
    ("syn_texture", "0.3"),
    ("syn_wavelength", "5"),
    ("syn_seed", "2024"),
    ("patch_size", "5"),
    ("pretrain_patches", "500"),
    ("strategy", "mrs"),
    ("ratio", "0.25"),
    ("epochs_pretrain", "150"),
    ("epochs_finetune", "60"),
    ("batch_size", "16"),
    ("learning_rate", "0.005"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("epsilon", "0.00000001"),
    ("seed", "1"),
    ("seeds", "1,2,3,4,5"),
    ("freeze_encoder", "false"),
    ("train_fraction", "0.02"),
    ("test_fraction", "0.5"),
    ("width", "16"),
    ("hidden", "32"),
    ("workers", "1"),
    ("threshold", "0.95"),
];

/// Raw key/value pairs after defaults and overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl Default for ConfigMap {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl ConfigMap {
    /// Defaults overlaid with the lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1))
            })?;
            map.set(key.trim(), value.trim())?;
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown configuration key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse_value<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key);
        raw.parse()
            .map_err(|e| Error::Config(format!("`{key} = {raw}`: {e}")))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.get(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }
}

/// Everything a subcommand needs, resolved and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub patch_size: usize,
    /// Cap on pretraining patches (0 keeps the whole pool).
    pub pretrain_patches: usize,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub threshold: f64,
    map: ConfigMap,
}

fn parse_groups(raw: &str, bands: usize) -> Result<Vec<Vec<usize>>> {
    match raw {
        "pairs" => Ok(SyntheticSpec::pairs(bands)),
        "none" => Ok((0..bands).map(|b| vec![b]).collect()),
        _ => raw
            .split(';')
            .map(|g| {
                g.split(',')
                    .map(|b| {
                        b.trim().parse::<usize>().map_err(|e| {
                            Error::Config(format!("syn_groups: `{b}`: {e}"))
                        })
                    })
                    .collect()
            })
            .collect(),
    }
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key} = {raw}` is not a boolean"))),
    }
}

impl Experiment {
    pub fn from_map(map: ConfigMap) -> Result<Self> {
        let bands: usize = map.parse_value("syn_bands")?;
        let synthetic = SyntheticSpec {
            bands,
            height: map.parse_value("syn_height")?,
            width: map.parse_value("syn_width")?,
            classes: map.parse_value("syn_classes")?,
            groups: parse_groups(map.get("syn_groups"), bands)?,
            gain_range: (map.parse_value("syn_gain_min")?, map.parse_value("syn_gain_max")?),
            noise_sigma: map.parse_value("syn_noise")?,
            layout: BlockLayout {
                rows: map.parse_value("syn_block_rows")?,
                cols: map.parse_value("syn_block_cols")?,
            },
            base_level: map.parse_value("syn_base_level")?,
            class_spread: map.parse_value("syn_class_spread")?,
            texture: map.parse_value("syn_texture")?,
            wavelength: map.parse_value("syn_wavelength")?,
            seed: map.parse_value("syn_seed")?,
        };
        let strategy = map.get("strategy").parse::<Strategy>()?;
        let train = TrainConfig {
            strategy,
            ratio: map.parse_value("ratio")?,
            epochs_pretrain: map.parse_value("epochs_pretrain")?,
            epochs_finetune: map.parse_value("epochs_finetune")?,
            batch_size: map.parse_value("batch_size")?,
            learning_rate: map.parse_value("learning_rate")?,
            beta1: map.parse_value("beta1")?,
            beta2: map.parse_value("beta2")?,
            epsilon: map.parse_value("epsilon")?,
            seed: map.parse_value("seed")?,
            freeze_encoder: parse_bool("freeze_encoder", map.get("freeze_encoder"))?,
            train_fraction: map.parse_value("train_fraction")?,
            test_fraction: map.parse_value("test_fraction")?,
            model: ModelShape {
                width: map.parse_value("width")?,
                hidden: map.parse_value("hidden")?,
            },
            workers: map.parse_value("workers")?,
        };
        train.validate()?;
        let seeds = map
            .get("seeds")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::Config(format!("seeds: `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let patch_size: usize = map.parse_value("patch_size")?;
        if patch_size == 0 {
            return Err(Error::Config("patch_size must be at least 1".into()));
        }
        let threshold: f64 = map.parse_value("threshold")?;
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Config(format!("threshold {threshold} is outside (0, 1]")));
        }
        Ok(Self {
            cube: map.path("cube"),
            labels: map.path("labels"),
            checkpoint: map.path("checkpoint"),
            synthetic,
            patch_size,
            pretrain_patches: map.parse_value("pretrain_patches")?,
            train,
            seeds,
            threshold,
            map,
        })
    }

    /// Fully resolved configuration as `key = value` lines.
    pub fn echo(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.map.get(key));
        }
        out
    }
}
