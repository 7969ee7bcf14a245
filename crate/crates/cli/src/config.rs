use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;
use ynet_gi::classical::{HioConfig, PhaseAlgorithm};
use ynet_gi::nn::AdamConfig;
use ynet_gi::ynet::{LrSchedule, TrainConfig, YNetConfig};
use ynet_gi::{IlluminationMode, OpticalConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub optics: OpticsSection,
    pub data: DataSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub classical: ClassicalSection,
    pub stability: StabilitySection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsSection {
    pub wavelength: f64,
    pub d1: f64,
    pub d2: f64,
    pub source_diameter: f64,
    pub sim_grid_n: usize,
    pub sim_pitch: f64,
    pub detector_n: usize,
    pub detector_pitch: f64,
    pub pad_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub mnist_images: PathBuf,
    pub mode: String,
    pub seed: u64,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub test_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// `desk` (halved channels) or `full`.
    pub preset: String,
    pub dropout_rate: f64,
    pub final_padding: usize,
    /// Convolution weight initialization: `he` or `fan-in`.
    pub init: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `constant` or `cosine`.
    pub schedule: String,
    pub final_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalSection {
    pub support_n: usize,
    pub beta: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub digits: usize,
    pub repetitions: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub png: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            optics: OpticsSection::default(),
            data: DataSection::default(),
            network: NetworkSection::default(),
            training: TrainingSection::default(),
            classical: ClassicalSection::default(),
            stability: StabilitySection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for OpticsSection {
    fn default() -> Self {
        let c = OpticalConfig::default();
        Self {
            wavelength: c.wavelength,
            d1: c.d1,
            d2: c.d2,
            source_diameter: c.source_diameter,
            sim_grid_n: c.sim_grid_n,
            sim_pitch: c.sim_pitch,
            detector_n: c.detector_n,
            detector_pitch: c.detector_pitch,
            pad_factor: c.pad_factor,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            mnist_images: PathBuf::from("data/mnist-images-idx3-ubyte"),
            mode: "dynamic".into(),
            seed: 1,
            train_pairs: 4000,
            validation_pairs: 500,
            test_pairs: 100,
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        let c = YNetConfig::desk();
        Self {
            preset: "desk".into(),
            dropout_rate: c.dropout_rate,
            final_padding: c.final_padding,
            init: c.init.as_str().into(),
            seed: 1,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
            schedule: "constant".into(),
            final_fraction: 0.1,
            seed: 1,
        }
    }
}

impl Default for ClassicalSection {
    fn default() -> Self {
        let h = HioConfig::default();
        Self {
            support_n: h.support_n,
            beta: h.beta,
            iterations: h.iterations,
            restarts: h.restarts,
            seed: 1,
        }
    }
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            digits: 10,
            repetitions: 10,
            seed: 2,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            png: false,
        }
    }
}

/// Parses a command-line override using the type of the key's default value.
fn parse_value(key: &str, template: &Value, raw: &str) -> Result<Value, CliError> {
    let bad = |what: &str| CliError::Config(format!("--{key}: {raw:?} is not a valid {what}"));
    Ok(match template {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Float(_) => Value::Float(raw.parse().map_err(|_| bad("number"))?),
        Value::Integer(_) => Value::Integer(raw.parse().map_err(|_| bad("integer"))?),
        Value::Boolean(_) => Value::Boolean(raw.parse().map_err(|_| bad("boolean"))?),
        _ => return Err(CliError::Config(format!("--{key} cannot be set from the command line"))),
    })
}

impl ExperimentConfig {
    /// Defaults, then the optional file (a config or a run manifest), then
    /// dotted overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let mut table = text
                    .parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                // A run manifest carries its full config under `config`.
                if table.contains_key("command") {
                    if let Some(Value::Table(inner)) = table.remove("config") {
                        table = inner;
                    }
                }
                table
            }
            None => toml::Table::new(),
        };
        let defaults = toml::Table::try_from(Self::default()).expect("config serializes");
        for (key, raw) in overrides {
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| CliError::Config(format!("override {key:?} must be section.key")))?;
            let template = defaults
                .get(section)
                .and_then(|s| s.get(field))
                .ok_or_else(|| CliError::Config(format!("unknown config key {key:?}")))?;
            let value = parse_value(key, template, raw)?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| Value::Table(toml::Table::new()));
            let Value::Table(sec) = entry else {
                return Err(CliError::Config(format!("{section} is not a section")));
            };
            sec.insert(field.to_string(), value);
        }
        let cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.optical().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.mode()?;
        self.network()?;
        self.train_config()?;
        if self.data.train_pairs == 0 || self.data.validation_pairs == 0 {
            return Err(CliError::Config("data.train_pairs and data.validation_pairs must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn optical(&self) -> OpticalConfig {
        let o = &self.optics;
        OpticalConfig {
            wavelength: o.wavelength,
            d1: o.d1,
            d2: o.d2,
            source_diameter: o.source_diameter,
            sim_grid_n: o.sim_grid_n,
            sim_pitch: o.sim_pitch,
            detector_n: o.detector_n,
            detector_pitch: o.detector_pitch,
            pad_factor: o.pad_factor,
        }
    }

    pub fn mode(&self) -> Result<IlluminationMode, CliError> {
        self.data.mode.parse().map_err(CliError::Config)
    }

    pub fn network(&self) -> Result<YNetConfig, CliError> {
        let base = match self.network.preset.as_str() {
            "desk" => YNetConfig::desk(),
            "full" => YNetConfig::full(),
            other => return Err(CliError::Config(format!("unknown network preset {other:?} (desk|full)"))),
        };
        let cfg = YNetConfig {
            dropout_rate: self.network.dropout_rate,
            final_padding: self.network.final_padding,
            init: self.network.init.parse().map_err(CliError::Config)?,
            input_n: self.optics.detector_n,
            ..base
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.training;
        let schedule = match t.schedule.as_str() {
            "constant" => LrSchedule::Constant,
            "cosine" => LrSchedule::Cosine {
                final_fraction: t.final_fraction,
            },
            other => return Err(CliError::Config(format!("unknown schedule {other:?} (constant|cosine)"))),
        };
        if t.batch_size == 0 {
            return Err(CliError::Config("training.batch_size must be positive".into()));
        }
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            schedule,
            seed: t.seed,
        })
    }

    pub fn hio(&self) -> HioConfig {
        let c = &self.classical;
        HioConfig {
            support_n: c.support_n,
            beta: c.beta,
            iterations: c.iterations,
            restarts: c.restarts,
            seed: c.seed,
            algorithm: PhaseAlgorithm::Hio,
        }
    }

    /// `--seed` sets every seed in the document.
    pub fn set_all_seeds(&mut self, seed: u64) {
        self.data.seed = seed;
        self.network.seed = seed;
        self.training.seed = seed;
        self.classical.seed = seed;
        self.stability.seed = seed;
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output.dir.join("data")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.output.dir.join("model")
    }
}
