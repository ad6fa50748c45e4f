use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::builder::BuilderVariant;
use crate::data::{synth_blobs_split, BlobParams, Dataset, ForgettingSpec, load_raw, Split, DEFAULT_SPREAD};
use crate::error::{Error, Result};
use crate::eval::KlOrder;
use crate::mask::{MaskConfig, MaskFamily};
use crate::methods::{Method, MethodParams, NatmuParams};
use crate::nn::{OptimizerKind, TrainConfig};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synth {
        classes: usize,
        per_class: usize,
        height: usize,
        width: usize,
        #[serde(default = "one")]
        channels: usize,
        #[serde(default = "default_spread")]
        spread: f32,
        #[serde(default)]
        seed: u64,
        test_per_class: usize,
    },
    Uds {
        train: PathBuf,
        test: PathBuf,
    },
}

fn one() -> usize {
    1
}

fn default_spread() -> f32 {
    DEFAULT_SPREAD
}

impl DatasetSource {
    /// Train and test splits.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSource::Synth {
                classes,
                per_class,
                height,
                width,
                channels,
                spread,
                seed,
                test_per_class,
            } => synth_blobs_split(
                &BlobParams {
                    classes: *classes,
                    per_class: *per_class,
                    height: *height,
                    width: *width,
                    channels: *channels,
                    spread: *spread,
                    seed: *seed,
                },
                *test_per_class,
            ),
            DatasetSource::Uds { train, test } => {
                let train = load_raw(train, Split::Train)?;
                let test = load_raw(test, Split::Test)?;
                if train.shape != test.shape || train.classes != test.classes {
                    return Err(Error::InvalidConfig(
                        "train and test files disagree on shape or class count".into(),
                    ));
                }
                Ok((train, test))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
        }
    }
}

/// Training schedule of a section: everything in [`TrainConfig`] except the
/// seed, which is derived per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default = "adamw")]
    pub optimizer: OptimizerKind,
}

fn adamw() -> OptimizerKind {
    OptimizerKind::AdamW
}

impl Schedule {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            weight_decay: self.weight_decay,
            optimizer: self.optimizer,
            ..TrainConfig::new(self.epochs, self.batch_size, self.lr)
        }
    }
}

/// A `[methods.<name>]` section. Training keys override the shared
/// `[unlearn]` schedule (or `[pretrain]` for retrain).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f32>,
    pub weight_decay: Option<f32>,
    pub optimizer: Option<OptimizerKind>,
    pub reinit_final_layer: Option<bool>,
    pub n: Option<usize>,
    pub delta: Option<f32>,
    pub family: Option<MaskFamily>,
    pub edge: Option<usize>,
    pub variant: Option<BuilderVariant>,
    pub shuffle_masks: Option<bool>,
    pub temperature: Option<f32>,
    pub alpha: Option<f32>,
}

impl MethodSection {
    pub fn schedule(&self, base: &Schedule) -> Schedule {
        Schedule {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            optimizer: self.optimizer.unwrap_or(base.optimizer),
        }
    }

    pub fn params(&self) -> MethodParams {
        let defaults = MethodParams::default();
        let natmu = NatmuParams::default();
        MethodParams {
            natmu: NatmuParams {
                n: self.n.unwrap_or(natmu.n),
                mask: MaskConfig {
                    family: self.family.unwrap_or(natmu.mask.family),
                    delta: self.delta.unwrap_or(natmu.mask.delta),
                    edge: self.edge,
                },
                variant: self.variant.unwrap_or(natmu.variant),
                shuffle_masks: self.shuffle_masks.unwrap_or(natmu.shuffle_masks),
            },
            temperature: self.temperature.unwrap_or(defaults.temperature),
            alpha: self.alpha.unwrap_or(defaults.alpha),
            reinit_final_layer: self.reinit_final_layer.unwrap_or(defaults.reinit_final_layer),
        }
    }

    fn foreign_keys(&self, method: Method) -> Vec<&'static str> {
        let natmu = [
            ("n", self.n.is_some()),
            ("delta", self.delta.is_some()),
            ("family", self.family.is_some()),
            ("edge", self.edge.is_some()),
            ("variant", self.variant.is_some()),
            ("shuffle_masks", self.shuffle_masks.is_some()),
        ];
        let mut set: Vec<(&'static str, bool, bool)> = natmu
            .into_iter()
            .map(|(k, present)| (k, present, method == Method::Natmu))
            .collect();
        set.push(("temperature", self.temperature.is_some(), method == Method::Badteacher));
        set.push(("alpha", self.alpha.is_some(), method == Method::Neggrad));
        set.push((
            "reinit_final_layer",
            self.reinit_final_layer.is_some(),
            method != Method::Retrain,
        ));
        set.into_iter()
            .filter(|(_, present, allowed)| *present && !allowed)
            .map(|(k, _, _)| k)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub kl_order: KlOrder,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelSection,
    pub pretrain: Schedule,
    pub forget: ForgettingSpec,
    pub unlearn: Schedule,
    pub methods: BTreeMap<Method, MethodSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("natmu-out")
}

fn default_bins() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Parses a config file, resolving relative dataset paths against its
    /// directory and applying the `OUTPUT_DIR` override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetSource::Uds { train, test } = &mut config.dataset {
            *train = base.join(&*train);
            *test = base.join(&*test);
        }
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            config.output_dir = PathBuf::from(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidConfig("histogram_bins must be positive".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if let DatasetSource::Uds { train, test } = &self.dataset {
            for path in [train, test] {
                if !path.is_file() {
                    return Err(Error::InvalidConfig(format!(
                        "dataset file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        self.forget.validate()?;
        self.pretrain.to_train_config().validate()?;
        for (&method, section) in &self.methods {
            let foreign = section.foreign_keys(method);
            if !foreign.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "[methods.{method}] does not take {}",
                    foreign.join(", ")
                )));
            }
            self.train_config(method).validate()?;
        }
        Ok(())
    }

    pub fn section(&self, method: Method) -> MethodSection {
        self.methods.get(&method).cloned().unwrap_or_default()
    }

    /// Training config of a method before the stage seed is applied.
    pub fn train_config(&self, method: Method) -> TrainConfig {
        let base = if method == Method::Retrain {
            &self.pretrain
        } else {
            &self.unlearn
        };
        self.section(method).schedule(base).to_train_config()
    }

    /// Requested methods other than the retrain oracle, in canonical order.
    pub fn unlearning_methods(&self) -> Vec<Method> {
        self.methods
            .keys()
            .copied()
            .filter(|&m| m != Method::Retrain)
            .collect()
    }

    /// SHA-256 over the semantic content of the config; the output location
    /// does not count.
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = PathBuf::new();
        let canonical = serde_json::to_string(&semantic).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
