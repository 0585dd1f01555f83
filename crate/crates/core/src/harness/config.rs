//! Experiment configuration: one TOML document fully determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::PpmConfig;
use crate::data::{ModArithSpec, ModOp};
use crate::error::{Error, Result};
use crate::landscapes::RavineSpec;
use crate::models::{Activation, MlpSpec, TransformerSpec};
use crate::optim::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Modulo,
    Mnist,
    Ravine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AdamwBaseline,
    Ppm,
    Ppconn,
}

impl Variant {
    pub fn is_agent(self) -> bool {
        self != Variant::AdamwBaseline
    }
}

/// Transformer architecture; vocabulary and class count follow from `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_head: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub embed_std: f64,
    pub activation: Activation,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        let s = TransformerSpec::grokking_main(97);
        TransformerConfig {
            d_model: s.d_model,
            n_head: s.n_head,
            n_layers: s.n_layers,
            d_ff: s.d_ff,
            embed_std: s.embed_std,
            activation: s.activation,
        }
    }
}

impl TransformerConfig {
    pub fn small() -> Self {
        TransformerConfig {
            n_head: 2,
            n_layers: 1,
            d_ff: 256,
            embed_std: 0.02,
            ..Self::default()
        }
    }

    pub fn spec_for(&self, p: usize) -> TransformerSpec {
        TransformerSpec {
            d_model: self.d_model,
            n_head: self.n_head,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            vocab_size: p + 2,
            seq_len: 4,
            n_classes: p,
            embed_std: self.embed_std,
            activation: self.activation,
        }
    }
}

/// Where the MNIST IDX files live and how many training images to draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub n: usize,
    pub seed: u64,
}

impl Default for MnistConfig {
    fn default() -> Self {
        MnistConfig {
            train_images: "data/mnist/train-images-idx3-ubyte".into(),
            train_labels: "data/mnist/train-labels-idx1-ubyte".into(),
            test_images: "data/mnist/t10k-images-idx3-ubyte".into(),
            test_labels: "data/mnist/t10k-labels-idx1-ubyte".into(),
            n: 1000,
            seed: 0,
        }
    }
}

impl MnistConfig {
    /// Resolve relative paths against `base`.
    pub fn resolved(&self, base: &Path) -> MnistConfig {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        MnistConfig {
            train_images: r(&self.train_images),
            train_labels: r(&self.train_labels),
            test_images: r(&self.test_images),
            test_labels: r(&self.test_labels),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub variant: Variant,
    /// Drives batch order; ravine noise has its own seed.
    pub seed: u64,
    /// Drives the initial parameters, kept apart so sweeps can share one network.
    pub init_seed: u64,
    pub max_epochs: u64,
    /// Extra epochs to keep training after the test threshold is crossed.
    pub extra_epochs: u64,
    pub train_threshold: f64,
    pub test_threshold: f64,
    /// Capped at the training-set size.
    pub batch_size: usize,
    /// Keep every k-th step record.
    pub log_every: u64,
    /// Optimizer of the baseline variant.
    pub optimizer: AdamConfig,
    pub ppm: PpmConfig,
    pub modulo: ModArithSpec,
    pub transformer: TransformerConfig,
    pub mnist: MnistConfig,
    pub mlp: MlpSpec,
    pub ravine: RavineSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Modulo,
            variant: Variant::AdamwBaseline,
            seed: 0,
            init_seed: 0,
            max_epochs: 10_000,
            extra_epochs: 0,
            train_threshold: 0.99,
            test_threshold: 0.99,
            batch_size: 512,
            log_every: 1,
            optimizer: AdamConfig::adamw(),
            ppm: PpmConfig::default(),
            modulo: ModArithSpec::default(),
            transformer: TransformerConfig::default(),
            mnist: MnistConfig::default(),
            mlp: MlpSpec::default(),
            ravine: RavineSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Paper defaults for MNIST: batch 200, test threshold 0.85, PPM with A = 15, σ = 1.
    pub fn mnist_default() -> Self {
        let mut c = ExperimentConfig {
            task: Task::Mnist,
            batch_size: 200,
            test_threshold: 0.85,
            ..Self::default()
        };
        c.ppm.potential.amplitude = 15.0;
        c.ppm.potential.sigma = 1.0;
        c.ppm.alpha_p = 10.0;
        c
    }

    /// Small-transformer modular addition with the relaxed 0.95 test threshold.
    pub fn small_modulo(p: u64) -> Self {
        ExperimentConfig {
            test_threshold: 0.95,
            modulo: ModArithSpec {
                p,
                op: ModOp::Addition,
                ..ModArithSpec::default()
            },
            transformer: TransformerConfig::small(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_threshold", self.train_threshold),
            ("test_threshold", self.test_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.log_every < 1 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.ppm.validate()?;
        match self.task {
            Task::Modulo => {
                self.modulo.validate().map_err(|e| Error::Config(e.to_string()))?;
                self.transformer.spec_for(self.modulo.p as usize).validate()?;
            }
            Task::Mnist => self.mlp.validate()?,
            Task::Ravine => self.ravine.validate()?,
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `dotted.key=value` overrides. Keys must already exist in the
    /// schema; values are parsed as TOML literals, falling back to strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
            set_dotted(&mut doc, key.trim(), parse_literal(raw.trim()))?;
        }
        let cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a table", parts[..i].join("."))))?;
        let slot = table
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        if i + 1 == parts.len() {
            // integers are accepted where the schema holds a float
            *slot = match (&*slot, value) {
                (toml::Value::Float(_), toml::Value::Integer(n)) => toml::Value::Float(n as f64),
                (_, v) => v,
            };
            return Ok(());
        }
        cur = slot;
    }
    unreachable!("split yields at least one part")
}
