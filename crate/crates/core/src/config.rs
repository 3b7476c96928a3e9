//! Line-based `key = value` configuration for the whole pipeline.

use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::inference::BeamConfig;
use crate::kge::KgeConfig;
use crate::model::ModelConfig;
use crate::numerics::Activation;
use crate::training::{Mode, TrainConfig};

/// Every tunable of every stage. `model.vocab_size` is filled from the
/// tokenizer and `model.d_entity` always equals `kge.dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub finetune: TrainConfig,
    pub pretrain: TrainConfig,
    pub pretrain_sets: usize,
    pub kge: KgeConfig,
    pub top_k: usize,
    pub max_hops: usize,
    pub strict_grounding: bool,
    pub bpe_symbols: usize,
    pub beam: BeamConfig,
}

pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "text_layers",
    "kg_layers",
    "heads",
    "d_model",
    "d_ff",
    "d_entity",
    "kernel_size",
    "dropout",
    "leaky_slope",
    "gat_activation",
    "lr",
    "warmup",
    "weight_decay",
    "batch_size",
    "accumulation",
    "epochs",
    "label_smoothing",
    "pretrain_lr",
    "pretrain_epochs",
    "pretrain_batch_size",
    "pretrain_sets",
    "kge_margin",
    "kge_lr",
    "kge_epochs",
    "kge_negatives",
    "kge_batch_size",
    "top_k",
    "max_hops",
    "strict_grounding",
    "bpe_symbols",
    "beam_size",
    "length_penalty",
    "max_gen_len",
];

impl Default for PipelineConfig {
    fn default() -> Self {
        let seed = 42;
        let kge = KgeConfig::default();
        PipelineConfig {
            seed,
            model: ModelConfig {
                d_entity: kge.dim,
                ..ModelConfig::default()
            },
            finetune: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            pretrain: TrainConfig {
                seed,
                epochs: 1,
                mode: Mode::Pretrain,
                ..TrainConfig::default()
            },
            pretrain_sets: 2000,
            kge,
            top_k: 5,
            max_hops: 3,
            strict_grounding: false,
            bpe_symbols: 2000,
            beam: BeamConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Applies `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Sets one key; unknown keys are configuration errors listing the
    /// valid ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for {key}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let float = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "seed" => {
                let seed = value.parse::<u64>().map_err(|_| bad())?;
                self.seed = seed;
                self.finetune.seed = seed;
                self.pretrain.seed = seed;
                self.kge.seed = seed;
            }
            "text_layers" => self.model.text_layers = int()?,
            "kg_layers" => self.model.kg_layers = int()?,
            "heads" => self.model.heads = int()?,
            "d_model" => self.model.d_model = int()?,
            "d_ff" => self.model.d_ff = int()?,
            "d_entity" => {
                let d = int()?;
                self.model.d_entity = d;
                self.kge.dim = d;
            }
            "kernel_size" => self.model.kernel_size = int()?,
            "dropout" => self.model.dropout = float()?,
            "leaky_slope" => {
                self.model.leaky_slope = float()?;
                if let Activation::LeakyRelu(_) = self.model.gat_activation {
                    self.model.gat_activation = Activation::LeakyRelu(self.model.leaky_slope);
                }
            }
            "gat_activation" => {
                self.model.gat_activation = match value.parse()? {
                    Activation::LeakyRelu(_) => Activation::LeakyRelu(self.model.leaky_slope),
                    other => other,
                }
            }
            "lr" => self.finetune.lr = float()?,
            "warmup" => {
                let w = float()?;
                self.finetune.warmup = w;
                self.pretrain.warmup = w;
            }
            "weight_decay" => {
                let w = float()?;
                self.finetune.weight_decay = w;
                self.pretrain.weight_decay = w;
            }
            "batch_size" => self.finetune.batch_size = int()?,
            "accumulation" => {
                let a = int()?;
                self.finetune.accumulation = a;
                self.pretrain.accumulation = a;
            }
            "epochs" => self.finetune.epochs = int()?,
            "label_smoothing" => {
                let s = float()?;
                self.finetune.label_smoothing = s;
                self.pretrain.label_smoothing = s;
            }
            "pretrain_lr" => self.pretrain.lr = float()?,
            "pretrain_epochs" => self.pretrain.epochs = int()?,
            "pretrain_batch_size" => self.pretrain.batch_size = int()?,
            "pretrain_sets" => self.pretrain_sets = int()?,
            "kge_margin" => self.kge.margin = float()?,
            "kge_lr" => self.kge.lr = float()?,
            "kge_epochs" => self.kge.epochs = int()?,
            "kge_negatives" => self.kge.negatives = int()?,
            "kge_batch_size" => self.kge.batch_size = int()?,
            "top_k" => self.top_k = int()?,
            "max_hops" => self.max_hops = int()?,
            "strict_grounding" => {
                self.strict_grounding = value.parse::<bool>().map_err(|_| bad())?
            }
            "bpe_symbols" => self.bpe_symbols = int()?,
            "beam_size" => self.beam.beam_size = int()?,
            "length_penalty" => self.beam.length_penalty = float()?,
            "max_gen_len" => self.beam.max_len = int()?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key {key:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Checks everything that does not depend on the tokenizer.
    pub fn validate(&self) -> Result<()> {
        self.finetune.validate()?;
        self.pretrain.validate()?;
        self.kge.validate()?;
        self.beam.validate()?;
        if !(1..=3).contains(&self.max_hops) {
            return Err(Error::Config(format!(
                "max_hops must be 1, 2 or 3, got {}",
                self.max_hops
            )));
        }
        Ok(())
    }
}
