use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Activation, DEFAULT_LEAKY_SLOPE};
use crate::text::{MAX_DECODER_LEN, MAX_ENCODER_LEN};

/// Shapes and hyperparameters of the network. The word-level hidden size
/// `d_h` is always `2·d_model` and the relation size equals `d_entity`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub text_layers: usize,
    pub kg_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub d_entity: usize,
    pub kernel_size: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub max_enc_len: usize,
    pub max_dec_len: usize,
    pub leaky_slope: f64,
    pub gat_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_layers: 2,
            kg_layers: 1,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            d_entity: 32,
            kernel_size: 2,
            vocab_size: 0,
            dropout: 0.1,
            max_enc_len: MAX_ENCODER_LEN,
            max_dec_len: MAX_DECODER_LEN,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            gat_activation: Activation::Elu(1.0),
        }
    }
}

impl ModelConfig {
    /// Full-size shapes: six textual and six KG layers, 1024-wide tokens and
    /// entities, sixteen heads, kernel size two.
    pub fn full_scale(vocab_size: usize) -> Self {
        ModelConfig {
            text_layers: 6,
            kg_layers: 6,
            heads: 16,
            d_model: 1024,
            d_ff: 4096,
            d_entity: 1024,
            kernel_size: 2,
            vocab_size,
            ..ModelConfig::default()
        }
    }

    pub fn d_hidden(&self) -> usize {
        2 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("d_entity", self.d_entity),
            ("kernel_size", self.kernel_size),
            ("max_enc_len", self.max_enc_len),
            ("max_dec_len", self.max_dec_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= crate::text::NUM_SPECIAL {
            return Err(Error::Config(format!(
                "vocabulary size {} leaves no room beyond the reserved tokens",
                self.vocab_size
            )));
        }
        for (name, d) in [("d_model", self.d_model), ("d_entity", self.d_entity)] {
            if d % self.heads != 0 {
                return Err(Error::Config(format!(
                    "{name} = {d} is not divisible by {} heads",
                    self.heads
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("text_layers", self.text_layers.to_string()),
            ("kg_layers", self.kg_layers.to_string()),
            ("heads", self.heads.to_string()),
            ("d_model", self.d_model.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("d_entity", self.d_entity.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("max_enc_len", self.max_enc_len.to_string()),
            ("max_dec_len", self.max_dec_len.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("gat_activation", self.gat_activation.name().to_string()),
        ]
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "manifest".into(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = ModelConfig::default();
        let known: Vec<&str> = cfg.entries().iter().map(|(k, _)| *k).collect();
        for (k, v) in &map {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown manifest key {k:?}")));
            }
            cfg.set(k, v)?;
        }
        for k in known {
            if !map.contains_key(k) {
                return Err(Error::Config(format!("manifest is missing {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for {key}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let float = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "text_layers" => self.text_layers = int()?,
            "kg_layers" => self.kg_layers = int()?,
            "heads" => self.heads = int()?,
            "d_model" => self.d_model = int()?,
            "d_ff" => self.d_ff = int()?,
            "d_entity" => self.d_entity = int()?,
            "kernel_size" => self.kernel_size = int()?,
            "vocab_size" => self.vocab_size = int()?,
            "dropout" => self.dropout = float()?,
            "max_enc_len" => self.max_enc_len = int()?,
            "max_dec_len" => self.max_dec_len = int()?,
            "leaky_slope" => self.leaky_slope = float()?,
            "gat_activation" => self.gat_activation = value.parse()?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        if let Activation::LeakyRelu(_) = self.gat_activation {
            self.gat_activation = Activation::LeakyRelu(self.leaky_slope);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let cfg = ModelConfig {
            vocab_size: 40,
            dropout: 0.0,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_manifest(&cfg.to_manifest()).unwrap(), cfg);
        assert!(ModelConfig::from_manifest("heads = 2\n").is_err());
        let extra = format!("{}bogus = 1\n", cfg.to_manifest());
        assert!(ModelConfig::from_manifest(&extra).is_err());
    }

    #[test]
    fn full_scale_shapes() {
        let cfg = ModelConfig::full_scale(50_000);
        assert_eq!(cfg.d_hidden(), 2048);
        assert_eq!(cfg.d_model % cfg.heads, 0);
        cfg.validate().unwrap();
    }

    #[test]
    fn head_divisibility_is_checked() {
        let cfg = ModelConfig {
            heads: 3,
            vocab_size: 20,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
