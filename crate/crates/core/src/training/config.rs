use std::fmt::Write as _;
use std::path::Path;

use crate::data::kv::KeyValues;
use crate::error::{Error, Result};
use crate::objectives::LossConfig;
use crate::scalar::{Dtype, Scalar};

/// Training hyperparameters. Serialized as flat `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `C`: width of the motion, visual and joint spaces.
    pub embed_dim: usize,
    /// `E`: word embedding width.
    pub word_dim: usize,
    /// `V`: vocabulary size; 0 takes it from the dataset.
    pub vocab: usize,
    pub alpha: f64,
    pub beta_train: f64,
    pub lambda_m: f64,
    pub lambda_s: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Storage type of checkpoint tensors; training math is always `f64`.
    pub dtype: Dtype,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 32,
            word_dim: 32,
            vocab: 0,
            alpha: 0.2,
            beta_train: 0.1,
            lambda_m: 1.0,
            lambda_s: 1.0,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: 30,
            seed: 1,
            dtype: Dtype::F64,
            clip_norm: 0.0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "C",
    "E",
    "V",
    "alpha",
    "beta_train",
    "lambda_m",
    "lambda_s",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "epochs",
    "seed",
    "dtype",
    "clip_norm",
];

impl TrainConfig {
    /// Parses `key=value` text. Unknown keys are rejected; absent keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text, CONFIG_KEYS)?;
        let mut c = TrainConfig::default();
        kv.set("C", &mut c.embed_dim)?;
        kv.set("E", &mut c.word_dim)?;
        kv.set("V", &mut c.vocab)?;
        kv.set("alpha", &mut c.alpha)?;
        kv.set("beta_train", &mut c.beta_train)?;
        kv.set("lambda_m", &mut c.lambda_m)?;
        kv.set("lambda_s", &mut c.lambda_s)?;
        kv.set("lr", &mut c.lr)?;
        kv.set("beta1", &mut c.beta1)?;
        kv.set("beta2", &mut c.beta2)?;
        kv.set("eps", &mut c.eps)?;
        kv.set("batch_size", &mut c.batch_size)?;
        kv.set("epochs", &mut c.epochs)?;
        kv.set("seed", &mut c.seed)?;
        kv.set("clip_norm", &mut c.clip_norm)?;
        if let Some(d) = kv.get("dtype") {
            c.dtype = Dtype::parse(d).ok_or_else(|| Error::InvalidConfig(format!("unknown dtype {d:?}")))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "C={}", self.embed_dim);
        let _ = writeln!(o, "E={}", self.word_dim);
        let _ = writeln!(o, "V={}", self.vocab);
        let _ = writeln!(o, "alpha={}", self.alpha);
        let _ = writeln!(o, "beta_train={}", self.beta_train);
        let _ = writeln!(o, "lambda_m={}", self.lambda_m);
        let _ = writeln!(o, "lambda_s={}", self.lambda_s);
        let _ = writeln!(o, "lr={}", self.lr);
        let _ = writeln!(o, "beta1={}", self.beta1);
        let _ = writeln!(o, "beta2={}", self.beta2);
        let _ = writeln!(o, "eps={}", self.eps);
        let _ = writeln!(o, "batch_size={}", self.batch_size);
        let _ = writeln!(o, "epochs={}", self.epochs);
        let _ = writeln!(o, "seed={}", self.seed);
        let _ = writeln!(o, "dtype={}", self.dtype.name());
        let _ = writeln!(o, "clip_norm={}", self.clip_norm);
        o
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embed_dim == 0 || self.word_dim == 0 {
            return bad("C and E must be positive".into());
        }
        if !(self.beta_train > 0.0) {
            return bad(format!("beta_train must be > 0, got {}", self.beta_train));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.lambda_m >= 0.0 && self.lambda_s >= 0.0) {
            return bad("lambda_m and lambda_s must be >= 0".into());
        }
        if !(self.lr >= 0.0) || !(self.eps > 0.0) || !(self.clip_norm >= 0.0) {
            return bad("lr and clip_norm must be >= 0, eps > 0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        Ok(())
    }

    pub fn loss_config<T: Scalar>(&self) -> LossConfig<T> {
        LossConfig {
            alpha: T::lit(self.alpha),
            beta: T::lit(self.beta_train),
            lambda_m: T::lit(self.lambda_m),
            lambda_s: T::lit(self.lambda_s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let c = TrainConfig {
            lr: 1.5e-4,
            dtype: Dtype::F32,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(TrainConfig::parse("momentum=0.9\n").is_err());
        assert!(TrainConfig::parse("batch_size=1\n").is_err());
        assert!(TrainConfig::parse("beta_train=0\n").is_err());
        assert!(TrainConfig::parse("dtype=f16\n").is_err());
        assert!(TrainConfig::parse("lr=fast\n").is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = TrainConfig::parse("# ablation\nlambda_m=0\nlambda_s=0\n").unwrap();
        assert_eq!(c.lambda_m, 0.0);
        assert_eq!(c.alpha, 0.2);
        assert_eq!(c.beta_train, 0.1);
    }
}
