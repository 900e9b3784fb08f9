//! `VCKP` checkpoint files.
//!
//! ```text
//! magic "VCKP" | version u16 | dtype u8 | epoch u64
//! dims: vocab, word_dim, embed_dim, slow_channels, fast_channels (u64 each)
//! config text (u32 length + UTF-8) | vocabulary text (u32 length + UTF-8)
//! tensor count u32, then per tensor: name (u16 length + UTF-8), VTEN container
//! ```
//!
//! All integers are little-endian. Tensors appear in model layout order.

use std::path::Path;

use super::config::TrainConfig;
use crate::data::container::{decode_tensor, encode_tensor};
use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelDims};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Trained parameters together with the config and vocabulary behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub epoch: u64,
    pub vocab: Vocabulary,
    pub model: Model<T>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            return Err(self.err(format!("truncated {what}: expected {n} bytes, found {rest}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn text(&mut self, len: usize, what: &str) -> Result<&'a str> {
        let start = self.pos;
        let raw = self.take(len, what)?;
        std::str::from_utf8(raw).map_err(|_| Error::Format {
            offset: start as u64,
            message: format!("{what} is not UTF-8"),
        })
    }
}

fn push_text(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl<T: Scalar> Checkpoint<T> {
    /// Serializes with tensors stored as `config.dtype`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.config.dtype.code());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let d = self.model.dims();
        for x in [d.vocab, d.word_dim, d.embed_dim, d.slow_channels, d.fast_channels] {
            out.extend_from_slice(&(x as u64).to_le_bytes());
        }
        push_text(&mut out, &self.config.to_text());
        push_text(&mut out, &self.vocab.to_text());
        out.extend_from_slice(&(self.model.params().len() as u32).to_le_bytes());
        for (name, t) in self.model.names().iter().zip(self.model.params()) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&encode_tensor(t, self.config.dtype));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            r.pos = 0;
            return Err(r.err("bad magic, expected VCKP"));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            r.pos -= 2;
            return Err(r.err(format!("unsupported checkpoint version {version}")));
        }
        let code = r.take(1, "dtype")?[0];
        let dtype = Dtype::from_code(code).ok_or_else(|| Error::Format {
            offset: (r.pos - 1) as u64,
            message: format!("unknown dtype code {code}"),
        })?;
        let epoch = r.u64("epoch")?;
        let mut dim = [0usize; 5];
        for d in &mut dim {
            *d = r.u64("dims")? as usize;
        }
        let dims = ModelDims {
            vocab: dim[0],
            word_dim: dim[1],
            embed_dim: dim[2],
            slow_channels: dim[3],
            fast_channels: dim[4],
        };
        dims.validate()?;

        let n = r.u32("config length")? as usize;
        let config = TrainConfig::parse(r.text(n, "config")?)?;
        if config.dtype != dtype {
            return Err(r.err(format!(
                "header dtype {} disagrees with config dtype {}",
                dtype.name(),
                config.dtype.name()
            )));
        }
        let n = r.u32("vocabulary length")? as usize;
        let vocab = Vocabulary::parse(r.text(n, "vocabulary")?)?;
        if vocab.len() != dims.vocab {
            return Err(Error::InvalidInput(format!(
                "checkpoint vocabulary has {} entries but the embedding has {} rows",
                vocab.len(),
                dims.vocab
            )));
        }

        let count = r.u32("tensor count")? as usize;
        let mut named: Vec<(String, Tensor<T>)> = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = r.text(len, "tensor name")?.to_string();
            let base = r.pos;
            let (t, stored, used) = decode_tensor::<T>(&bytes[base..]).map_err(|e| match e {
                Error::Format { offset, message } => Error::Format {
                    offset: offset + base as u64,
                    message: format!("tensor {name}: {message}"),
                },
                other => other,
            })?;
            if stored != dtype {
                return Err(Error::Format {
                    offset: base as u64,
                    message: format!(
                        "tensor {name} stored as {}, header says {}",
                        stored.name(),
                        dtype.name()
                    ),
                });
            }
            r.pos += used;
            named.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            epoch,
            vocab,
            model: Model::from_named(dims, named)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
