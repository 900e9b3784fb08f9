//! Persistent formats, synthetic data and batch assembly.

pub mod batch;
pub mod container;
pub mod kv;
pub mod manifest;
pub mod synthetic;

pub use batch::{assemble_epoch, Batch, BatchItem};
pub use container::{decode_tensor, encode_tensor, read_tensor, write_tensor};
pub use manifest::{BlobMasks, Caption, Dataset, ManifestRecord, Video};
pub use synthetic::{generate_synthetic, SyntheticSpec};
