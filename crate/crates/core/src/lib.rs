//! Cross-modal alignment of videos and captions.
//!
//! Slow and fast feature volumes are projected into a visual and a motion
//! space where nouns and verbs of the caption are matched voxel by voxel
//! through temperature-controlled relevance maps. A joint space built from
//! both volumes and a recurrent caption encoder is used for retrieval, and
//! pooled motion/visual similarities rerank its results.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`); training and
//! verification run in `f64`.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod encoders;
pub mod error;
pub mod model;
pub mod objectives;
pub mod retrieval;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod video;

pub use error::{Error, Result};
pub use model::{Model, ModelDims};
pub use scalar::{Dtype, Scalar};
pub use tensor::{Tape, Tensor, Var};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type FeatureVolume64 = video::FeatureVolume<f64>;
pub type Checkpoint64 = training::Checkpoint<f64>;
