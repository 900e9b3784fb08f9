//! Floating point element types accepted by tensors and models.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// On-disk element encoding of a tensor container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::F32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F64),
            1 => Some(Dtype::F32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F64 => "f64",
            Dtype::F32 => "f32",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f64" | "float64" => Some(Dtype::F64),
            "f32" | "float32" => Some(Dtype::F32),
            _ => None,
        }
    }
}

/// Real scalar used throughout the crate (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Native storage type of this scalar.
    const DTYPE: Dtype;

    /// Converts an `f64` literal, rounding to nearest for narrower types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Default guard for norms and cosine denominators.
    #[inline]
    fn norm_eps() -> Self {
        Self::lit(1e-12)
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
}
