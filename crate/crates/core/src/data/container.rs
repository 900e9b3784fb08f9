//! `VTEN` tensor container.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "VTEN"
//! 4       2         version (u16 LE) = 1
//! 6       1         dtype (0 = f64, 1 = f32)
//! 7       1         ndim
//! 8       8·ndim    dims (u64 LE each)
//! ...     elem·n    payload, row-major, little-endian
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VTEN";
pub const VERSION: u16 = 1;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Serializes `t` with elements stored as `dtype` (f32 rounds to nearest).
pub fn encode_tensor<T: Scalar>(t: &Tensor<T>, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.ndim() + dtype.size() * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => {
            for &x in t.data() {
                out.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        Dtype::F32 => {
            for &x in t.data() {
                out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Decodes one container from the front of `bytes`, returning the tensor,
/// its stored dtype and the number of bytes consumed.
pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<(Tensor<T>, Dtype, usize)> {
    if bytes.len() < 8 {
        return Err(format_err(
            bytes.len(),
            format!("header needs 8 bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let dtype = Dtype::from_code(bytes[6]).ok_or_else(|| format_err(6, format!("unknown dtype code {}", bytes[6])))?;
    let ndim = bytes[7] as usize;
    let dims_end = 8 + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(format_err(
            bytes.len(),
            format!("dims need {dims_end} bytes, found {}", bytes.len()),
        ));
    }
    let mut shape = Vec::with_capacity(ndim);
    for k in 0..ndim {
        let at = 8 + 8 * k;
        let d = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        if d == 0 {
            return Err(format_err(at, "zero extent"));
        }
        shape.push(usize::try_from(d).map_err(|_| format_err(at, "extent overflows usize"))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(8, "element count overflows"))?;
    let payload = count
        .checked_mul(dtype.size())
        .ok_or_else(|| format_err(8, "payload size overflows"))?;
    let end = dims_end + payload;
    if bytes.len() < end {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated payload: expected {payload} bytes, found {}",
                bytes.len() - dims_end
            ),
        ));
    }
    let body = &bytes[dims_end..end];
    let data: Vec<T> = match dtype {
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
    };
    Ok((Tensor::new(shape, data)?, dtype, end))
}

pub fn write_tensor<T: Scalar>(path: &Path, t: &Tensor<T>, dtype: Dtype) -> Result<()> {
    std::fs::write(path, encode_tensor(t, dtype)).map_err(|e| Error::io(path, e))
}

/// Reads a whole file as one container; trailing bytes are an error.
pub fn read_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, _, used) = decode_tensor(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    if used != bytes.len() {
        return Err(format_err(
            used,
            format!("{}: {} trailing bytes", path.display(), bytes.len() - used),
        ));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_round_trips() {
        let t = Tensor::scalar(-2.5f64);
        let bytes = encode_tensor(&t, Dtype::F64);
        assert_eq!(bytes.len(), 16);
        let (back, dtype, used) = decode_tensor::<f64>(&bytes).unwrap();
        assert_eq!((back, dtype, used), (t, Dtype::F64, 16));
    }

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_f64(&[2, 1], &[1.0, 2.0]).unwrap();
        let b = encode_tensor::<f64>(&t, Dtype::F32);
        assert_eq!(&b[..8], b"VTEN\x01\x00\x01\x02");
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &1u64.to_le_bytes());
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let t = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let mut b = encode_tensor::<f64>(&t, Dtype::F64);
        b.truncate(b.len() - 5);
        let err = decode_tensor::<f64>(&b).unwrap_err().to_string();
        assert!(err.contains("expected 24 bytes, found 19"), "{err}");
    }

    #[test]
    fn bad_header_fields() {
        let t = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let good = encode_tensor::<f64>(&t, Dtype::F64);
        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(decode_tensor::<f64>(&b), Err(Error::Format { offset: 0, .. })));
        let mut b = good.clone();
        b[4] = 9;
        assert!(matches!(decode_tensor::<f64>(&b), Err(Error::Format { offset: 4, .. })));
        let mut b = good;
        b[6] = 7;
        assert!(matches!(decode_tensor::<f64>(&b), Err(Error::Format { offset: 6, .. })));
    }

    #[test]
    fn f32_storage_rounds_to_nearest() {
        let x = 0.1f64;
        let t = Tensor::from_vec(vec![x]);
        let (back, _, _) = decode_tensor::<f64>(&encode_tensor(&t, Dtype::F32)).unwrap();
        assert_eq!(back.data()[0], x as f32 as f64);
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            shape in prop::collection::vec(1usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2))
                .collect();
            let t = Tensor::new(shape, data).unwrap();
            let (back, _, _) = decode_tensor::<f64>(&encode_tensor(&t, Dtype::F64)).unwrap();
            prop_assert_eq!(
                back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back.shape(), t.shape());

            let t32 = t.cast::<f32>();
            let (back32, _, _) = decode_tensor::<f32>(&encode_tensor(&t32, Dtype::F32)).unwrap();
            prop_assert_eq!(back32, t32);
        }
    }
}
