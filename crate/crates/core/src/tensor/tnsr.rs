//! TNSR binary tensor files.
//!
//! Layout: magic `TNSR`, `u8` version (1), `u8` dtype (0 = f32, 1 = f64),
//! `u8` rank, `rank` little-endian `u64` dims, then the row-major payload in
//! little-endian.

use std::io::Write;
use std::path::Path;

use super::{DType, Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u8 = 1;

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let width = match T::DTYPE {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(7 + 8 * t.rank() + width * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match T::DTYPE {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(v.f64() as f32).to_le_bytes())),
        DType::F64 => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.f64().to_le_bytes())),
    }
    out
}

/// Decodes a TNSR buffer, converting the payload to `T` if the stored dtype differs.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::malformed("missing TNSR magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::Unsupported(format!("TNSR version {}", bytes[4])));
    }
    let width = match bytes[5] {
        0 => 4,
        1 => 8,
        other => return Err(Error::Unsupported(format!("TNSR dtype {other}"))),
    };
    let rank = bytes[6] as usize;
    let header = 7 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::malformed("truncated TNSR header"));
    }
    let shape: Vec<usize> = bytes[7..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::malformed("TNSR shape overflows"))?;
    let payload = &bytes[header..];
    if payload.len() != n * width {
        return Err(Error::malformed(format!(
            "TNSR payload has {} bytes, shape {shape:?} needs {}",
            payload.len(),
            n * width
        )));
    }
    let data: Vec<T> = if width == 4 {
        payload
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect()
    };
    Tensor::new(shape, data)
}

pub fn write<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_f64(&[2, 1], &[1.0, -2.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"TNSR");
        assert_eq!(b[4..7], [1, 0, 2]);
        assert_eq!(u64::from_le_bytes(b[7..15].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[15..23].try_into().unwrap()), 1);
        assert_eq!(&b[23..27], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 31);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode::<f32>(b"NOPE123").is_err());
        let mut b = encode(&Tensor::<f64>::zeros(&[3]));
        b.pop();
        assert!(matches!(decode::<f64>(&b), Err(Error::Malformed(_))));
        let mut v = encode(&Tensor::<f64>::zeros(&[3]));
        v[4] = 9;
        assert!(matches!(decode::<f64>(&v), Err(Error::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| (seed.wrapping_add(i as u64) % 1000) as f64 * 0.37 - 100.0).collect();
            let t64 = Tensor::<f64>::new(shape.clone(), data).unwrap();
            prop_assert_eq!(decode::<f64>(&encode(&t64)).unwrap(), t64.clone());
            let t32: Tensor<f32> = t64.cast();
            prop_assert_eq!(decode::<f32>(&encode(&t32)).unwrap(), t32);
        }
    }
}
