//! Binary tensor files.
//!
//! Layout: `b"MDLT"`, version `0x01`, dtype (`0` = f32, `1` = f64), rank,
//! four zero bytes, `rank` little-endian `u64` dims, then the row-major
//! little-endian payload.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MDLT";
pub const VERSION: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

pub fn encode(t: &Tensor, dtype: DType) -> Vec<u8> {
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(12 + 8 * t.dims().len() + width * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(t.dims().len() as u8);
    out.extend_from_slice(&[0; 4]);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Tensor, DType)> {
    let bad = |m: &str| Error::TensorFormat(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing MDLT magic"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(bad(&format!("unknown dtype {other}"))),
    };
    let rank = bytes[6] as usize;
    if bytes[7..11] != [0; 4] {
        return Err(bad("non-zero pad bytes"));
    }
    let mut pos = 11;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let chunk = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated dims"))?;
        dims.push(u64::from_le_bytes(chunk.try_into().unwrap()) as usize);
        pos += 8;
    }
    let n: usize = dims.iter().product();
    let width = if dtype == DType::F32 { 4 } else { 8 };
    let payload = &bytes[pos..];
    if payload.len() != n * width {
        return Err(bad(&format!("payload holds {} bytes, dims need {}", payload.len(), n * width)));
    }
    let data = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((Tensor::new(dims, data)?, dtype))
}

pub fn write_to<W: Write>(w: &mut W, t: &Tensor, dtype: DType) -> std::io::Result<()> {
    w.write_all(&encode(t, dtype))
}

pub fn read_from<R: Read>(r: &mut R) -> Result<(Tensor, DType)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::TensorFormat(e.to_string()))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::matrix(2, 3, vec![1.0; 6]).unwrap();
        let b = encode(&t, DType::F64);
        assert_eq!(&b[..4], b"MDLT");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 1);
        assert_eq!(b[6], 2);
        assert_eq!(&b[7..11], &[0, 0, 0, 0]);
        assert_eq!(u64::from_le_bytes(b[11..19].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[19..27].try_into().unwrap()), 3);
        assert_eq!(b.len(), 27 + 48);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let mut b = encode(&t, DType::F32);
        assert!(decode(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(decode(&b).is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_exact(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_add(i as u64)) as f64).sin() * 1e3).collect();
            let t = Tensor::new(dims, data).unwrap();
            let (back, dt) = decode(&encode(&t, DType::F64)).unwrap();
            prop_assert_eq!(dt, DType::F64);
            prop_assert_eq!(back, t);
        }
    }
}
