//! `SDT1` tensor container.
//!
//! ```text
//! "SDT1" | ndim: u32 LE | dims: ndim × u32 LE | dtype: u8 | payload (row-major, LE)
//! ```
//!
//! dtype codes: 1 = f64, 2 = f32, 3 = u16, 4 = u8.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SDT1";
/// u16 depth payloads store meters × 256.
pub const U16_DEPTH_SCALE: f64 = 256.0;
const MAX_RANK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
    U16,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F64 => 1,
            DType::F32 => 2,
            DType::U16 => 3,
            DType::U8 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => DType::F64,
            2 => DType::F32,
            3 => DType::U16,
            4 => DType::U8,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::U16 => 2,
            DType::U8 => 1,
        }
    }
}

fn check_integral(v: f64, max: f64) -> Result<()> {
    if v.fract() != 0.0 || !(0.0..=max).contains(&v) {
        return Err(Error::invalid(format!("value {v} does not fit an unsigned {max}-bounded integer")));
    }
    Ok(())
}

/// Serializes `t`. Integer dtypes require integral values in range.
pub fn encode(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    t.check_finite("container encode")?;
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + t.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(t.rank()).map_err(|_| Error::invalid("rank too large"))?.to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::invalid(format!("dim {d} too large")))?.to_le_bytes());
    }
    out.push(dtype.code());
    for &v in t.data() {
        match dtype {
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::U16 => {
                check_integral(v, u16::MAX as f64)?;
                out.extend_from_slice(&(v as u16).to_le_bytes());
            }
            DType::U8 => {
                check_integral(v, u8::MAX as f64)?;
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            offset: self.bytes.len(),
            msg: format!("truncated {what}: need {n} bytes at offset {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a container; values come back raw (no depth scaling).
pub fn decode(bytes: &[u8]) -> Result<(DType, Tensor)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic".into() });
    }
    let mut r = Reader { bytes, pos: 4 };
    let ndim = r.u32("rank")? as usize;
    if ndim == 0 || ndim > MAX_RANK {
        return Err(Error::Format { offset: 4, msg: format!("rank {ndim} outside 1..={MAX_RANK}") });
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let at = r.pos;
        let d = r.u32("dims")? as usize;
        if d == 0 {
            return Err(Error::Format { offset: at, msg: "zero-sized dimension".into() });
        }
        shape.push(d);
    }
    let dtype_at = r.pos;
    let code = r.take(1, "dtype")?[0];
    let dtype =
        DType::from_code(code).ok_or_else(|| Error::Format { offset: dtype_at, msg: format!("unknown dtype {code}") })?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)));
    let Some((n, payload_len)) = count else {
        return Err(Error::Format { offset: 8, msg: "dimensions overflow".into() });
    };
    let payload = r.take(payload_len, "payload")?;
    if r.pos != bytes.len() {
        return Err(Error::Format { offset: r.pos, msg: format!("{} trailing bytes", bytes.len() - r.pos) });
    }
    let data: Vec<f64> = match dtype {
        DType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        DType::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::U16 => payload.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::U8 => payload.iter().map(|&b| b as f64).collect(),
    };
    debug_assert_eq!(data.len(), n);
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format { offset: dtype_at + 1 + i * dtype.size(), msg: "non-finite value".into() });
    }
    Ok((dtype, Tensor::new(shape, data)?))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t, dtype)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(DType, Tensor)> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Metric depth from a container: floats are meters, u16 is meters × 256.
pub fn depth_from_raw(dtype: DType, raw: Tensor) -> Result<Tensor> {
    match dtype {
        DType::F64 | DType::F32 => Ok(raw),
        DType::U16 => Ok(raw.map(|v| v / U16_DEPTH_SCALE)),
        DType::U8 => Err(Error::invalid("depth containers must be f32, f64 or u16")),
    }
}

/// Inverse of [`depth_from_raw`] for u16 storage (rounded to 1/256 m).
pub fn depth_to_u16(depth: &Tensor) -> Result<Tensor> {
    let raw = depth.map(|m| (m * U16_DEPTH_SCALE).round());
    if let Some(v) = raw.data().iter().find(|v| !(0.0..=u16::MAX as f64).contains(*v)) {
        return Err(Error::invalid(format!("depth {} m does not fit u16 storage", v / U16_DEPTH_SCALE)));
    }
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_bitwise() {
        let t = Tensor::from_fn([3, 4, 5], |i| (i[0] as f64 + 0.1).powf(i[1] as f64 - 1.7) * (i[2] as f64).sin());
        let (dt, back) = decode(&encode(&t, DType::F64).unwrap()).unwrap();
        assert_eq!(dt, DType::F64);
        assert_eq!(back.shape(), t.shape());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn empty_is_bad_magic() {
        match decode(&[]) {
            Err(Error::Format { offset: 0, msg }) => assert_eq!(msg, "bad magic"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn u16_depth_convention() {
        let raw = Tensor::new([1], vec![256.0]).unwrap();
        let (dt, t) = decode(&encode(&raw, DType::U16).unwrap()).unwrap();
        assert_eq!(depth_from_raw(dt, t).unwrap().data(), &[1.0]);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&Tensor::ones([2, 2]), DType::F32).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::Format { offset, .. }) if offset == bytes.len()));
        let mut bad = bytes.clone();
        bad[16] = 9;
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn integer_range_checked() {
        assert!(encode(&Tensor::full([1], 256.0), DType::U8).is_err());
        assert!(encode(&Tensor::full([1], 1.5), DType::U16).is_err());
    }
}
