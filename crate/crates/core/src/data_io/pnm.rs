//! Binary PGM (`P5`) and PPM (`P6`) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn fmt_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { offset, msg: msg.into() }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn skip_space_and_comments(b: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < b.len() && b[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < b.len() && b[pos] == b'#' {
            while pos < b.len() && b[pos] != b'\n' && b[pos] != b'\r' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(b: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let start = skip_space_and_comments(b, pos);
    let mut end = start;
    while end < b.len() && b[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(fmt_err(start, format!("expected {what}")));
    }
    if end < b.len() && !b[end].is_ascii_whitespace() && b[end] != b'#' {
        return Err(fmt_err(end, format!("unexpected byte after {what}")));
    }
    let v = std::str::from_utf8(&b[start..end])
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| fmt_err(start, format!("{what} out of range")))?;
    Ok((v, end))
}

fn parse_header(b: &[u8]) -> Result<Header> {
    let channels = match b.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(fmt_err(0, "bad magic: expected P5 or P6")),
    };
    let (width, pos) = read_uint(b, 2, "width")?;
    let (height, pos) = read_uint(b, pos, "height")?;
    let (maxval, pos) = read_uint(b, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(fmt_err(pos, "zero image dimension"));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(fmt_err(pos, format!("unsupported maxval {maxval}")));
    }
    match b.get(pos) {
        Some(c) if c.is_ascii_whitespace() => {}
        _ => return Err(fmt_err(pos, "missing whitespace before raster")),
    }
    Ok(Header { channels, width, height, maxval, data_start: pos + 1 })
}

/// Decodes a binary PNM into `[H, W, C]` scaled to `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes)?;
    let bps = if h.maxval > 255 { 2 } else { 1 };
    let n = h
        .width
        .checked_mul(h.height)
        .and_then(|p| p.checked_mul(h.channels))
        .ok_or_else(|| fmt_err(2, "image dimensions overflow"))?;
    let need = n.checked_mul(bps).ok_or_else(|| fmt_err(2, "image dimensions overflow"))?;
    let raster = &bytes[h.data_start..];
    if raster.len() < need {
        return Err(fmt_err(bytes.len(), format!("truncated raster: need {need} bytes, have {}", raster.len())));
    }
    if raster.len() > need {
        return Err(fmt_err(h.data_start + need, format!("{} trailing bytes", raster.len() - need)));
    }
    let max = h.maxval as f64;
    let mut data = Vec::with_capacity(n);
    if bps == 1 {
        data.extend(raster.iter().map(|&v| v as f64 / max));
    } else {
        for (i, c) in raster.chunks_exact(2).enumerate() {
            let v = u16::from_be_bytes([c[0], c[1]]) as usize;
            if v > h.maxval {
                return Err(fmt_err(h.data_start + 2 * i, format!("sample {v} exceeds maxval")));
            }
            data.push(v as f64 / max);
        }
    }
    Tensor::new([h.height, h.width, h.channels], data)
}

pub fn read_image_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_pnm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Encodes `[H, W, 1]` as P5 or `[H, W, 3]` as P6 with maxval 255. Values
/// are clamped to `[0, 1]` and rounded.
pub fn encode_pnm(t: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = match t.shape() {
        &[h, w, c] if c == 1 || c == 3 => (h, w, c),
        other => return Err(Error::invalid(format!("PNM needs [H,W,1] or [H,W,3], got {other:?}"))),
    };
    t.check_finite("encode_pnm")?;
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_image_pnm(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(t)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_pixel() {
        let mut b = b"P6\n1 1\n255\n".to_vec();
        b.extend([255, 0, 0]);
        assert_eq!(decode_pnm(&b).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_p5_with_comments() {
        let mut b = b"P5 # gray\n# size next\n3 2\n255\n".to_vec();
        b.extend([0; 6]);
        let t = decode_pnm(&b).unwrap();
        assert_eq!(t.shape(), &[2, 3, 1]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sixteen_bit() {
        let mut b = b"P5\n1 1\n65535\n".to_vec();
        b.extend(32768u16.to_be_bytes());
        let v = decode_pnm(&b).unwrap().data()[0];
        assert_eq!(v, 32768.0 / 65535.0);
        assert!((v - 0.500_007_63).abs() < 1e-8);
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_pnm(b"P3\n1 1\n255\n").is_err());
        assert!(decode_pnm(b"P5\n1 x\n255\n\0").is_err());
        assert!(decode_pnm(b"P5\n1 1\n100\n\0").is_err());
        assert!(decode_pnm(b"P5\n2 1\n255\n\0").is_err());
        assert!(decode_pnm(b"P5\n1 1\n255\n\0\0").is_err());
    }

    #[test]
    fn encode_round_trip() {
        let t = Tensor::from_fn([2, 3, 3], |i| ((i[0] * 9 + i[1] * 3 + i[2]) * 13 % 256) as f64 / 255.0);
        let back = decode_pnm(&encode_pnm(&t).unwrap()).unwrap();
        assert!(back.max_abs_diff(&t) < 1e-12);
    }
}
