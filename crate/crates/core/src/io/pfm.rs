//! Portable Float Map, grayscale variant only.
//!
//! Layout: `Pf\n{width} {height}\n-1.000000\n` followed by rows from the
//! bottom of the image to the top, each a run of little-endian `f32`.
//! A positive scale marks a big-endian payload and is accepted on read.
//! Masked rasters store invalid pixels as negative infinity.

use std::path::Path;

use super::IoError;
use crate::raster::{MaskedRaster, Raster};

/// Sentinel written for invalid pixels of a masked raster.
pub const INVALID_SENTINEL: f32 = f32::NEG_INFINITY;

pub fn encode_pfm(raster: &Raster<f32>) -> Vec<u8> {
    let (w, h) = raster.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.000000\n").into_bytes();
    out.reserve(4 * w * h);
    for y in (0..h).rev() {
        for &v in raster.row(y) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn token(&mut self) -> Result<&str, IoError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(IoError::MalformedHeader("header ends early".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| IoError::MalformedHeader("non-ASCII header".into()))
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Raster<f32>, IoError> {
    let mut cur = Cursor { bytes, pos: 0 };
    match cur.token()? {
        "Pf" => {}
        "PF" => return Err(IoError::UnsupportedVariant("PF (three-channel)".into())),
        other => return Err(IoError::MalformedHeader(format!("bad magic {other:?}"))),
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| IoError::MalformedHeader(format!("bad dimension {s:?}")))
    };
    let w = dim(cur.token()?)?;
    let h = dim(cur.token()?)?;
    let scale: f64 = {
        let s = cur.token()?;
        s.parse()
            .ok()
            .filter(|v: &f64| *v != 0.0 && v.is_finite())
            .ok_or_else(|| IoError::MalformedHeader(format!("bad scale {s:?}")))?
    };
    // Exactly one whitespace byte separates the header from the payload.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(IoError::MalformedHeader("missing separator after scale".into()));
    }
    let payload = &bytes[cur.pos + 1..];
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| IoError::MalformedHeader("dimensions overflow".into()))?;
    if payload.len() < expected {
        return Err(IoError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; w * h];
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row_from_bottom, x) = (i / w, i % w);
        data[(h - 1 - row_from_bottom) * w + x] = v;
    }
    Ok(Raster::from_vec(w, h, data).expect("size"))
}

pub fn write_pfm(path: impl AsRef<Path>, raster: &Raster<f32>) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(raster)).map_err(|e| IoError::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Raster<f32>, IoError> {
    let path = path.as_ref();
    decode_pfm(&std::fs::read(path).map_err(|e| IoError::io(path, e))?)
}

pub fn masked_to_sentinel(m: &MaskedRaster) -> Raster<f32> {
    let (w, h) = m.dims();
    Raster::from_fn(w, h, |x, y| m.at(x, y).unwrap_or(INVALID_SENTINEL))
}

/// Every pixel equal to the sentinel becomes invalid.
pub fn sentinel_to_masked(r: &Raster<f32>) -> MaskedRaster {
    let valid = r.map(|v| v != INVALID_SENTINEL);
    let values = r.map(|v| if v == INVALID_SENTINEL { 0.0 } else { v });
    MaskedRaster::new(values, valid)
}

pub fn write_pfm_masked(path: impl AsRef<Path>, m: &MaskedRaster) -> Result<(), IoError> {
    write_pfm(path, &masked_to_sentinel(m))
}

pub fn read_pfm_masked(path: impl AsRef<Path>) -> Result<MaskedRaster, IoError> {
    Ok(sentinel_to_masked(&read_pfm(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pixel_layout() {
        let bytes = encode_pfm(&Raster::filled(1, 1, 0.5));
        assert_eq!(&bytes[..17], b"Pf\n1 1\n-1.000000\n");
        assert_eq!(&bytes[17..], &[0x00, 0x00, 0x00, 0x3F]);
    }

    #[test]
    fn rows_stored_bottom_up() {
        let r = Raster::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_pfm(&r);
        let payload: Vec<f32> = bytes[17..].chunks(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        assert_eq!(payload, vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn big_endian_accepted() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&0.25f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().get(0, 0), 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(decode_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0"), Err(IoError::UnsupportedVariant(_))));
        assert!(matches!(decode_pfm(b"P5\n1 1\n255\n\0"), Err(IoError::MalformedHeader(_))));
        assert!(matches!(decode_pfm(b"Pf\n0 1\n-1.0\n"), Err(IoError::MalformedHeader(_))));
        assert!(matches!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0\0\0"), Err(IoError::Truncated { expected: 16, found: 4 })));
        assert!(matches!(decode_pfm(b"Pf\n2 2"), Err(IoError::MalformedHeader(_))));
    }

    #[test]
    fn sentinel_marks_invalid() {
        let mut m = MaskedRaster::fully_valid(Raster::filled(3, 2, 7.0));
        m.valid.set(1, 1, false);
        let back = sentinel_to_masked(&decode_pfm(&encode_pfm(&masked_to_sentinel(&m))).unwrap());
        assert_eq!(back.at(1, 1), None);
        assert_eq!(back.at(0, 1), Some(7.0));
        assert_eq!(back.valid_count(), 5);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, bits in prop::collection::vec(any::<u32>(), 64), sentinel_at in 0usize..64) {
            let mut data: Vec<f32> = bits[..w * h].iter().map(|&b| f32::from_bits(b)).collect();
            data[sentinel_at % (w * h)] = INVALID_SENTINEL;
            let r = Raster::from_vec(w, h, data.clone()).unwrap();
            let back = decode_pfm(&encode_pfm(&r)).unwrap();
            prop_assert_eq!(back.dims(), (w, h));
            let got: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
        }
    }
}
