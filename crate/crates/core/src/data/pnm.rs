//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.
//!
//! The reader accepts any whitespace and `#` comments between header fields
//! and exactly one whitespace byte after the maxval. The writer always emits
//! `P5\n{w} {h}\n255\n` or `P6\n{w} {h}\n255\n` followed by the raw bytes.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::data::Image;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PnmError {
    #[error("not a binary PGM/PPM file (expected P5 or P6)")]
    BadMagic,
    #[error("malformed PNM header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0}; only 255 is supported")]
    UnsupportedMaxval(u32),
    #[error("truncated PNM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<u32, PnmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::BadHeader(format!("missing {field}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PnmError::BadHeader(format!("{field} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image, PnmError> {
    let c = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(PnmError::BadMagic),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PnmError::BadHeader("no separator after magic".into()));
    }
    let w = cur.number("width")? as usize;
    let h = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(PnmError::BadHeader(format!("zero dimension {w}x{h}")));
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(PnmError::BadHeader("no whitespace after maxval".into())),
        None => return Err(PnmError::Truncated { expected: w * h * c, found: 0 }),
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| PnmError::BadHeader(format!("dimensions {w}x{h} overflow")))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(PnmError::Truncated { expected, found: payload.len() });
    }
    let data = payload[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Image::from_raw(h, w, c, data))
}

/// Quantizes to 8 bits, rounding half away from zero.
pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.c() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.w(), img.h()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn load_image(path: impl AsRef<Path>) -> crate::Result<Image> {
    Ok(decode(&fs::read(path)?)?)
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> crate::Result<()> {
    fs::write(path, encode(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_all_byte_values() {
        let mut bytes = b"P6\n16 16\n255\n".to_vec();
        bytes.extend((0..=255u8).flat_map(|b| [b, 255 - b, b / 2]));
        let img = decode(&bytes).unwrap();
        assert_eq!((img.h(), img.w(), img.c()), (16, 16, 3));
        assert_eq!(img.data()[3 * 255], 1.0);
        assert_eq!(encode(&img), bytes);
    }

    #[test]
    fn header_comments_and_spacing() {
        let bytes = b"P5 # gray\n2\t# w\n 1\n255 \x00\xff";
        let img = decode(bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn malformed() {
        let cases: &[(&[u8], fn(&PnmError) -> bool)] = &[
            (b"P3\n1 1\n255\n0 0 0", |e| matches!(e, PnmError::BadMagic)),
            (b"", |e| matches!(e, PnmError::BadMagic)),
            (b"P5\n1\n255\n\x00", |e| matches!(e, PnmError::BadHeader(_))),
            (b"P5\n0 1\n255\n", |e| matches!(e, PnmError::BadHeader(_))),
            (b"P5\n1 1\n65535\n\x00\x00", |e| matches!(e, PnmError::UnsupportedMaxval(65535))),
            (b"P6\n2 2\n255\n\x00\x00\x00", |e| matches!(e, PnmError::Truncated { expected: 12, found: 3 })),
            (b"P5\n1 1\n255", |e| matches!(e, PnmError::Truncated { .. })),
            (b"P5\n99999999999 1\n255\n", |e| matches!(e, PnmError::BadHeader(_))),
            (b"P5x1 1\n255\n\x00", |e| matches!(e, PnmError::BadHeader(_))),
        ];
        for (bytes, check) in cases {
            let err = decode(bytes).unwrap_err();
            assert!(check(&err), "{:?} -> {err:?}", String::from_utf8_lossy(bytes));
        }
    }
}
