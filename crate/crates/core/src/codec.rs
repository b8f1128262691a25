//! Lossless byte encodings for [`Raster`]: binary PGM/PPM and a headered raw
//! dump. PNG lives in the std crate.

use alloc::format;
use alloc::vec::Vec;
use core::str;

use thiserror::Error;

use crate::raster::{Gsd, Raster};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("{channels}-channel rasters cannot be written as {format}")]
    UnsupportedConversion { channels: u8, format: &'static str },
    #[error("malformed {format} data: {reason}")]
    Malformed { format: &'static str, reason: &'static str },
}

const RAW_MAGIC: &[u8] = b"GEORAW1";

/// `P5` for one channel, `P6` for three. Other channel counts are rejected.
pub fn encode_pnm(img: &Raster) -> Result<Vec<u8>, CodecError> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        channels => return Err(CodecError::UnsupportedConversion { channels, format: "pgm/ppm" }),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn token(&mut self) -> Option<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| str::from_utf8(&self.bytes[start..self.pos]).ok()).flatten()
    }

    fn number<T: str::FromStr>(&mut self, format: &'static str) -> Result<T, CodecError> {
        self.token().and_then(|t| t.parse().ok()).ok_or(CodecError::Malformed { format, reason: "bad header number" })
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Raster, CodecError> {
    const F: &str = "pgm/ppm";
    let mut h = Header { bytes, pos: 0 };
    let channels = match h.token() {
        Some("P5") => 1,
        Some("P6") => 3,
        _ => return Err(CodecError::Malformed { format: F, reason: "expected P5 or P6 magic" }),
    };
    let width: u32 = h.number(F)?;
    let height: u32 = h.number(F)?;
    let maxval: u32 = h.number(F)?;
    if maxval != 255 {
        return Err(CodecError::Malformed { format: F, reason: "only 8-bit maxval 255 is supported" });
    }
    // exactly one whitespace byte separates the header from the samples
    let data = bytes.get(h.pos + 1..).ok_or(CodecError::Malformed { format: F, reason: "truncated" })?;
    let len = width as usize * height as usize * channels as usize;
    if data.len() != len {
        return Err(CodecError::Malformed { format: F, reason: "sample count does not match header" });
    }
    Raster::new(width, height, channels, data.to_vec())
        .map_err(|_| CodecError::Malformed { format: F, reason: "invalid dimensions" })
}

/// `GEORAW1 <w> <h> <channels> <gsd_x|-> <gsd_y|->\n` followed by the pixel
/// buffer. Preserves gsd, unlike PNM.
pub fn encode_raw(img: &Raster) -> Vec<u8> {
    let gsd = match img.gsd {
        Some(g) => format!("{:?} {:?}", g.x, g.y),
        None => "- -".into(),
    };
    let mut out = format!(
        "{} {} {} {} {gsd}\n",
        str::from_utf8(RAW_MAGIC).unwrap_or_default(),
        img.width(),
        img.height(),
        img.channels()
    )
    .into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<Raster, CodecError> {
    const F: &str = "raw";
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(CodecError::Malformed { format: F, reason: "missing header line" })?;
    let mut h = Header { bytes: &bytes[..nl], pos: 0 };
    if h.token().map(str::as_bytes) != Some(RAW_MAGIC) {
        return Err(CodecError::Malformed { format: F, reason: "bad magic" });
    }
    let width: u32 = h.number(F)?;
    let height: u32 = h.number(F)?;
    let channels: u8 = h.number(F)?;
    let gx = h.token();
    let gy = h.token();
    let gsd = match (gx, gy) {
        (Some("-"), Some("-")) => None,
        (Some(x), Some(y)) => Some(Gsd {
            x: x.parse().map_err(|_| CodecError::Malformed { format: F, reason: "bad gsd" })?,
            y: y.parse().map_err(|_| CodecError::Malformed { format: F, reason: "bad gsd" })?,
        }),
        _ => return Err(CodecError::Malformed { format: F, reason: "missing gsd fields" }),
    };
    let mut img = Raster::new(width, height, channels, bytes[nl + 1..].to_vec())
        .map_err(|_| CodecError::Malformed { format: F, reason: "pixel buffer does not match header" })?;
    img.gsd = gsd;
    Ok(img)
}

/// True if `bytes` start like a PNM or raw encoding handled here.
pub fn sniff(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        Some("pnm")
    } else if bytes.starts_with(RAW_MAGIC) {
        Some("raw")
    } else {
        None
    }
}
