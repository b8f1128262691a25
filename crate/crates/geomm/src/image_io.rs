//! Reading and writing rasters as PNG, binary PGM/PPM or the raw format.
//!
//! PNG files keep the ground sample distance in a `tEXt` chunk so every
//! supported format round-trips losslessly.

use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use geomm_core::codec::{self, CodecError};
use geomm_core::{Gsd, Raster};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";
const GSD_KEYWORD: &str = "geomm:gsd";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterFormat {
    Png,
    /// PGM for one channel, PPM for three.
    Pnm,
    Raw,
}

impl RasterFormat {
    pub fn extension(self, channels: u8) -> &'static str {
        match self {
            RasterFormat::Png => "png",
            RasterFormat::Pnm if channels == 1 => "pgm",
            RasterFormat::Pnm => "ppm",
            RasterFormat::Raw => "raw",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl FromStr for RasterFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "png" => Ok(RasterFormat::Png),
            "pnm" | "pgm" | "ppm" => Ok(RasterFormat::Pnm),
            "raw" => Ok(RasterFormat::Raw),
            other => Err(format!("unknown raster format `{other}`")),
        }
    }
}

impl fmt::Display for RasterFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RasterFormat::Png => "png",
            RasterFormat::Pnm => "pnm",
            RasterFormat::Raw => "raw",
        })
    }
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read or write `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("png: {0}")]
    Png(String),
    #[error("unrecognized image encoding")]
    UnknownFormat,
}

fn png_color(channels: u8) -> png::ColorType {
    match channels {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        _ => png::ColorType::Rgba,
    }
}

fn encode_png(img: &Raster) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width(), img.height());
        enc.set_color(png_color(img.channels()));
        enc.set_depth(png::BitDepth::Eight);
        if let Some(g) = img.gsd {
            enc.add_text_chunk(GSD_KEYWORD.into(), format!("{:?} {:?}", g.x, g.y))
                .map_err(|e| ImageError::Png(e.to_string()))?;
        }
        let mut w = enc.write_header().map_err(|e| ImageError::Png(e.to_string()))?;
        w.write_image_data(img.pixels()).map_err(|e| ImageError::Png(e.to_string()))?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<Raster, ImageError> {
    let png_err = |e: png::DecodingError| ImageError::Png(e.to_string());
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(png_err)?;
    let gsd = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == GSD_KEYWORD)
        .and_then(|t| parse_gsd(&t.text));
    let size = reader.output_buffer_size().ok_or_else(|| ImageError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Png(format!("{:?}-bit samples are not supported", info.bit_depth)));
    }
    let channels = info.color_type.samples() as u8;
    let row = info.width as usize * channels as usize;
    let mut pixels = Vec::with_capacity(row * info.height as usize);
    for line in buf.chunks(info.line_size).take(info.height as usize) {
        pixels.extend_from_slice(&line[..row]);
    }
    let img = Raster::new(info.width, info.height, channels, pixels).map_err(|e| ImageError::Png(e.to_string()))?;
    Ok(match gsd {
        Some(g) => img.with_gsd(g),
        None => img,
    })
}

fn parse_gsd(s: &str) -> Option<Gsd> {
    let mut it = s.split_whitespace().map(str::parse::<f64>);
    match (it.next(), it.next()) {
        (Some(Ok(x)), Some(Ok(y))) => Some(Gsd { x, y }),
        _ => None,
    }
}

/// Encodes `img` in `target`. PNM only takes one or three channels.
pub fn convert_format(img: &Raster, target: RasterFormat) -> Result<Vec<u8>, ImageError> {
    match target {
        RasterFormat::Png => encode_png(img),
        RasterFormat::Pnm => Ok(codec::encode_pnm(img)?),
        RasterFormat::Raw => Ok(codec::encode_raw(img)),
    }
}

/// Decodes any supported encoding, detected from the leading bytes.
pub fn decode(bytes: &[u8]) -> Result<Raster, ImageError> {
    if bytes.starts_with(PNG_MAGIC) {
        return decode_png(bytes);
    }
    match codec::sniff(bytes) {
        Some("pnm") => Ok(codec::decode_pnm(bytes)?),
        Some("raw") => Ok(codec::decode_raw(bytes)?),
        _ => Err(ImageError::UnknownFormat),
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, ImageError> {
    fs::read(path).map_err(|source| ImageError::Io { path: path.into(), source })
}

pub fn read_raster(path: &Path) -> Result<Raster, ImageError> {
    decode(&read_bytes(path)?)
}

/// Writes `img` to `path`, creating parent directories.
pub fn write_raster(path: &Path, img: &Raster, format: RasterFormat) -> Result<(), ImageError> {
    let bytes = convert_format(img, format)?;
    write_file(path, &bytes)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ImageError> {
    let io = |source| ImageError::Io { path: path.into(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    // Unique sibling name, then rename: concurrent writers of the same
    // output never expose a truncated file to a reader.
    static SEQ: AtomicU64 = AtomicU64::new(0);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".{}-{}.tmp", std::process::id(), SEQ.fetch_add(1, Ordering::Relaxed)));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}
