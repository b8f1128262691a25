//! 8-bit rasters and the general-purpose image operations: tiling and
//! merging, cropping, scaling and 3×3 filtering.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RasterError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("rectangle {x},{y} {width}x{height} is outside a {image_width}x{image_height} image")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32, image_width: u32, image_height: u32 },
    #[error("inconsistent tile set: {0}")]
    InconsistentTiles(&'static str),
}

/// Ground sample distance in meters per pixel, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gsd {
    pub x: f64,
    pub y: f64,
}

impl Gsd {
    pub fn uniform(m: f64) -> Self {
        Self { x: m, y: m }
    }

    pub fn is_uniform(&self) -> bool {
        self.x == self.y
    }
}

/// Row-major, channel-interleaved 8-bit image with 1 to 4 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
    pub gsd: Option<Gsd>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidGeometry("width and height must be at least 1"));
        }
        if !(1..=4).contains(&channels) {
            return Err(RasterError::InvalidGeometry("channels must be 1 to 4"));
        }
        if pixels.len() != width as usize * height as usize * channels as usize {
            return Err(RasterError::InvalidGeometry("pixel buffer length does not match dimensions"));
        }
        Ok(Self { width, height, channels, pixels, gsd: None })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, RasterError> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len])
    }

    pub fn with_gsd(mut self, gsd: Gsd) -> Self {
        self.gsd = Some(gsd);
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    /// Channel values of pixel `(x, y)`.
    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.pixels[o..o + self.channels as usize]
    }

    fn pixel_clamped(&self, x: i64, y: i64) -> &[u8] {
        let cx = x.clamp(0, self.width as i64 - 1) as u32;
        let cy = y.clamp(0, self.height as i64 - 1) as u32;
        self.pixel(cx, cy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    None,
    EdgeReplicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row: u32,
    pub col: u32,
    pub raster: Raster,
    /// Set when part of the tile lies past the source edge and was filled by
    /// edge replication.
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSet {
    pub tiles: Vec<Tile>,
    pub tile_size: u32,
    pub stride: u32,
    pub source_dims: (u32, u32),
    pub padding: Padding,
}

impl TileSet {
    /// Grid shape `(rows, cols)` implied by the source dims and stride.
    pub fn grid(&self) -> (u32, u32) {
        grid_shape(self.source_dims, self.stride)
    }
}

fn grid_shape((w, h): (u32, u32), stride: u32) -> (u32, u32) {
    (h.div_ceil(stride), w.div_ceil(stride))
}

/// Splits `img` into `tile_size`-square tiles whose origins are every
/// `stride` pixels along both axes while the origin stays inside the image.
/// Tiles running past an edge are completed by edge replication.
pub fn tile(img: &Raster, tile_size: u32, stride: u32) -> Result<TileSet, RasterError> {
    if tile_size == 0 || stride == 0 {
        return Err(RasterError::InvalidGeometry("tile size and stride must be at least 1"));
    }
    if stride > tile_size {
        return Err(RasterError::InvalidGeometry("stride must not exceed tile size"));
    }
    if tile_size > img.width.max(img.height) {
        return Err(RasterError::InvalidGeometry("tile size exceeds the larger image dimension"));
    }
    let (rows, cols) = grid_shape((img.width, img.height), stride);
    let ch = img.channels as usize;
    let mut tiles = Vec::with_capacity(rows as usize * cols as usize);
    let mut any_padded = false;
    for row in 0..rows {
        for col in 0..cols {
            let (ox, oy) = (col * stride, row * stride);
            let padded = ox + tile_size > img.width || oy + tile_size > img.height;
            any_padded |= padded;
            let mut pixels = Vec::with_capacity(tile_size as usize * tile_size as usize * ch);
            for y in 0..tile_size {
                let sy = (oy + y).min(img.height - 1);
                for x in 0..tile_size {
                    let sx = (ox + x).min(img.width - 1);
                    pixels.extend_from_slice(img.pixel(sx, sy));
                }
            }
            let mut raster = Raster::new(tile_size, tile_size, img.channels, pixels)?;
            raster.gsd = img.gsd;
            tiles.push(Tile { row, col, raster, padded });
        }
    }
    Ok(TileSet {
        tiles,
        tile_size,
        stride,
        source_dims: (img.width, img.height),
        padding: if any_padded { Padding::EdgeReplicate } else { Padding::None },
    })
}

/// Reassembles a tile set into a raster of the source dimensions. Where
/// tiles overlap, the tile with the smallest `(row, col)` supplies the pixel.
/// Replicated padding is discarded.
pub fn merge(ts: &TileSet) -> Result<Raster, RasterError> {
    let (w, h) = ts.source_dims;
    if w == 0 || h == 0 || ts.tile_size == 0 || ts.stride == 0 || ts.stride > ts.tile_size {
        return Err(RasterError::InconsistentTiles("invalid grid parameters"));
    }
    let (rows, cols) = ts.grid();
    let Some(first) = ts.tiles.first() else {
        return Err(RasterError::InconsistentTiles("no tiles"));
    };
    let channels = first.raster.channels;
    let mut seen = BTreeSet::new();
    for t in &ts.tiles {
        if t.row >= rows || t.col >= cols {
            return Err(RasterError::InconsistentTiles("tile index outside the grid"));
        }
        if !seen.insert((t.row, t.col)) {
            return Err(RasterError::InconsistentTiles("duplicate tile index"));
        }
        if t.raster.width != ts.tile_size || t.raster.height != ts.tile_size || t.raster.channels != channels {
            return Err(RasterError::InconsistentTiles("tile dimensions differ from the declared tile size"));
        }
    }
    if seen.len() != rows as usize * cols as usize {
        return Err(RasterError::InconsistentTiles("missing tile index"));
    }

    let mut order: Vec<&Tile> = ts.tiles.iter().collect();
    order.sort_by_key(|t| (t.row, t.col));

    let ch = channels as usize;
    let mut pixels = vec![0u8; w as usize * h as usize * ch];
    let mut written = vec![false; w as usize * h as usize];
    for t in order {
        let (ox, oy) = (t.col * ts.stride, t.row * ts.stride);
        let xmax = (ox + ts.tile_size).min(w);
        let ymax = (oy + ts.tile_size).min(h);
        for y in oy..ymax {
            for x in ox..xmax {
                let idx = y as usize * w as usize + x as usize;
                if written[idx] {
                    continue;
                }
                written[idx] = true;
                pixels[idx * ch..idx * ch + ch].copy_from_slice(t.raster.pixel(x - ox, y - oy));
            }
        }
    }
    let mut out = Raster::new(w, h, channels, pixels)?;
    out.gsd = first.raster.gsd;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Exact sub-raster; gsd is carried over.
pub fn crop(img: &Raster, rect: Rect) -> Result<Raster, RasterError> {
    if rect.width == 0 || rect.height == 0 {
        return Err(RasterError::InvalidGeometry("crop must be at least 1x1"));
    }
    let fits_x = rect.x.checked_add(rect.width).is_some_and(|e| e <= img.width);
    let fits_y = rect.y.checked_add(rect.height).is_some_and(|e| e <= img.height);
    if !fits_x || !fits_y {
        return Err(RasterError::OutOfBounds {
            x: rect.x,
            y: rect.y,
            width: rect.width,
            height: rect.height,
            image_width: img.width,
            image_height: img.height,
        });
    }
    let ch = img.channels as usize;
    let mut pixels = Vec::with_capacity(rect.width as usize * rect.height as usize * ch);
    for y in rect.y..rect.y + rect.height {
        let start = img.offset(rect.x, y);
        pixels.extend_from_slice(&img.pixels[start..start + rect.width as usize * ch]);
    }
    let mut out = Raster::new(rect.width, rect.height, img.channels, pixels)?;
    out.gsd = img.gsd;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMethod {
    Nearest,
    Bilinear,
}

/// Resamples to exactly `width`×`height` using pixel-centre alignment.
/// The gsd of each axis is multiplied by `source / target`.
pub fn scale(img: &Raster, width: u32, height: u32, method: ScaleMethod) -> Result<Raster, RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::InvalidGeometry("target dimensions must be at least 1"));
    }
    let ch = img.channels as usize;
    let mut pixels = Vec::with_capacity(width as usize * height as usize * ch);
    match method {
        ScaleMethod::Nearest => {
            let map = |d: u32, src: u32, dst: u32| ((2 * d as u64 + 1) * src as u64 / (2 * dst as u64)) as u32;
            for y in 0..height {
                let sy = map(y, img.height, height).min(img.height - 1);
                for x in 0..width {
                    let sx = map(x, img.width, width).min(img.width - 1);
                    pixels.extend_from_slice(img.pixel(sx, sy));
                }
            }
        }
        ScaleMethod::Bilinear => {
            let coord = |d: u32, src: u32, dst: u32| {
                let s = (d as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
                let s = s.clamp(0.0, (src - 1) as f64);
                let i0 = libm::floor(s) as u32;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            };
            for y in 0..height {
                let (y0, y1, fy) = coord(y, img.height, height);
                for x in 0..width {
                    let (x0, x1, fx) = coord(x, img.width, width);
                    for c in 0..ch {
                        let p = |xx, yy| img.pixel(xx, yy)[c] as f64;
                        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                        let v = top * (1.0 - fy) + bottom * fy;
                        pixels.push(libm::round(v).clamp(0.0, 255.0) as u8);
                    }
                }
            }
        }
    }
    let mut out = Raster::new(width, height, img.channels, pixels)?;
    out.gsd =
        img.gsd.map(|g| Gsd { x: g.x * img.width as f64 / width as f64, y: g.y * img.height as f64 / height as f64 });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Uniform 3×3 mean, rounded to nearest.
    Box3,
    /// Per-channel 3×3 median.
    Median3,
    /// Identity plus Laplacian: centre 5, 4-neighbours −1.
    Sharpen3,
}

/// 3×3 neighbourhood filter with edge-replicated borders.
pub fn filter(img: &Raster, kind: FilterKind) -> Raster {
    let ch = img.channels as usize;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    let mut window = [0u8; 9];
    for y in 0..img.height as i64 {
        for x in 0..img.width as i64 {
            for c in 0..ch {
                let v = match kind {
                    FilterKind::Box3 => {
                        let mut sum = 0u32;
                        for dy in -1..=1 {
                            for dx in -1..=1 {
                                sum += img.pixel_clamped(x + dx, y + dy)[c] as u32;
                            }
                        }
                        // 9 is odd, so sum/9 is never exactly half-way
                        ((sum + 4) / 9) as u8
                    }
                    FilterKind::Median3 => {
                        let mut k = 0;
                        for dy in -1..=1 {
                            for dx in -1..=1 {
                                window[k] = img.pixel_clamped(x + dx, y + dy)[c];
                                k += 1;
                            }
                        }
                        window.sort_unstable();
                        window[4]
                    }
                    FilterKind::Sharpen3 => {
                        let at = |dx: i64, dy: i64| img.pixel_clamped(x + dx, y + dy)[c] as i32;
                        let v = 5 * at(0, 0) - at(0, -1) - at(0, 1) - at(-1, 0) - at(1, 0);
                        v.clamp(0, 255) as u8
                    }
                };
                pixels.push(v);
            }
        }
    }
    Raster { width: img.width, height: img.height, channels: img.channels, pixels, gsd: img.gsd }
}
