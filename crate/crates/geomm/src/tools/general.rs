//! General toolkit: tiling and merging, cropping, scaling, filtering, format
//! conversion, area counting and box counting.
//!
//! Image tools read `image_ref`, write `output_ref` (or a tile directory)
//! and return an `image_ref` payload describing what was written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use geomm_core::raster::{self, FilterKind, Padding, Rect, ScaleMethod, Tile};
use geomm_core::{Detections, Mask, Raster, TileSet};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{opt_f64, opt_text, opt_u32, parse, path, text, u32_arg};
use crate::image_io::{self, RasterFormat};
use crate::prompts;
use crate::protocol::{
    Arguments, Binding, Capability, ContentBlock, OutputKind, Registry, RegistryError, SemanticType as T,
    ToolDescriptor, ToolOutput,
};

pub const PATCH_TILING: &str = "patch_tiling";
pub const PATCH_MERGING: &str = "patch_merging";
pub const CROPPING: &str = "cropping";
pub const SCALING: &str = "scaling";
pub const FILTERING: &str = "filtering";
pub const FORMAT_CONVERSION: &str = "format_conversion";
pub const AREA_COUNTING: &str = "area_counting";
pub const BOX_COUNTING: &str = "box_counting";
pub const SUPER_RESOLUTION: &str = "super_resolution";

/// Names of the natively implemented general tools.
pub const NATIVE_TOOLS: [&str; 8] =
    [PATCH_TILING, PATCH_MERGING, CROPPING, SCALING, FILTERING, FORMAT_CONVERSION, AREA_COUNTING, BOX_COUNTING];

/// Tile directory index written by `patch_tiling` and read by `patch_merging`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub tile_size: u32,
    pub stride: u32,
    pub source_dims: (u32, u32),
    pub padding: Padding,
    pub tiles: Vec<TileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub row: u32,
    pub col: u32,
    /// File name relative to the manifest.
    pub file: String,
    pub padded: bool,
}

pub const TILE_MANIFEST: &str = "manifest.json";

fn general(name: &str, description: &str, output: OutputKind) -> ToolDescriptor {
    ToolDescriptor::new(name, description, Capability::General, output)
}

pub fn descriptors() -> Vec<ToolDescriptor> {
    vec![
        general(PATCH_TILING, prompts::PATCH_TILING_AND_MERGING, OutputKind::ImageRef)
            .field("image_ref", T::ImageRef, true)
            .field("tile_size", T::Integer, true)
            .field("stride", T::Integer, false)
            .field("output_dir", T::Path, true)
            .field("format", T::Text, false),
        general(PATCH_MERGING, prompts::PATCH_TILING_AND_MERGING, OutputKind::ImageRef)
            .field("manifest_ref", T::Path, true)
            .field("output_ref", T::Path, true),
        general(CROPPING, prompts::CROPPING, OutputKind::ImageRef)
            .field("image_ref", T::ImageRef, true)
            .field("x", T::Integer, true)
            .field("y", T::Integer, true)
            .field("width", T::Integer, true)
            .field("height", T::Integer, true)
            .field("output_ref", T::Path, true),
        general(SCALING, prompts::SCALING, OutputKind::ImageRef)
            .field("image_ref", T::ImageRef, true)
            .field("width", T::Integer, true)
            .field("height", T::Integer, true)
            .field("method", T::Text, false)
            .field("output_ref", T::Path, true),
        general(FILTERING, prompts::FILTERING, OutputKind::ImageRef)
            .field("image_ref", T::ImageRef, true)
            .field("kind", T::Text, true)
            .field("output_ref", T::Path, true),
        general(FORMAT_CONVERSION, prompts::FORMAT_CONVERSION, OutputKind::ImageRef)
            .field("image_ref", T::ImageRef, true)
            .field("target", T::Text, true)
            .field("output_ref", T::Path, true),
        general(AREA_COUNTING, prompts::AREA_COUNTING, OutputKind::Text)
            .field("mask_ref", T::MaskRef, true)
            .field("class", T::Text, true)
            .field("gsd", T::Number, false),
        general(BOX_COUNTING, prompts::BOX_COUNTING, OutputKind::Text).field("detections", T::Detections, true).field(
            "class",
            T::Text,
            false,
        ),
    ]
}

/// Descriptor for super-resolution, which has no native implementation and
/// must be bound to a remote backend.
pub fn super_resolution_descriptor() -> ToolDescriptor {
    general(SUPER_RESOLUTION, prompts::SUPER_RESOLUTION, OutputKind::ImageRef)
        .field("image_ref", T::ImageRef, true)
        .field("factor", T::Integer, false)
        .field("output_ref", T::Path, true)
}

type Handler = fn(&Arguments) -> Result<ToolOutput, String>;

fn handler_for(name: &str) -> Handler {
    match name {
        PATCH_TILING => patch_tiling,
        PATCH_MERGING => patch_merging,
        CROPPING => cropping,
        SCALING => scaling,
        FILTERING => filtering,
        FORMAT_CONVERSION => format_conversion,
        AREA_COUNTING => area_counting,
        BOX_COUNTING => box_counting,
        other => unreachable!("no native handler for {other}"),
    }
}

/// Registry holding the eight native general tools.
pub fn registry() -> Registry {
    register(Registry::new()).expect("native tool names are distinct")
}

pub fn register(mut reg: Registry) -> Result<Registry, RegistryError> {
    for d in descriptors() {
        let h = handler_for(&d.name);
        reg = reg.register_tool(d, Binding::handler(h))?;
    }
    Ok(reg)
}

fn load(args: &Arguments) -> Result<Raster, String> {
    image_io::read_raster(&path(args, "image_ref")?).map_err(|e| e.to_string())
}

fn save(img: &Raster, out: &Path, format: Option<RasterFormat>) -> Result<ToolOutput, String> {
    let format = format.or_else(|| RasterFormat::from_path(out)).unwrap_or(RasterFormat::Png);
    image_io::write_raster(out, img, format).map_err(|e| e.to_string())?;
    let out = out.display().to_string();
    Ok(ToolOutput::text(format!(
        "wrote {}x{} raster with {} channel(s) to {out}",
        img.width(),
        img.height(),
        img.channels()
    ))
    .block(ContentBlock::payload(
        OutputKind::ImageRef,
        json!({
            "image_ref": out,
            "width": img.width(),
            "height": img.height(),
            "channels": img.channels(),
            "format": format,
        }),
    )))
}

fn patch_tiling(args: &Arguments) -> Result<ToolOutput, String> {
    let img = load(args)?;
    let tile_size = u32_arg(args, "tile_size")?;
    let stride = opt_u32(args, "stride")?.unwrap_or(tile_size);
    let dir = path(args, "output_dir")?;
    let format: RasterFormat = opt_text(args, "format").unwrap_or("png").parse()?;
    let ts = raster::tile(&img, tile_size, stride).map_err(|e| e.to_string())?;
    let mut entries = Vec::with_capacity(ts.tiles.len());
    for t in &ts.tiles {
        let file = format!("tile_r{}_c{}.{}", t.row, t.col, format.extension(img.channels()));
        image_io::write_raster(&dir.join(&file), &t.raster, format).map_err(|e| e.to_string())?;
        entries.push(TileEntry { row: t.row, col: t.col, file, padded: t.padded });
    }
    let manifest = TileManifest { tile_size, stride, source_dims: ts.source_dims, padding: ts.padding, tiles: entries };
    let manifest_path = dir.join(TILE_MANIFEST);
    let body = serde_json::to_vec_pretty(&manifest).map_err(|e| e.to_string())?;
    image_io::write_file(&manifest_path, &body).map_err(|e| e.to_string())?;
    let (rows, cols) = ts.grid();
    Ok(ToolOutput::text(format!(
        "tiled {}x{} raster into {} tiles ({rows} rows x {cols} cols, tile {tile_size}, stride {stride}); manifest {}",
        img.width(),
        img.height(),
        manifest.tiles.len(),
        manifest_path.display()
    ))
    .block(ContentBlock::payload(
        OutputKind::ImageRef,
        json!({"manifest_ref": manifest_path.display().to_string(), "manifest": manifest}),
    )))
}

pub fn read_tiles(manifest_path: &Path) -> Result<TileSet, String> {
    let raw = fs::read(manifest_path).map_err(|e| format!("{}: {e}", manifest_path.display()))?;
    let m: TileManifest = serde_json::from_slice(&raw).map_err(|e| format!("{}: {e}", manifest_path.display()))?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let tiles = m
        .tiles
        .iter()
        .map(|e| {
            let raster = image_io::read_raster(&base.join(&e.file)).map_err(|err| err.to_string())?;
            Ok(Tile { row: e.row, col: e.col, raster, padded: e.padded })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(TileSet { tiles, tile_size: m.tile_size, stride: m.stride, source_dims: m.source_dims, padding: m.padding })
}

fn patch_merging(args: &Arguments) -> Result<ToolOutput, String> {
    let ts = read_tiles(&path(args, "manifest_ref")?)?;
    let img = raster::merge(&ts).map_err(|e| e.to_string())?;
    save(&img, &path(args, "output_ref")?, None)
}

fn cropping(args: &Arguments) -> Result<ToolOutput, String> {
    let img = load(args)?;
    let rect = Rect {
        x: u32_arg(args, "x")?,
        y: u32_arg(args, "y")?,
        width: u32_arg(args, "width")?,
        height: u32_arg(args, "height")?,
    };
    let out = raster::crop(&img, rect).map_err(|e| e.to_string())?;
    save(&out, &path(args, "output_ref")?, None)
}

fn scaling(args: &Arguments) -> Result<ToolOutput, String> {
    let img = load(args)?;
    let method = match opt_text(args, "method").unwrap_or("bilinear") {
        "nearest" => ScaleMethod::Nearest,
        "bilinear" => ScaleMethod::Bilinear,
        other => return Err(format!("unknown scaling method `{other}`")),
    };
    let out =
        raster::scale(&img, u32_arg(args, "width")?, u32_arg(args, "height")?, method).map_err(|e| e.to_string())?;
    save(&out, &path(args, "output_ref")?, None)
}

fn filtering(args: &Arguments) -> Result<ToolOutput, String> {
    let img = load(args)?;
    let kind = match text(args, "kind")? {
        "box3" => FilterKind::Box3,
        "median3" => FilterKind::Median3,
        "sharpen3" => FilterKind::Sharpen3,
        other => return Err(format!("unknown filter `{other}`")),
    };
    save(&raster::filter(&img, kind), &path(args, "output_ref")?, None)
}

fn format_conversion(args: &Arguments) -> Result<ToolOutput, String> {
    let img = load(args)?;
    let target: RasterFormat = text(args, "target")?.parse()?;
    save(&img, &path(args, "output_ref")?, Some(target))
}

/// Reads a mask file written by the segmentation tool.
pub fn read_mask(p: &Path) -> Result<Mask, String> {
    let raw = fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
    let mask: Mask = serde_json::from_slice(&raw).map_err(|e| format!("{}: {e}", p.display()))?;
    mask.validate().map_err(|e| e.to_string())?;
    Ok(mask)
}

fn area_counting(args: &Arguments) -> Result<ToolOutput, String> {
    let mask = read_mask(&PathBuf::from(text(args, "mask_ref")?))?;
    let class = text(args, "class")?;
    let gsd = opt_f64(args, "gsd");
    let area = mask.area(class, gsd).map_err(|e| e.to_string())?;
    let pixels = mask.class_index(class).map(|i| mask.pixel_count(i)).unwrap_or(0);
    Ok(ToolOutput::text(format!("{area} m²")).block(ContentBlock::payload(
        OutputKind::Text,
        json!({"class": class, "pixels": pixels, "gsd": gsd, "area_m2": area}),
    )))
}

fn box_counting(args: &Arguments) -> Result<ToolOutput, String> {
    let d: Detections = parse(args, "detections")?;
    let class = opt_text(args, "class");
    let n = d.count(class).map_err(|e| e.to_string())?;
    let mut by_class: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &d.boxes {
        *by_class.entry(b.class.as_str()).or_default() += 1;
    }
    Ok(ToolOutput::text(n.to_string())
        .block(ContentBlock::payload(OutputKind::Text, json!({"count": n, "class": class, "by_class": by_class}))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ToolStatus;
    use geomm_core::vocab::SEGMENTATION_CLASSES;
    use geomm_core::{Gsd, OrientedBox};

    fn args(v: serde_json::Value) -> Arguments {
        v.as_object().unwrap().clone()
    }

    fn plane_boxes(n: usize) -> serde_json::Value {
        let boxes: Vec<OrientedBox> = (0..n)
            .map(|i| OrientedBox {
                class: "Plane".into(),
                confidence: 0.9,
                corners: [[i as f64, 0.0], [i as f64 + 1.0, 0.0], [i as f64 + 1.0, 1.0], [i as f64, 1.0]],
            })
            .collect();
        json!({ "boxes": boxes })
    }

    #[test]
    fn eight_native_tools() {
        let reg = registry();
        let names: Vec<_> = reg.list_tools().into_iter().map(|d| d.name).collect();
        let mut expected = NATIVE_TOOLS.to_vec();
        expected.sort();
        assert_eq!(names, expected);
        assert!(reg.list_tools().iter().all(|d| d.capability == Capability::General));
    }

    #[test]
    fn box_counting_twelve_planes() {
        let r = registry().call(BOX_COUNTING, &args(json!({"detections": plane_boxes(12)}))).unwrap();
        assert_eq!(r.status, ToolStatus::Ok);
        assert_eq!(r.text(), "12");
        let r = registry().call(BOX_COUNTING, &args(json!({"detections": plane_boxes(2), "class": "Dragon"}))).unwrap();
        assert!(!r.is_ok());
    }

    #[test]
    fn image_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.png");
        let px: Vec<u8> = (0..50 * 30 * 3).map(|i| (i % 251) as u8).collect();
        let img = Raster::new(50, 30, 3, px).unwrap().with_gsd(Gsd::uniform(0.5));
        image_io::write_raster(&src, &img, RasterFormat::Png).unwrap();
        let reg = registry();
        let s = src.display().to_string();

        let tiles = dir.path().join("tiles");
        let r = reg
            .call(
                PATCH_TILING,
                &args(json!({"image_ref": s, "tile_size": 16, "output_dir": tiles.display().to_string()})),
            )
            .unwrap();
        assert!(r.is_ok(), "{r:?}");
        let merged = dir.path().join("merged.png");
        let r = reg
            .call(
                PATCH_MERGING,
                &args(json!({
                    "manifest_ref": tiles.join(TILE_MANIFEST).display().to_string(),
                    "output_ref": merged.display().to_string(),
                })),
            )
            .unwrap();
        assert!(r.is_ok(), "{r:?}");
        assert_eq!(image_io::read_raster(&merged).unwrap(), img);

        let cropped = dir.path().join("crop.ppm");
        let r = reg
            .call(
                CROPPING,
                &args(json!({"image_ref": s, "x": 0, "y": 0, "width": 1, "height": 1, "output_ref": cropped.display().to_string()})),
            )
            .unwrap();
        assert!(r.is_ok(), "{r:?}");
        assert_eq!(image_io::read_raster(&cropped).unwrap().pixels(), img.pixel(0, 0));

        let bad = reg
            .call(
                CROPPING,
                &args(json!({"image_ref": s, "x": 40, "y": 0, "width": 20, "height": 1, "output_ref": cropped.display().to_string()})),
            )
            .unwrap();
        assert!(!bad.is_ok());

        let conv = dir.path().join("x.raw");
        let r = reg
            .call(
                FORMAT_CONVERSION,
                &args(json!({"image_ref": s, "target": "raw", "output_ref": conv.display().to_string()})),
            )
            .unwrap();
        assert!(r.is_ok());
        assert_eq!(image_io::read_raster(&conv).unwrap(), img);
    }

    #[test]
    fn area_from_mask_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = vec![0u8; 100];
        labels[..37].fill(3);
        let mask = Mask {
            width: 10,
            height: 10,
            class_names: SEGMENTATION_CLASSES.iter().map(|s| s.to_string()).collect(),
            labels,
        };
        let p = dir.path().join("m.json");
        fs::write(&p, serde_json::to_vec(&mask).unwrap()).unwrap();
        let r = registry()
            .call(AREA_COUNTING, &args(json!({"mask_ref": p.display().to_string(), "class": "water", "gsd": 0.5})))
            .unwrap();
        assert_eq!(r.text(), "9.25 m²");
        let r = registry()
            .call(AREA_COUNTING, &args(json!({"mask_ref": p.display().to_string(), "class": "water"})))
            .unwrap();
        assert!(!r.is_ok());
    }
}
