//! Perception gateway: typed contracts for scene classification, oriented
//! object detection and semantic segmentation. Every backend result is
//! validated against the closed vocabularies before it leaves the gateway.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use geomm_core::detections::ClampWarning;
use geomm_core::vocab::SEGMENTATION_CLASSES;
use geomm_core::{Detections, Gsd, Mask, OrientedBox, PerceptionError, SceneLabels, ScenePrediction};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::image_io;
use crate::prompts;
use crate::protocol::{
    Arguments, Binding, Capability, ContentBlock, OutputKind, Registry, RegistryError, RemoteEndpoint,
    SemanticType as T, ToolDescriptor, ToolOutput, ToolResult,
};
use crate::tools::general::read_mask;
use crate::tools::{opt_text, path};

pub const SCENE_CLASSIFICATION: &str = "scene_classification";
pub const OBJECT_DETECTION: &str = "object_detection";
pub const SEMANTIC_SEGMENTATION: &str = "semantic_segmentation";

pub const TOOLS: [&str; 3] = [SCENE_CLASSIFICATION, OBJECT_DETECTION, SEMANTIC_SEGMENTATION];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("cannot resolve image `{0}`")]
    UnresolvableImage(String),
    #[error("perception backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Invalid(#[from] PerceptionError),
}

/// A resolved image: its bytes, content hash and decoded geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    /// Lower-case hex SHA-256 of `bytes`.
    pub sha256: String,
    pub width: u32,
    pub height: u32,
    pub gsd: Option<Gsd>,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ImageInput {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let unresolvable = |_| GatewayError::UnresolvableImage(path.display().to_string());
        let bytes = image_io::read_bytes(path).map_err(unresolvable)?;
        let img = image_io::decode(&bytes).map_err(unresolvable)?;
        Ok(Self {
            path: path.into(),
            sha256: content_hash(&bytes),
            width: img.width(),
            height: img.height(),
            gsd: img.gsd,
            bytes,
        })
    }
}

/// Raw model access. Implementations need not validate; the gateway does.
pub trait PerceptionBackend: Send + Sync {
    fn classify(&self, img: &ImageInput) -> Result<Vec<ScenePrediction>, GatewayError>;
    fn detect(&self, img: &ImageInput) -> Result<Vec<OrientedBox>, GatewayError>;
    fn segment(&self, img: &ImageInput) -> Result<Mask, GatewayError>;
}

pub fn classify_scene(img: &ImageInput, backend: &dyn PerceptionBackend) -> Result<SceneLabels, GatewayError> {
    Ok(SceneLabels::from_backend(backend.classify(img)?)?)
}

pub fn detect_objects(
    img: &ImageInput,
    backend: &dyn PerceptionBackend,
) -> Result<(Detections, Vec<ClampWarning>), GatewayError> {
    Ok(Detections::from_backend(backend.detect(img)?, img.width, img.height)?)
}

/// Segments `img`; the mask must match the image size and use the
/// segmentation vocabulary in its label order.
pub fn segment(img: &ImageInput, backend: &dyn PerceptionBackend) -> Result<Mask, GatewayError> {
    let mut mask = backend.segment(img)?;
    if (mask.width, mask.height) != (img.width, img.height) {
        return Err(PerceptionError::DimensionMismatch {
            expected_w: img.width,
            expected_h: img.height,
            found_w: mask.width,
            found_h: mask.height,
        }
        .into());
    }
    if mask.class_names.len() != SEGMENTATION_CLASSES.len() {
        let extra = mask.class_names.get(SEGMENTATION_CLASSES.len()).cloned().unwrap_or_default();
        return Err(PerceptionError::VocabularyViolation(extra).into());
    }
    for (name, canon) in mask.class_names.iter_mut().zip(SEGMENTATION_CLASSES) {
        if !name.trim().eq_ignore_ascii_case(canon) {
            return Err(PerceptionError::VocabularyViolation(name.clone()).into());
        }
        *name = canon.to_string();
    }
    mask.validate()?;
    Ok(mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedMask {
    /// Every pixel gets one class.
    Fill { fill: String },
    /// Explicit labels; dimensions default to the image's.
    Labels {
        labels: Vec<u8>,
        #[serde(default)]
        width: Option<u32>,
        #[serde(default)]
        height: Option<u32>,
    },
}

/// One line of a mock script. The image is named either by content hash or
/// by a path (relative to the script) that is hashed when the script loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub sha256: Option<String>,
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub scene: Option<Vec<ScenePrediction>>,
    #[serde(default)]
    pub detections: Option<Vec<OrientedBox>>,
    #[serde(default)]
    pub mask: Option<ScriptedMask>,
}

/// Deterministic backend answering from a script table keyed by image
/// content hash. Unscripted images or outputs are reported unavailable.
#[derive(Debug, Clone, Default)]
pub struct MockPerception {
    table: HashMap<String, ScriptEntry>,
}

impl MockPerception {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, String> {
        Self::with_base(entries, Path::new("."))
    }

    fn with_base(entries: impl IntoIterator<Item = ScriptEntry>, base: &Path) -> Result<Self, String> {
        let mut table = HashMap::new();
        for e in entries {
            let key = match (&e.sha256, &e.image) {
                (Some(h), _) => h.to_ascii_lowercase(),
                (None, Some(p)) => {
                    let p = base.join(p);
                    content_hash(&fs::read(&p).map_err(|err| format!("{}: {err}", p.display()))?)
                }
                (None, None) => return Err("script entry names neither `sha256` nor `image`".into()),
            };
            table.insert(key, e);
        }
        Ok(Self { table })
    }

    /// Reads a line-delimited JSON script.
    pub fn load(script: &Path) -> Result<Self, String> {
        let raw = fs::read_to_string(script).map_err(|e| format!("{}: {e}", script.display()))?;
        let entries = raw
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{} line {}: {e}", script.display(), i + 1)))
            .collect::<Result<Vec<ScriptEntry>, String>>()?;
        Self::with_base(entries, script.parent().unwrap_or(Path::new(".")))
    }

    fn entry(&self, img: &ImageInput) -> Result<&ScriptEntry, GatewayError> {
        self.table
            .get(&img.sha256)
            .ok_or_else(|| GatewayError::BackendUnavailable(format!("no scripted output for image {}", img.sha256)))
    }

    fn missing(what: &str, img: &ImageInput) -> GatewayError {
        GatewayError::BackendUnavailable(format!("no scripted {what} for image {}", img.sha256))
    }
}

impl PerceptionBackend for MockPerception {
    fn classify(&self, img: &ImageInput) -> Result<Vec<ScenePrediction>, GatewayError> {
        self.entry(img)?.scene.clone().ok_or_else(|| Self::missing("scene labels", img))
    }

    fn detect(&self, img: &ImageInput) -> Result<Vec<OrientedBox>, GatewayError> {
        self.entry(img)?.detections.clone().ok_or_else(|| Self::missing("detections", img))
    }

    fn segment(&self, img: &ImageInput) -> Result<Mask, GatewayError> {
        let class_names = SEGMENTATION_CLASSES.iter().map(|c| c.to_string()).collect();
        match self.entry(img)?.mask.clone().ok_or_else(|| Self::missing("mask", img))? {
            ScriptedMask::Fill { fill } => {
                let idx = SEGMENTATION_CLASSES
                    .iter()
                    .position(|c| c.eq_ignore_ascii_case(fill.trim()))
                    .ok_or(PerceptionError::VocabularyViolation(fill))?;
                let n = img.width as usize * img.height as usize;
                Ok(Mask { width: img.width, height: img.height, class_names, labels: vec![idx as u8; n] })
            }
            ScriptedMask::Labels { labels, width, height } => Ok(Mask {
                width: width.unwrap_or(img.width),
                height: height.unwrap_or(img.height),
                class_names,
                labels,
            }),
        }
    }
}

/// Backend served by a remote tool server exposing the three perception
/// tools. Its answers still pass through gateway validation.
pub struct RemotePerception {
    endpoint: Arc<RemoteEndpoint>,
    deadline: Duration,
}

impl RemotePerception {
    pub fn new(endpoint: Arc<RemoteEndpoint>, deadline: Duration) -> Self {
        Self { endpoint, deadline }
    }

    fn call(&self, tool: &str, img: &ImageInput, kind: OutputKind) -> Result<Value, GatewayError> {
        let mut args = Arguments::new();
        args.insert("image_ref".into(), json!(img.path.display().to_string()));
        let r: ToolResult = self
            .endpoint
            .call(tool, &args, self.deadline)
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        if !r.is_ok() {
            return Err(GatewayError::BackendUnavailable(r.text()));
        }
        r.payload(kind)
            .cloned()
            .ok_or_else(|| GatewayError::BackendUnavailable(format!("`{tool}` returned no {kind:?} payload")))
    }
}

fn decode<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T, GatewayError> {
    serde_json::from_value(v).map_err(|e| GatewayError::BackendUnavailable(format!("malformed {what}: {e}")))
}

impl PerceptionBackend for RemotePerception {
    fn classify(&self, img: &ImageInput) -> Result<Vec<ScenePrediction>, GatewayError> {
        let labels: SceneLabels = decode(self.call(SCENE_CLASSIFICATION, img, OutputKind::Labels)?, "scene labels")?;
        Ok(labels.predictions)
    }

    fn detect(&self, img: &ImageInput) -> Result<Vec<OrientedBox>, GatewayError> {
        let d: Detections = decode(self.call(OBJECT_DETECTION, img, OutputKind::Detections)?, "detections")?;
        Ok(d.boxes)
    }

    fn segment(&self, img: &ImageInput) -> Result<Mask, GatewayError> {
        let v = self.call(SEMANTIC_SEGMENTATION, img, OutputKind::MaskRef)?;
        let r = v
            .get("mask_ref")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::BackendUnavailable("segmentation payload has no `mask_ref`".into()))?;
        read_mask(Path::new(r)).map_err(GatewayError::BackendUnavailable)
    }
}

pub fn descriptors() -> Vec<ToolDescriptor> {
    let p = |name, desc, out| {
        ToolDescriptor::new(name, desc, Capability::Perception, out).field("image_ref", T::ImageRef, true)
    };
    vec![
        p(SCENE_CLASSIFICATION, prompts::SCENE_CLASSIFICATION, OutputKind::Labels),
        p(OBJECT_DETECTION, prompts::OBJECT_DETECTION, OutputKind::Detections),
        p(SEMANTIC_SEGMENTATION, prompts::SEMANTIC_SEGMENTATION, OutputKind::MaskRef).field(
            "output_ref",
            T::Path,
            false,
        ),
    ]
}

fn load(args: &Arguments) -> Result<ImageInput, String> {
    ImageInput::load(&path(args, "image_ref")?).map_err(|e| e.to_string())
}

fn scene_tool(backend: &dyn PerceptionBackend, args: &Arguments) -> Result<ToolOutput, String> {
    let labels = classify_scene(&load(args)?, backend).map_err(|e| e.to_string())?;
    let text =
        labels.predictions.iter().map(|p| format!("{} {:.2}", p.class, p.confidence)).collect::<Vec<_>>().join(", ");
    Ok(ToolOutput::text(text).block(ContentBlock::payload(OutputKind::Labels, &labels)))
}

fn detection_tool(backend: &dyn PerceptionBackend, args: &Arguments) -> Result<ToolOutput, String> {
    let (d, warnings) = detect_objects(&load(args)?, backend).map_err(|e| e.to_string())?;
    let mut by_class: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &d.boxes {
        *by_class.entry(b.class.as_str()).or_default() += 1;
    }
    let mut text = format!("{} objects", d.boxes.len());
    if !by_class.is_empty() {
        let parts: Vec<String> = by_class.iter().map(|(c, n)| format!("{c} {n}")).collect();
        text += &format!(": {}", parts.join(", "));
    }
    if !warnings.is_empty() {
        text += &format!("\nwarning: {} box corners clamped to the image bounds", warnings.len());
    }
    Ok(ToolOutput::text(text)
        .block(ContentBlock::payload(OutputKind::Detections, json!({"boxes": d.boxes, "clamp_warnings": warnings}))))
}

fn segmentation_tool(backend: &dyn PerceptionBackend, scratch: &Path, args: &Arguments) -> Result<ToolOutput, String> {
    let img = load(args)?;
    let mask = segment(&img, backend).map_err(|e| e.to_string())?;
    let out = match opt_text(args, "output_ref") {
        Some(p) => PathBuf::from(p),
        None => scratch.join(format!("{}.mask.json", &img.sha256[..16])),
    };
    let bytes = serde_json::to_vec(&mask).expect("mask serializes");
    image_io::write_file(&out, &bytes).map_err(|e| e.to_string())?;
    let pixels: BTreeMap<&str, usize> = mask
        .class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), mask.pixel_count(i)))
        .filter(|(_, n)| *n > 0)
        .collect();
    let gsd = img.gsd.map(|g| g.x);
    let summary: Vec<String> = pixels.iter().map(|(c, n)| format!("{c} {n} px")).collect();
    let text = format!("{}x{} mask at {}: {}", mask.width, mask.height, out.display(), summary.join(", "));
    Ok(ToolOutput::text(text).block(ContentBlock::payload(
        OutputKind::MaskRef,
        json!({"mask_ref": out.display().to_string(), "width": mask.width, "height": mask.height, "gsd": gsd, "pixels": pixels}),
    )))
}

/// Registers the three perception tools over `backend`. Masks without an
/// explicit `output_ref` are written under `scratch`, named by image hash.
pub fn register(
    reg: Registry,
    backend: Arc<dyn PerceptionBackend>,
    scratch: PathBuf,
) -> Result<Registry, RegistryError> {
    let [scene, det, seg]: [ToolDescriptor; 3] = descriptors().try_into().expect("three perception tools");
    let b = backend.clone();
    let reg = reg.register_tool(scene, Binding::handler(move |a: &Arguments| scene_tool(b.as_ref(), a)))?;
    let b = backend.clone();
    let reg = reg.register_tool(det, Binding::handler(move |a: &Arguments| detection_tool(b.as_ref(), a)))?;
    reg.register_tool(seg, Binding::handler(move |a: &Arguments| segmentation_tool(backend.as_ref(), &scratch, a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use geomm_core::Raster;

    fn write_image(dir: &Path, name: &str, w: u32, h: u32, seed: u8) -> PathBuf {
        let p = dir.join(name);
        let img = Raster::new(w, h, 1, vec![seed; (w * h) as usize]).unwrap().with_gsd(Gsd::uniform(1.0));
        image_io::write_raster(&p, &img, image_io::RasterFormat::Png).unwrap();
        p
    }

    fn bx(class: &str, c: f64, x: f64) -> OrientedBox {
        OrientedBox {
            class: class.into(),
            confidence: c,
            corners: [[x, 1.0], [x + 2.0, 1.0], [x + 2.0, 3.0], [x, 3.0]],
        }
    }

    fn entry(image: &Path) -> ScriptEntry {
        ScriptEntry {
            sha256: None,
            image: Some(image.display().to_string()),
            scene: None,
            detections: None,
            mask: None,
        }
    }

    #[test]
    fn scripted_scene_is_validated_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_image(dir.path(), "airport.png", 8, 8, 1);
        let mock = MockPerception::new([ScriptEntry {
            scene: Some(vec![
                ScenePrediction { class: "runway".into(), confidence: 0.05 },
                ScenePrediction { class: "Apron".into(), confidence: 0.9 },
            ]),
            ..entry(&p)
        }])
        .unwrap();
        let img = ImageInput::load(&p).unwrap();
        let labels = classify_scene(&img, &mock).unwrap();
        assert_eq!(labels.predictions[0].class, "Apron");
        assert_eq!(labels.predictions[1].class, "Runway");
        assert_eq!(classify_scene(&img, &mock), classify_scene(&img, &mock));
    }

    #[test]
    fn out_of_vocabulary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_image(dir.path(), "x.png", 8, 8, 2);
        let mock = MockPerception::new([ScriptEntry {
            scene: Some(vec![ScenePrediction { class: "Volcano".into(), confidence: 0.5 }]),
            detections: Some(vec![bx("Airship", 0.5, 1.0)]),
            ..entry(&p)
        }])
        .unwrap();
        let img = ImageInput::load(&p).unwrap();
        assert_eq!(classify_scene(&img, &mock), Err(PerceptionError::VocabularyViolation("Volcano".into()).into()));
        assert!(matches!(
            detect_objects(&img, &mock),
            Err(GatewayError::Invalid(PerceptionError::VocabularyViolation(_)))
        ));
    }

    #[test]
    fn out_of_bounds_corner_is_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_image(dir.path(), "x.png", 10, 10, 3);
        let mock =
            MockPerception::new([ScriptEntry { detections: Some(vec![bx("Ship", 0.8, 11.0)]), ..entry(&p) }]).unwrap();
        let (d, warnings) = detect_objects(&ImageInput::load(&p).unwrap(), &mock).unwrap();
        assert_eq!(d.boxes.len(), 1);
        assert!(d.boxes[0].corners.iter().all(|c| c[0] <= 10.0));
        assert_eq!(warnings[0].original, [11.0, 1.0]);
        assert_eq!(warnings.len(), 4);
    }

    #[test]
    fn segmentation_contracts() {
        let dir = tempfile::tempdir().unwrap();
        let lake = write_image(dir.path(), "lake.png", 6, 4, 4);
        let bad_dims = write_image(dir.path(), "dims.png", 6, 4, 5);
        let bad_label = write_image(dir.path(), "label.png", 2, 1, 6);
        let mock = MockPerception::new([
            ScriptEntry { mask: Some(ScriptedMask::Fill { fill: "water".into() }), ..entry(&lake) },
            ScriptEntry {
                mask: Some(ScriptedMask::Labels { labels: vec![0; 9], width: Some(3), height: Some(3) }),
                ..entry(&bad_dims)
            },
            ScriptEntry {
                mask: Some(ScriptedMask::Labels { labels: vec![0, 9], width: None, height: None }),
                ..entry(&bad_label)
            },
        ])
        .unwrap();
        let m = segment(&ImageInput::load(&lake).unwrap(), &mock).unwrap();
        assert_eq!(m.area("water", Some(1.0)), Ok(24.0));
        assert!(matches!(
            segment(&ImageInput::load(&bad_dims).unwrap(), &mock),
            Err(GatewayError::Invalid(PerceptionError::DimensionMismatch { .. }))
        ));
        assert!(matches!(
            segment(&ImageInput::load(&bad_label).unwrap(), &mock),
            Err(GatewayError::Invalid(PerceptionError::LabelOutOfRange { label: 9, .. }))
        ));
    }

    #[test]
    fn unscripted_and_missing_images() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_image(dir.path(), "x.png", 4, 4, 7);
        let mock = MockPerception::default();
        assert!(matches!(
            classify_scene(&ImageInput::load(&p).unwrap(), &mock),
            Err(GatewayError::BackendUnavailable(_))
        ));
        assert!(matches!(ImageInput::load(&dir.path().join("nope.png")), Err(GatewayError::UnresolvableImage(_))));
    }

    #[test]
    fn tools_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_image(dir.path(), "planes.png", 64, 64, 8);
        let boxes = (0..12).map(|i| bx("plane", 0.9 - i as f64 * 0.01, i as f64 * 4.0)).collect();
        let mock = MockPerception::new([ScriptEntry {
            detections: Some(boxes),
            mask: Some(ScriptedMask::Fill { fill: "road".into() }),
            ..entry(&p)
        }])
        .unwrap();
        let reg = register(Registry::new(), Arc::new(mock), dir.path().join("scratch")).unwrap();
        let mut args = Arguments::new();
        args.insert("image_ref".into(), json!(p.display().to_string()));
        let a = reg.call(OBJECT_DETECTION, &args).unwrap();
        assert_eq!(a, reg.call(OBJECT_DETECTION, &args).unwrap());
        assert!(a.text().starts_with("12 objects: Plane 12"));
        let s = reg.call(SEMANTIC_SEGMENTATION, &args).unwrap();
        assert_eq!(s, reg.call(SEMANTIC_SEGMENTATION, &args).unwrap());
        let mref = s.payload(OutputKind::MaskRef).unwrap()["mask_ref"].as_str().unwrap().to_string();
        assert_eq!(read_mask(Path::new(&mref)).unwrap().pixel_count(2), 64 * 64);
        assert!(!reg.call(SCENE_CLASSIFICATION, &args).unwrap().is_ok());
    }
}
