//! Structured perception outputs (scene labels, oriented boxes, masks), their
//! validation against the closed vocabularies, and the two counting tools.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{self, DETECTION_CLASSES, SCENE_CLASSES};

/// Maximum number of scene labels reported.
pub const SCENE_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerceptionError {
    #[error("label `{0}` is not in the closed vocabulary")]
    VocabularyViolation(String),
    #[error("confidence for `{0}` is outside [0, 1]")]
    ConfidenceOutOfRange(String),
    #[error("mask is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch { expected_w: u32, expected_h: u32, found_w: u32, found_h: u32 },
    #[error("mask label {label} at pixel {index} has no class (only {classes} classes)")]
    LabelOutOfRange { index: usize, label: u8, classes: usize },
    #[error("mask holds {found} labels, expected {expected}")]
    MaskLength { expected: usize, found: usize },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("box of class `{0}` has a non-finite corner")]
    NonFiniteGeometry(String),
    #[error("a positive ground sample distance is required")]
    MissingGsd,
}

fn check_confidence(label: &str, c: f64) -> Result<(), PerceptionError> {
    if c.is_finite() && (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(PerceptionError::ConfidenceOutOfRange(label.to_string()))
    }
}

/// Descending confidence, ties by ascending class name.
fn by_confidence(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub class: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabels {
    pub predictions: Vec<ScenePrediction>,
}

impl SceneLabels {
    /// Validates raw backend output: canonical class names, confidences in
    /// range, sorted, at most [`SCENE_TOP_K`] entries.
    pub fn from_backend(raw: Vec<ScenePrediction>) -> Result<Self, PerceptionError> {
        let mut preds = raw
            .into_iter()
            .map(|p| {
                let class = vocab::canonical(&SCENE_CLASSES, &p.class)
                    .ok_or_else(|| PerceptionError::VocabularyViolation(p.class.clone()))?;
                check_confidence(class, p.confidence)?;
                Ok(ScenePrediction { class: class.to_string(), confidence: p.confidence })
            })
            .collect::<Result<Vec<_>, PerceptionError>>()?;
        preds.sort_by(|a, b| by_confidence((&a.class, a.confidence), (&b.class, b.confidence)));
        preds.truncate(SCENE_TOP_K);
        Ok(Self { predictions: preds })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub class: String,
    pub confidence: f64,
    /// Four corners in pixel coordinates, `[x, y]`.
    pub corners: [[f64; 2]; 4],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Detections {
    pub boxes: Vec<OrientedBox>,
}

/// A corner that had to be moved inside the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampWarning {
    pub box_index: usize,
    pub corner: usize,
    pub original: [f64; 2],
    pub clamped: [f64; 2],
}

impl Detections {
    /// Validates raw detector output for an image of `width`×`height`.
    /// Corners outside `[0, width]×[0, height]` are clamped and reported;
    /// boxes are sorted by descending confidence then class name.
    pub fn from_backend(
        raw: Vec<OrientedBox>,
        width: u32,
        height: u32,
    ) -> Result<(Self, Vec<ClampWarning>), PerceptionError> {
        let mut boxes = Vec::with_capacity(raw.len());
        for b in raw {
            let class = vocab::canonical(&DETECTION_CLASSES, &b.class)
                .ok_or_else(|| PerceptionError::VocabularyViolation(b.class.clone()))?;
            check_confidence(class, b.confidence)?;
            if b.corners.iter().flatten().any(|v| !v.is_finite()) {
                return Err(PerceptionError::NonFiniteGeometry(b.class));
            }
            boxes.push(OrientedBox { class: class.to_string(), ..b });
        }
        boxes.sort_by(|a, b| by_confidence((&a.class, a.confidence), (&b.class, b.confidence)));
        let mut warnings = Vec::new();
        for (i, b) in boxes.iter_mut().enumerate() {
            for (k, c) in b.corners.iter_mut().enumerate() {
                let clamped = [c[0].clamp(0.0, width as f64), c[1].clamp(0.0, height as f64)];
                if clamped != *c {
                    warnings.push(ClampWarning { box_index: i, corner: k, original: *c, clamped });
                    *c = clamped;
                }
            }
        }
        Ok((Self { boxes }, warnings))
    }

    /// Number of boxes, optionally restricted to one detector class.
    pub fn count(&self, class: Option<&str>) -> Result<usize, PerceptionError> {
        match class {
            None => Ok(self.boxes.len()),
            Some(name) => {
                let canon = vocab::canonical(&DETECTION_CLASSES, name)
                    .ok_or_else(|| PerceptionError::UnknownClass(name.to_string()))?;
                Ok(self.boxes.iter().filter(|b| b.class.eq_ignore_ascii_case(canon)).count())
            }
        }
    }
}

/// Per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub class_names: Vec<String>,
    pub labels: Vec<u8>,
}

impl Mask {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        let expected = self.width as usize * self.height as usize;
        if self.labels.len() != expected {
            return Err(PerceptionError::MaskLength { expected, found: self.labels.len() });
        }
        let classes = self.class_names.len();
        if let Some((index, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(PerceptionError::LabelOutOfRange { index, label, classes });
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c.eq_ignore_ascii_case(name.trim()))
    }

    pub fn pixel_count(&self, index: usize) -> usize {
        self.labels.iter().filter(|&&l| l as usize == index).count()
    }

    /// Surface area of `class` in square meters: pixel count × gsd².
    pub fn area(&self, class: &str, gsd: Option<f64>) -> Result<f64, PerceptionError> {
        let gsd = gsd.filter(|g| g.is_finite() && *g > 0.0).ok_or(PerceptionError::MissingGsd)?;
        let idx = self.class_index(class).ok_or_else(|| PerceptionError::UnknownClass(class.to_string()))?;
        Ok(self.pixel_count(idx) as f64 * gsd * gsd)
    }
}
