//! Pure algorithms behind the geospatial question-answering agent.
//!
//! Everything here needs only `alloc`: the benchmark data model, rule-based
//! answer extraction and micro-averaged scoring, the general raster toolkit
//! (tiling, merging, cropping, scaling, filtering, lossless codecs),
//! perception-output validation with the closed class vocabularies, and
//! cosine ranking for multimodal retrieval. File and network IO, the tool
//! protocol and the orchestrator live in the `geomm` crate.

#![no_std]

extern crate alloc;

pub mod codec;
pub mod detections;
pub mod extract;
pub mod question;
pub mod rank;
pub mod raster;
pub mod score;
pub mod vocab;

pub use detections::{Detections, Mask, OrientedBox, PerceptionError, SceneLabels, ScenePrediction};
pub use extract::{extract_answer, AnswerStatus, ExtractedAnswer, ExtractionRule};
pub use question::{
    validate_question, Dataset, DatasetError, DimensionTags, Discipline, ImageFormat, Modality, OptionLetter, Options,
    Question, Selector, Split, Task, Violation,
};
pub use rank::{rank_candidates, EmbeddingVector, RankError, Ranked};
pub use raster::{Gsd, Raster, RasterError, Rect, TileSet};
pub use score::{random_baseline, score, AccuracyReport, Cell, ScoreError, Tally};
