#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use geomm::config::RunConfig;
use geomm::harness;
use geomm::orchestrator::{Orchestrator, Toggles};
use geomm_core::question::{Dataset, DimensionTags, Question};
use geomm_core::{Discipline, ImageFormat, Modality, OptionLetter, Options, Split, Task};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn config() -> RunConfig {
    RunConfig::load(&fixtures().join("config.toml")).expect("fixture config loads")
}

pub fn orchestrator(toggles: Toggles) -> Orchestrator {
    let mut cfg = config();
    cfg.toggles = toggles;
    cfg.orchestrator().expect("fixture backends load")
}

/// A fixture question file, with images resolved against the fixture dir.
pub fn dataset(file: &str) -> Dataset {
    let ds = harness::load_dataset(&fixtures().join(file)).expect("fixture dataset loads");
    harness::resolve_images(&ds, &fixtures())
}

pub fn question(file: &str) -> Question {
    dataset(file).questions()[0].clone()
}

pub fn letter(c: char) -> OptionLetter {
    OptionLetter::new(c).unwrap()
}

pub fn options(n: usize) -> Options {
    (0..n).map(|i| (OptionLetter::from_index(i).unwrap(), format!("option {i}"))).collect::<BTreeMap<_, _>>()
}

/// `n` synthetic questions with `options` choices each, answer A.
pub fn synthetic(n: usize, split: Split, choices: usize) -> Dataset {
    let questions = (0..n)
        .map(|i| Question {
            id: format!("s{i:05}"),
            split,
            question_text: format!("Synthetic question {i}?"),
            image_refs: vec!["img.png".into()],
            options: options(choices),
            answer: letter('A'),
            dimensions: DimensionTags {
                disciplines: [Discipline::Rs].into(),
                modalities: [Modality::Optical].into(),
                task: Task::Principles,
                image_format: ImageFormat::SensorImagery,
            },
        })
        .collect();
    Dataset::new(questions, "synthetic").unwrap()
}
