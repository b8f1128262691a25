//! Benchmark data model: questions, lettered options, dimension tags and datasets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Highest option letter accepted by the schema.
pub const MAX_OPTION_LETTER: char = 'H';

/// Minimum number of options per question.
pub const MIN_OPTIONS: usize = 2;

/// Split sizes of the full benchmark release.
pub const BENCHMARK_VAL_SIZE: usize = 37;
pub const BENCHMARK_TEST_SIZE: usize = 1016;

/// An upper-case option letter. Any of `A..=Z` can be represented so that
/// out-of-range letters can be reported by [`validate_question`] rather than
/// rejected at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OptionLetter(u8);

impl OptionLetter {
    pub fn new(c: char) -> Option<Self> {
        let up = c.to_ascii_uppercase();
        if up.is_ascii_uppercase() {
            Some(Self(up as u8))
        } else {
            None
        }
    }

    /// Letter at zero-based position `index` (0 → A).
    pub fn from_index(index: usize) -> Option<Self> {
        if index < 26 {
            Some(Self(b'A' + index as u8))
        } else {
            None
        }
    }

    pub fn index(self) -> usize {
        (self.0 - b'A') as usize
    }

    pub fn as_char(self) -> char {
        self.0 as char
    }
}

impl fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for OptionLetter {
    type Err = ParseTagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => OptionLetter::new(c).ok_or_else(|| ParseTagError::new("letter", s)),
            _ => Err(ParseTagError::new("letter", s)),
        }
    }
}

impl Serialize for OptionLetter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.as_char().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for OptionLetter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Lettered options, always iterated in letter order.
pub type Options = BTreeMap<OptionLetter, String>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {dimension} value `{value}`")]
pub struct ParseTagError {
    pub dimension: &'static str,
    pub value: String,
}

impl ParseTagError {
    fn new(dimension: &'static str, value: &str) -> Self {
        Self { dimension, value: value.to_string() }
    }
}

macro_rules! tag_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $dim:literal {
            $($variant:ident => $text:literal, $label:literal;)+
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant,)+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant,)+];
            pub const DIMENSION: &'static str = $dim;

            /// Serialized name.
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text,)+ }
            }

            /// Short column label used in result tables.
            pub fn label(self) -> &'static str {
                match self { $($name::$variant => $label,)+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ParseTagError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
                    .ok_or_else(|| ParseTagError::new($dim, s))
            }
        }
    };
}

tag_enum! {
    Split, "split" {
        Val => "val", "Val";
        Test => "test", "Test";
    }
}

tag_enum! {
    Discipline, "discipline" {
        Rs => "RS", "RS";
        Photogrammetry => "Photogrammetry", "Pho.";
        Gis => "GIS", "GIS";
        Gnss => "GNSS", "GNS.";
    }
}

// Declaration order is the result-table column order.
tag_enum! {
    Modality, "modality" {
        Optical => "Optical", "Opt.";
        Dem => "DEM", "DEM";
        Sar => "SAR", "SAR";
        Hsi => "HSI", "HSI";
        Lidar => "LiDAR", "LiD.";
        Thermal => "Thermal", "The.";
    }
}

tag_enum! {
    /// Task spectrum. Single-valued per question.
    Task, "task" {
        Principles => "Principles", "Pri.";
        Perception => "Perception", "Per.";
        Spatial => "Spatial", "Spa.";
        Quality => "Quality", "Qua.";
        TimeSeries => "TimeSeries", "Tim.";
        Applications => "Applications", "App.";
    }
}

tag_enum! {
    ImageFormat, "image_format" {
        SensorImagery => "sensor imagery", "Sensor";
        Chart => "chart", "Chart";
        Plot => "plot", "Plot";
        MathematicalNotation => "mathematical notation", "Math";
        Map => "map", "Map";
        RsMapProduct => "RS-map product", "RS-map";
        Diagram => "diagram", "Diagram";
        Table => "table", "Table";
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionTags {
    pub disciplines: BTreeSet<Discipline>,
    pub modalities: BTreeSet<Modality>,
    pub task: Task,
    pub image_format: ImageFormat,
}

/// One benchmark item. Serializes to the flat line-record layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub split: Split,
    pub question_text: String,
    pub image_refs: Vec<String>,
    pub options: Options,
    pub answer: OptionLetter,
    #[serde(flatten)]
    pub dimensions: DimensionTags,
}

impl Question {
    pub fn option_letters(&self) -> impl Iterator<Item = OptionLetter> + '_ {
        self.options.keys().copied()
    }
}

/// A broken question invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    EmptyQuestionText,
    NoImageRefs,
    EmptyImageRef,
    TooFewOptions,
    NonContiguousLetters,
    LetterOutOfRange(OptionLetter),
    EmptyOptionText(OptionLetter),
    AnswerNotInOptions,
    NoDisciplines,
    NoModalities,
}

impl Violation {
    /// Record field the violation is attributed to.
    pub fn field(&self) -> &'static str {
        match self {
            Violation::EmptyId => "id",
            Violation::EmptyQuestionText => "question_text",
            Violation::NoImageRefs | Violation::EmptyImageRef => "image_refs",
            Violation::TooFewOptions
            | Violation::NonContiguousLetters
            | Violation::LetterOutOfRange(_)
            | Violation::EmptyOptionText(_) => "options",
            Violation::AnswerNotInOptions => "answer",
            Violation::NoDisciplines => "disciplines",
            Violation::NoModalities => "modalities",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => f.write_str("id must be non-empty"),
            Violation::EmptyQuestionText => f.write_str("question_text must be non-empty"),
            Violation::NoImageRefs => f.write_str("at least one image reference is required"),
            Violation::EmptyImageRef => f.write_str("image references must be non-empty"),
            Violation::TooFewOptions => write!(f, "at least {MIN_OPTIONS} options are required"),
            Violation::NonContiguousLetters => f.write_str("option letters must be contiguous from A"),
            Violation::LetterOutOfRange(l) => {
                write!(f, "option letter {l} is beyond {MAX_OPTION_LETTER}")
            }
            Violation::EmptyOptionText(l) => write!(f, "option {l} has empty text"),
            Violation::AnswerNotInOptions => f.write_str("answer is not one of the option letters"),
            Violation::NoDisciplines => f.write_str("at least one discipline tag is required"),
            Violation::NoModalities => f.write_str("at least one modality tag is required"),
        }
    }
}

/// Checks every question invariant. Empty result means the question is valid.
pub fn validate_question(q: &Question) -> Vec<Violation> {
    let mut out = Vec::new();
    if q.id.trim().is_empty() {
        out.push(Violation::EmptyId);
    }
    if q.question_text.trim().is_empty() {
        out.push(Violation::EmptyQuestionText);
    }
    if q.image_refs.is_empty() {
        out.push(Violation::NoImageRefs);
    } else if q.image_refs.iter().any(|r| r.trim().is_empty()) {
        out.push(Violation::EmptyImageRef);
    }
    if q.options.len() < MIN_OPTIONS {
        out.push(Violation::TooFewOptions);
    }
    if q.options.keys().enumerate().any(|(i, l)| l.index() != i) {
        out.push(Violation::NonContiguousLetters);
    }
    for letter in q.options.keys() {
        if letter.as_char() > MAX_OPTION_LETTER {
            out.push(Violation::LetterOutOfRange(*letter));
        }
    }
    for (letter, text) in &q.options {
        if text.trim().is_empty() {
            out.push(Violation::EmptyOptionText(*letter));
        }
    }
    if !q.options.contains_key(&q.answer) {
        out.push(Violation::AnswerNotInOptions);
    }
    if q.dimensions.disciplines.is_empty() {
        out.push(Violation::NoDisciplines);
    }
    if q.dimensions.modalities.is_empty() {
        out.push(Violation::NoModalities);
    }
    out
}

/// A predicate over one dimension value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Selector {
    Split(Split),
    Discipline(Discipline),
    Modality(Modality),
    Task(Task),
    ImageFormat(ImageFormat),
}

impl Selector {
    /// Multi-tag questions match any of their tags.
    pub fn matches(&self, q: &Question) -> bool {
        let d = &q.dimensions;
        match *self {
            Selector::Split(s) => q.split == s,
            Selector::Discipline(x) => d.disciplines.contains(&x),
            Selector::Modality(x) => d.modalities.contains(&x),
            Selector::Task(x) => d.task == x,
            Selector::ImageFormat(x) => d.image_format == x,
        }
    }

    pub fn dimension(&self) -> &'static str {
        match self {
            Selector::Split(_) => Split::DIMENSION,
            Selector::Discipline(_) => Discipline::DIMENSION,
            Selector::Modality(_) => Modality::DIMENSION,
            Selector::Task(_) => Task::DIMENSION,
            Selector::ImageFormat(_) => ImageFormat::DIMENSION,
        }
    }

    pub fn value(&self) -> &'static str {
        match self {
            Selector::Split(x) => x.as_str(),
            Selector::Discipline(x) => x.as_str(),
            Selector::Modality(x) => x.as_str(),
            Selector::Task(x) => x.as_str(),
            Selector::ImageFormat(x) => x.as_str(),
        }
    }

    /// Every selector of every dimension, in result-table order.
    pub fn all() -> Vec<Selector> {
        let mut v = Vec::new();
        v.extend(Split::ALL.iter().map(|&x| Selector::Split(x)));
        v.extend(Discipline::ALL.iter().map(|&x| Selector::Discipline(x)));
        v.extend(Modality::ALL.iter().map(|&x| Selector::Modality(x)));
        v.extend(Task::ALL.iter().map(|&x| Selector::Task(x)));
        v.extend(ImageFormat::ALL.iter().map(|&x| Selector::ImageFormat(x)));
        v
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.dimension(), self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectorError {
    #[error("selector must look like `dimension=value`, got `{0}`")]
    Malformed(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error(transparent)]
    UnknownDimensionValue(#[from] ParseTagError),
}

impl FromStr for Selector {
    type Err = SelectorError;

    /// Parses `dimension=value`, e.g. `task=Spatial` or `disciplines=GIS`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (dim, value) = s.split_once('=').ok_or_else(|| SelectorError::Malformed(s.to_string()))?;
        let sel = match dim.trim().to_ascii_lowercase().as_str() {
            "split" => Selector::Split(value.parse()?),
            "discipline" | "disciplines" => Selector::Discipline(value.parse()?),
            "modality" | "modalities" => Selector::Modality(value.parse()?),
            "task" => Selector::Task(value.parse()?),
            "image_format" => Selector::ImageFormat(value.parse()?),
            other => return Err(SelectorError::UnknownDimension(other.to_string())),
        };
        Ok(sel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("question `{id}`: {violation}")]
    InvalidQuestion { id: String, violation: Violation },
}

/// An immutable, validated collection of questions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    questions: Vec<Question>,
    provenance: String,
    split_counts: BTreeMap<Split, usize>,
}

impl Dataset {
    pub fn new(questions: Vec<Question>, provenance: impl Into<String>) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for q in &questions {
            if let Some(violation) = validate_question(q).into_iter().next() {
                return Err(DatasetError::InvalidQuestion { id: q.id.clone(), violation });
            }
            if !seen.insert(q.id.as_str()) {
                return Err(DatasetError::DuplicateId(q.id.clone()));
            }
        }
        let mut split_counts = BTreeMap::new();
        for q in &questions {
            *split_counts.entry(q.split).or_insert(0) += 1;
        }
        Ok(Self { questions, provenance: provenance.into(), split_counts })
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn split_counts(&self) -> &BTreeMap<Split, usize> {
        &self.split_counts
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// True when the split sizes equal the full benchmark release.
    pub fn is_benchmark_shaped(&self) -> bool {
        self.split_counts.get(&Split::Val) == Some(&BENCHMARK_VAL_SIZE)
            && self.split_counts.get(&Split::Test) == Some(&BENCHMARK_TEST_SIZE)
    }

    /// Questions matching `selector`, order preserved.
    pub fn filter(&self, selector: Selector) -> Dataset {
        let questions: Vec<Question> = self.questions.iter().filter(|q| selector.matches(q)).cloned().collect();
        let mut split_counts = BTreeMap::new();
        for q in &questions {
            *split_counts.entry(q.split).or_insert(0) += 1;
        }
        Dataset { questions, provenance: self.provenance.clone(), split_counts }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::vec;

    pub(crate) fn opts(texts: &[&str]) -> Options {
        texts.iter().enumerate().map(|(i, t)| (OptionLetter::from_index(i).unwrap(), t.to_string())).collect()
    }

    pub(crate) fn question(id: &str, task: Task, disciplines: &[Discipline]) -> Question {
        Question {
            id: id.into(),
            split: Split::Test,
            question_text: "What is shown?".into(),
            image_refs: vec!["img.png".into()],
            options: opts(&["a", "b", "c", "d"]),
            answer: OptionLetter::new('A').unwrap(),
            dimensions: DimensionTags {
                disciplines: disciplines.iter().copied().collect(),
                modalities: [Modality::Optical].into_iter().collect(),
                task,
                image_format: ImageFormat::SensorImagery,
            },
        }
    }

    #[test]
    fn valid_question_has_no_violations() {
        assert!(validate_question(&question("q1", Task::Spatial, &[Discipline::Rs])).is_empty());
    }

    #[test]
    fn answer_outside_options() {
        let mut q = question("q1", Task::Spatial, &[Discipline::Rs]);
        q.answer = OptionLetter::new('E').unwrap();
        assert_eq!(validate_question(&q), vec![Violation::AnswerNotInOptions]);
    }

    #[test]
    fn gap_in_letters() {
        let mut q = question("q1", Task::Spatial, &[Discipline::Rs]);
        q.options =
            [('A', "x"), ('C', "y")].iter().map(|(l, t)| (OptionLetter::new(*l).unwrap(), t.to_string())).collect();
        assert_eq!(validate_question(&q), vec![Violation::NonContiguousLetters]);
    }

    #[test]
    fn letters_past_h_are_rejected() {
        let mut q = question("q1", Task::Spatial, &[Discipline::Rs]);
        q.options = opts(&["1", "2", "3", "4", "5", "6", "7", "8", "9"]);
        assert_eq!(validate_question(&q), vec![Violation::LetterOutOfRange(OptionLetter::new('I').unwrap())]);
    }

    #[test]
    fn empty_tags_and_images() {
        let mut q = question("q1", Task::Spatial, &[]);
        q.image_refs.clear();
        q.dimensions.modalities.clear();
        let v = validate_question(&q);
        assert!(v.contains(&Violation::NoImageRefs));
        assert!(v.contains(&Violation::NoDisciplines));
        assert!(v.contains(&Violation::NoModalities));
        assert_eq!(v, validate_question(&q));
    }

    #[test]
    fn selector_parsing() {
        assert_eq!("task=Spatial".parse::<Selector>().unwrap(), Selector::Task(Task::Spatial));
        assert_eq!("disciplines=gis".parse::<Selector>().unwrap(), Selector::Discipline(Discipline::Gis));
        assert!(matches!("task=Cooking".parse::<Selector>(), Err(SelectorError::UnknownDimensionValue(_))));
        assert!(matches!("colour=red".parse::<Selector>(), Err(SelectorError::UnknownDimension(_))));
    }

    #[test]
    fn filter_by_task_discipline_and_modality() {
        use Discipline::*;
        let qs = vec![
            question("q1", Task::Spatial, &[Rs]),
            question("q2", Task::Perception, &[Rs, Gis]),
            question("q3", Task::Spatial, &[Photogrammetry]),
            question("q4", Task::Principles, &[Gnss]),
            question("q5", Task::Quality, &[Rs]),
        ];
        let ds = Dataset::new(qs, "mem").unwrap();

        let spatial = ds.filter(Selector::Task(Task::Spatial));
        let ids: Vec<_> = spatial.questions().iter().map(|q| q.id.as_str()).collect();
        assert_eq!(ids, ["q1", "q3"]);

        // q2 carries {RS, GIS}
        let gis = ds.filter(Selector::Discipline(Gis));
        assert_eq!(gis.questions().iter().map(|q| q.id.as_str()).collect::<Vec<_>>(), ["q2"]);

        assert!(ds.filter(Selector::Modality(Modality::Thermal)).is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let qs =
            vec![question("q1", Task::Spatial, &[Discipline::Rs]), question("q1", Task::Spatial, &[Discipline::Rs])];
        assert_eq!(Dataset::new(qs, "mem"), Err(DatasetError::DuplicateId("q1".into())));
    }

    #[test]
    fn benchmark_split_counts() {
        let mut qs = Vec::new();
        for i in 0..(BENCHMARK_VAL_SIZE + BENCHMARK_TEST_SIZE) {
            let mut q = question(&alloc::format!("q{i}"), Task::Spatial, &[Discipline::Rs]);
            q.split = if i < BENCHMARK_VAL_SIZE { Split::Val } else { Split::Test };
            qs.push(q);
        }
        let ds = Dataset::new(qs, "mem").unwrap();
        assert_eq!(ds.split_counts().get(&Split::Val), Some(&37));
        assert_eq!(ds.split_counts().get(&Split::Test), Some(&1016));
        assert!(ds.is_benchmark_shaped());
    }
}
