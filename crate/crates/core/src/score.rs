//! Micro-averaged accuracy, per-dimension breakdowns and the random-choice
//! baseline.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::extract::{AnswerStatus, ExtractedAnswer};
use crate::question::{Dataset, OptionLetter, Question, Selector};

/// `100 * correct / total` rounded half-up to one decimal, computed in
/// integers so that `32/37` is exactly `86.5`. Returns tenths of a percent.
pub fn accuracy_tenths(correct: u64, total: u64) -> Option<u64> {
    if total == 0 {
        return None;
    }
    let num = 1000u128 * correct as u128;
    let den = total as u128;
    Some(((2 * num + den) / (2 * den)) as u64)
}

pub fn accuracy_pct(correct: u64, total: u64) -> Option<f64> {
    accuracy_tenths(correct, total).map(|t| t as f64 / 10.0)
}

/// Counts for one breakdown cell. `accuracy_pct` is `None` for empty cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub total: u64,
    pub correct: u64,
    pub accuracy_pct: Option<f64>,
}

impl Cell {
    fn from_counts(total: u64, correct: u64) -> Self {
        Self { total, correct, accuracy_pct: accuracy_pct(correct, total) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub total: u64,
    pub correct: u64,
    pub accuracy_pct: f64,
    /// One cell per value of every dimension, including empty ones.
    pub breakdowns: BTreeMap<BreakdownKey, Cell>,
}

impl AccuracyReport {
    pub fn cell(&self, selector: Selector) -> Option<&Cell> {
        self.breakdowns.get(&BreakdownKey(selector))
    }
}

/// A [`Selector`] used as a map key; serializes as `dimension=value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BreakdownKey(pub Selector);

impl fmt::Display for BreakdownKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Serialize for BreakdownKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for BreakdownKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Selector::from_str(&s).map(BreakdownKey).map_err(serde::de::Error::custom)
    }
}

/// Order-independent accumulator of per-question outcomes. Tallies can be
/// built on separate workers and merged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tally {
    total: u64,
    correct: u64,
    cells: BTreeMap<Selector, (u64, u64)>,
}

impl Tally {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one outcome. A multi-tagged question counts once overall and
    /// once under every tag it carries.
    pub fn record(&mut self, q: &Question, is_correct: bool) {
        self.total += 1;
        self.correct += u64::from(is_correct);
        let d = &q.dimensions;
        let mut bump = |s: Selector| {
            let c = self.cells.entry(s).or_insert((0, 0));
            c.0 += 1;
            c.1 += u64::from(is_correct);
        };
        bump(Selector::Split(q.split));
        d.disciplines.iter().for_each(|&x| bump(Selector::Discipline(x)));
        d.modalities.iter().for_each(|&x| bump(Selector::Modality(x)));
        bump(Selector::Task(d.task));
        bump(Selector::ImageFormat(d.image_format));
    }

    pub fn merge(&mut self, other: &Tally) {
        self.total += other.total;
        self.correct += other.correct;
        for (s, (t, c)) in &other.cells {
            let e = self.cells.entry(*s).or_insert((0, 0));
            e.0 += t;
            e.1 += c;
        }
    }

    pub fn report(&self) -> Result<AccuracyReport, ScoreError> {
        let accuracy_pct = accuracy_pct(self.correct, self.total).ok_or(ScoreError::EmptyDataset)?;
        let breakdowns = Selector::all()
            .into_iter()
            .map(|s| {
                let (t, c) = self.cells.get(&s).copied().unwrap_or((0, 0));
                (BreakdownKey(s), Cell::from_counts(t, c))
            })
            .collect();
        Ok(AccuracyReport { total: self.total, correct: self.correct, accuracy_pct, breakdowns })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("no prediction for question `{0}`")]
    MissingPrediction(String),
    #[error("prediction for unknown question `{0}`")]
    UnknownId(String),
    #[error("cannot score an empty dataset")]
    EmptyDataset,
}

fn is_correct(q: &Question, status: AnswerStatus) -> bool {
    status == AnswerStatus::Letter(q.answer)
}

/// Scores extracted answers against the answer key. Every dataset question
/// must have a prediction and every prediction must name a dataset question.
pub fn score(predictions: &BTreeMap<String, ExtractedAnswer>, dataset: &Dataset) -> Result<AccuracyReport, ScoreError> {
    score_statuses(predictions.iter().map(|(k, v)| (k.as_str(), v.status)), dataset)
}

/// Same as [`score`] over bare statuses.
pub fn score_statuses<'a>(
    predictions: impl IntoIterator<Item = (&'a str, AnswerStatus)>,
    dataset: &Dataset,
) -> Result<AccuracyReport, ScoreError> {
    let by_id: BTreeMap<&str, AnswerStatus> = predictions.into_iter().collect();
    for id in by_id.keys() {
        if dataset.get(id).is_none() {
            return Err(ScoreError::UnknownId(id.to_string()));
        }
    }
    let mut tally = Tally::new();
    for q in dataset.questions() {
        let status = by_id.get(q.id.as_str()).copied().ok_or_else(|| ScoreError::MissingPrediction(q.id.clone()))?;
        tally.record(q, is_correct(q, status));
    }
    tally.report()
}

const TRIAL_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Uniform random pick among `q`'s options for a given trial and question
/// index. ChaCha8 keyed by the trial, with the question index as stream, so
/// draws are independent of evaluation order and identical on every platform.
pub fn random_choice(q: &Question, seed: u64, trial: u64, index: u64) -> OptionLetter {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial.wrapping_mul(TRIAL_SEED_MIX));
    rng.set_stream(index);
    let letters: Vec<OptionLetter> = q.option_letters().collect();
    letters[rng.random_range(0..letters.len() as u32) as usize]
}

/// Random-choice baseline: counts are summed across trials before the
/// accuracy formula is applied.
pub fn random_baseline(dataset: &Dataset, seed: u64, trials: u32) -> Result<AccuracyReport, ScoreError> {
    let mut tally = Tally::new();
    for trial in 0..u64::from(trials.max(1)) {
        for (i, q) in dataset.questions().iter().enumerate() {
            let pick = random_choice(q, seed, trial, i as u64);
            tally.record(q, pick == q.answer);
        }
    }
    tally.report()
}
