//! SQuAD-style exact match and token F1, plus speaker breakdowns.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Question, SpeakerMention};
use crate::{Error, Result};

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower: String = s.chars().flat_map(char::to_lowercase).filter(|c| !c.is_ascii_punctuation()).collect();
    let words: Vec<&str> = lower.split_whitespace().filter(|w| !matches!(*w, "a" | "an" | "the")).collect();
    words.join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

/// Token-overlap F1 in `[0, 1]` after normalization.
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt == gt { 1.0 } else { 0.0 };
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    // Harmonic mean of precision and recall, as one correctly rounded ratio.
    (2 * common) as f64 / (pt.len() + gt.len()) as f64
}

/// `(em, f1)` in `[0, 1]` for one question; `None` means "no answer".
pub fn question_score(prediction: Option<&str>, gold: &Question) -> (f64, f64) {
    match (prediction, gold.answerable) {
        (None, false) => (1.0, 1.0),
        (None, true) | (Some(_), false) => (0.0, 0.0),
        (Some(p), true) => gold.answers.iter().fold((0.0, 0.0), |(em, f1), a| {
            let e = if exact_match(p, &a.text) { 1.0 } else { 0.0 };
            (f64::max(em, e), f64::max(f1, f1_score(p, &a.text)))
        }),
    }
}

pub type Predictions = BTreeMap<String, Option<String>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    /// Percentage.
    pub f1: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeakerBreakdown {
    pub per_speaker: BTreeMap<String, GroupScore>,
    pub with_speaker: GroupScore,
    pub without_speaker: GroupScore,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percentage.
    pub em: f64,
    /// Percentage.
    pub f1: f64,
    pub n_questions: usize,
    pub per_speaker: BTreeMap<String, GroupScore>,
    pub with_speaker: GroupScore,
    pub without_speaker: GroupScore,
    pub coverage_recall: Option<f64>,
    pub mean_keyset_size: Option<f64>,
}

fn lookup<'a>(predictions: &'a Predictions, gold: &[Question]) -> Result<Vec<Option<&'a str>>> {
    if let Some(id) = predictions.keys().find(|id| !gold.iter().any(|q| &q.id == *id)) {
        return Err(Error::UnknownQuestion(id.clone()));
    }
    gold.iter()
        .map(|q| {
            predictions
                .get(&q.id)
                .map(Option::as_deref)
                .ok_or_else(|| Error::MissingPrediction(q.id.clone()))
        })
        .collect()
}

/// Macro-averaged EM and F1 (×100) over `gold`.
pub fn score(predictions: &Predictions, gold: &[Question]) -> Result<EvalReport> {
    let preds = lookup(predictions, gold)?;
    let n = gold.len();
    let (mut em, mut f1) = (0.0, 0.0);
    for (p, q) in preds.iter().zip(gold) {
        let (e, f) = question_score(*p, q);
        em += e;
        f1 += f;
    }
    let avg = |x: f64| if n == 0 { 0.0 } else { 100.0 * x / n as f64 };
    Ok(EvalReport {
        em: avg(em),
        f1: avg(f1),
        n_questions: n,
        ..EvalReport::default()
    })
}

/// F1 grouped by the speakers each question mentions. A question naming
/// several speakers counts once per speaker.
pub fn speaker_breakdown(
    predictions: &Predictions,
    gold: &[Question],
    mentions: &BTreeMap<String, Vec<SpeakerMention>>,
) -> Result<SpeakerBreakdown> {
    let preds = lookup(predictions, gold)?;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let (mut with, mut without) = ((0.0, 0usize), (0.0, 0usize));
    for (p, q) in preds.iter().zip(gold) {
        let (_, f) = question_score(*p, q);
        let mut speakers: Vec<&str> = mentions
            .get(&q.id)
            .map(|m| m.iter().map(|m| m.resolved_speaker.as_str()).collect())
            .unwrap_or_default();
        speakers.sort_unstable();
        speakers.dedup();
        let bucket = if speakers.is_empty() { &mut without } else { &mut with };
        bucket.0 += f;
        bucket.1 += 1;
        for s in speakers {
            let e = sums.entry(s.into()).or_default();
            e.0 += f;
            e.1 += 1;
        }
    }
    let group = |(sum, count): (f64, usize)| GroupScore {
        f1: if count == 0 { 0.0 } else { 100.0 * sum / count as f64 },
        count,
    };
    Ok(SpeakerBreakdown {
        per_speaker: sums.into_iter().map(|(k, v)| (k, group(v))).collect(),
        with_speaker: group(with),
        without_speaker: group(without),
    })
}
