//! Key-utterance extraction over sliding windows of utterances.
//!
//! A unit is `m + 1` contiguous utterances. Each unit is scored against the
//! question with `sigmoid(Linear(maxpool(H_C[st..ed]) || maxpool(H_Q)))`, and
//! the members of the best units above 0.5 become the key utterances.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Question};
use crate::encoder::EncoderOutput;
use crate::textseq::{AlignmentMap, TokenSpan};
use crate::{Error, ParamId, ParameterStore, Result, Tape, Var};

pub const SCORE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    /// Index of the first member utterance.
    pub start: usize,
    pub utterances: Vec<usize>,
    pub token_interval: TokenSpan,
    pub label: bool,
}

/// Windows `[i, i + m]` for every start that fits; one unit over the whole
/// dialogue when it has at most `m` utterances. Utterances dropped by
/// truncation are not covered.
pub fn form_units(dialogue: &Dialogue, map: &AlignmentMap, m: usize) -> Vec<Unit> {
    let kept: Vec<usize> = (0..dialogue.len())
        .filter(|&i| map.utterance_token_span.get(i).is_some_and(Option::is_some))
        .collect();
    let n = kept.len();
    if n == 0 {
        return Vec::new();
    }
    let windows: Vec<&[usize]> = if n <= m {
        alloc::vec![&kept[..]]
    } else {
        (0..n - m).map(|i| &kept[i..=i + m]).collect()
    };
    windows
        .into_iter()
        .map(|members| {
            let first = map.utterance_token_span[members[0]].expect("kept");
            let last = map.utterance_token_span[*members.last().expect("non-empty")].expect("kept");
            Unit {
                start: members[0],
                utterances: members.to_vec(),
                token_interval: TokenSpan::new(first.start, last.end),
                label: false,
            }
        })
        .collect()
}

/// Marks a unit positive when any member holds a gold answer.
pub fn label_units(units: &mut [Unit], question: &Question) {
    let gold = question.answer_utterances();
    for u in units {
        u.label = u.utterances.iter().any(|i| gold.contains(i));
    }
}

/// The linear scorer `2 d_h -> 1`.
#[derive(Clone, Copy, Debug)]
pub struct UnitScorer {
    weight: ParamId,
    bias: ParamId,
}

impl UnitScorer {
    pub fn register(store: &mut ParameterStore, prefix: &str, d_model: usize) -> Result<Self> {
        Ok(Self {
            weight: store.uniform(&format!("{prefix}.score.w"), 2 * d_model, 1, 2 * d_model)?,
            bias: store.zeros(&format!("{prefix}.score.b"), 1, 1)?,
        })
    }

    pub fn attach(store: &ParameterStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: store.require(&format!("{prefix}.score.w"))?,
            bias: store.require(&format!("{prefix}.score.b"))?,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    /// Pre-sigmoid score of every unit.
    pub fn unit_logits(&self, tape: &mut Tape, store: &ParameterStore, enc: &EncoderOutput, units: &[Unit]) -> Result<Vec<Var>> {
        if enc.question.is_empty() {
            return Err(Error::EmptyInterval { op: "score_unit" });
        }
        let q = tape.max_pool_rows(enc.hidden, enc.question.start, enc.question.end)?;
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        units
            .iter()
            .map(|u| {
                let iv = u.token_interval;
                if iv.is_empty() {
                    return Err(Error::EmptyInterval { op: "score_unit" });
                }
                if iv.start < enc.context.start || iv.end > enc.context.end {
                    return Err(Error::Dimension {
                        op: "score_unit",
                        detail: format!("unit {}..{} outside context", iv.start, iv.end),
                    });
                }
                let pooled = tape.max_pool_rows(enc.hidden, iv.start, iv.end)?;
                let joint = tape.concat_cols(&[pooled, q])?;
                let z = tape.matmul(joint, w)?;
                tape.add(z, b)
            })
            .collect()
    }

    /// Scores in `(0, 1)`.
    pub fn score_units(&self, tape: &mut Tape, store: &ParameterStore, enc: &EncoderOutput, units: &[Unit]) -> Result<Vec<f64>> {
        self.unit_logits(tape, store, enc, units)?
            .into_iter()
            .map(|z| {
                let s = tape.sigmoid(z)?;
                tape.scalar(s)
            })
            .collect()
    }
}

/// `J_k`: binary cross-entropy summed over the units of one question.
pub fn extraction_loss(tape: &mut Tape, logits: &[Var], units: &[Unit]) -> Result<Var> {
    let terms: Vec<Var> = logits
        .iter()
        .zip(units)
        .map(|(&z, u)| tape.bce_with_logits(z, if u.label { 1.0 } else { 0.0 }))
        .collect::<Result<_>>()?;
    tape.add_all(&terms)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeySet {
    /// Key utterances in chronological order.
    pub utterances: Vec<usize>,
    /// Start index of every unit that contributed, in rank order.
    pub selected_units: Vec<usize>,
    /// Per key utterance, the contributing unit starts.
    pub provenance: BTreeMap<usize, Vec<usize>>,
    /// Nothing cleared the threshold and the top unit was taken instead.
    pub fallback: bool,
}

impl KeySet {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn contains(&self, utterance: usize) -> bool {
        self.utterances.binary_search(&utterance).is_ok()
    }

    /// Key set given directly by utterance indices.
    pub fn from_utterances(utterances: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = utterances.into_iter().collect();
        Self {
            utterances: set.into_iter().collect(),
            ..Self::default()
        }
    }
}

/// Top-`k` units with score above 0.5, members deduplicated and sorted.
/// Equal scores rank the earlier unit first. When no unit clears the
/// threshold, the single best unit is used.
pub fn extract_keys(units: &[Unit], scores: &[f64], k: usize) -> KeySet {
    let mut order: Vec<usize> = (0..units.len().min(scores.len())).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut picked: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| scores[i] > SCORE_THRESHOLD)
        .take(k)
        .collect();
    let fallback = picked.is_empty() && !order.is_empty();
    if fallback {
        picked.push(order[0]);
    }

    let mut keys = KeySet {
        fallback,
        ..KeySet::default()
    };
    for &i in &picked {
        keys.selected_units.push(units[i].start);
        for &u in &units[i].utterances {
            let prov = keys.provenance.entry(u).or_default();
            if prov.is_empty() {
                keys.utterances.push(u);
            }
            prov.push(units[i].start);
        }
    }
    keys.utterances.sort_unstable();
    keys
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Share of answerable questions with a gold utterance in the key set.
    pub recall: f64,
    pub mean_keyset_size: f64,
    pub answerable: usize,
    pub questions: usize,
}

pub fn coverage_recall<'a>(pairs: impl IntoIterator<Item = (&'a KeySet, &'a Question)>) -> CoverageReport {
    let (mut hits, mut answerable, mut questions, mut size) = (0usize, 0usize, 0usize, 0usize);
    for (keys, q) in pairs {
        questions += 1;
        size += keys.len();
        if q.answerable {
            answerable += 1;
            if q.answer_utterances().iter().any(|&u| keys.contains(u)) {
                hits += 1;
            }
        }
    }
    CoverageReport {
        recall: if answerable == 0 { 0.0 } else { hits as f64 / answerable as f64 },
        mean_keyset_size: if questions == 0 { 0.0 } else { size as f64 / questions as f64 },
        answerable,
        questions,
    }
}
