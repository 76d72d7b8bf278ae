//! Answer extraction: node write-back, span heads, loss and decoding.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::encoder::EncoderOutput;
use crate::extractor::KeySet;
use crate::graph::{NodeType, QuisgGraph};
use crate::textseq::{AlignmentMap, TokenSequence};
use crate::{Error, ParamId, ParameterStore, Result, Tape, Var};

/// `H_C'`: context rows after node states are added back.
pub struct UpdatedContext {
    pub hidden: Var,
    /// Per context token, whether some node wrote to it.
    pub update_mask: Vec<bool>,
}

/// Adds every word node's final state to its token and every dialogue
/// speaker's state to each of its name tokens in the key utterances.
pub fn write_back(tape: &mut Tape, enc: &EncoderOutput, graph: &QuisgGraph, states: Var) -> Result<UpdatedContext> {
    let base = enc.context_slice(tape)?;
    let ctx = enc.context;
    let mut pairs = Vec::new();
    let mut update_mask = alloc::vec![false; ctx.len()];
    for (i, v) in graph.nodes().iter().enumerate() {
        if !matches!(v.node_type, NodeType::Ds | NodeType::Dw) {
            continue;
        }
        for &r in &v.rows {
            if !ctx.contains(r) {
                return Err(Error::NodeOutOfContext { node: i });
            }
            pairs.push((i, r - ctx.start));
            update_mask[r - ctx.start] = true;
        }
    }
    let hidden = tape.index_add(base, states, &pairs)?;
    Ok(UpdatedContext { hidden, update_mask })
}

#[derive(Clone, Copy, Debug)]
pub struct SpanHeads {
    start: ParamId,
    end: ParamId,
    na: Option<(ParamId, ParamId)>,
}

pub struct HeadLogits {
    /// `1 × L_C`.
    pub start: Var,
    /// `1 × L_C`.
    pub end: Var,
    /// Pre-sigmoid answerability score, when the head exists.
    pub na: Option<Var>,
}

impl SpanHeads {
    pub fn register(store: &mut ParameterStore, prefix: &str, d_model: usize, answerability: bool) -> Result<Self> {
        let start = store.uniform(&format!("{prefix}.start.w"), d_model, 1, d_model)?;
        let end = store.uniform(&format!("{prefix}.end.w"), d_model, 1, d_model)?;
        let na = if answerability {
            Some((
                store.uniform(&format!("{prefix}.na.w"), d_model, 1, d_model)?,
                store.zeros(&format!("{prefix}.na.b"), 1, 1)?,
            ))
        } else {
            None
        };
        Ok(Self { start, end, na })
    }

    pub fn attach(store: &ParameterStore, prefix: &str, answerability: bool) -> Result<Self> {
        let na = if answerability {
            Some((store.require(&format!("{prefix}.na.w"))?, store.require(&format!("{prefix}.na.b"))?))
        } else {
            None
        };
        Ok(Self {
            start: store.require(&format!("{prefix}.start.w"))?,
            end: store.require(&format!("{prefix}.end.w"))?,
            na,
        })
    }

    pub fn start_weight(&self) -> ParamId {
        self.start
    }

    pub fn end_weight(&self) -> ParamId {
        self.end
    }

    /// Start and end logits over `context` (`L_C × d`), answerability from
    /// the untouched `[CLS]` row of the encoder.
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, context: Var, enc: &EncoderOutput) -> Result<HeadLogits> {
        let ws = tape.param(store, self.start)?;
        let we = tape.param(store, self.end)?;
        let s = tape.matmul(context, ws)?;
        let e = tape.matmul(context, we)?;
        let start = tape.transpose(s)?;
        let end = tape.transpose(e)?;
        let na = match self.na {
            Some((w, b)) => {
                let cls = tape.slice_rows(enc.hidden, 0, 1)?;
                let w = tape.param(store, w)?;
                let b = tape.param(store, b)?;
                let z = tape.matmul(cls, w)?;
                Some(tape.add(z, b)?)
            }
            None => None,
        };
        Ok(HeadLogits { start, end, na })
    }
}

/// Training target in context positions; `end` is inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoldTarget {
    Span { start: usize, end: usize },
    NoAnswer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub na_weight: f64,
    pub na_label_is_unanswerable: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            na_weight: 0.5,
            na_label_is_unanswerable: true,
        }
    }
}

/// `J = J_ax + w · J_na`; `J_na` only when the head exists, `J_ax` only for
/// answerable targets.
pub fn qa_loss(tape: &mut Tape, logits: &HeadLogits, gold: GoldTarget, options: LossOptions) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    if let GoldTarget::Span { start, end } = gold {
        terms.push(tape.cross_entropy(logits.start, start)?);
        terms.push(tape.cross_entropy(logits.end, end)?);
    }
    match (logits.na, gold) {
        (Some(z), _) => {
            let unanswerable = gold == GoldTarget::NoAnswer;
            let label = if unanswerable == options.na_label_is_unanswerable { 1.0 } else { 0.0 };
            let j = tape.bce_with_logits(z, label)?;
            terms.push(tape.scale(j, options.na_weight)?);
        }
        (None, GoldTarget::NoAnswer) => {
            return Err(Error::Config("unanswerable question without an answerability head".into()));
        }
        (None, _) => {}
    }
    tape.add_all(&terms)
}

/// Probability that the question has no answer.
pub fn no_answer_probability(logit: f64, options: LossOptions) -> f64 {
    let p = 1.0 / (1.0 + libm::exp(-logit));
    if options.na_label_is_unanswerable {
        p
    } else {
        1.0 - p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub f: f64,
    pub beam: usize,
    pub max_answer_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            f: 0.5,
            beam: 5,
            max_answer_len: 30,
        }
    }
}

/// What decoding needs to know about each context position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanLayout {
    /// Utterance of text tokens; `None` for speakers, colons and separators.
    pub utterance: Vec<Option<usize>>,
    /// Token lies in a key utterance (name, colon or text).
    pub key: Vec<bool>,
}

impl SpanLayout {
    pub fn new(seq: &TokenSequence, map: &AlignmentMap, keyset: &KeySet) -> Self {
        let ctx = seq.context_range;
        let mut utterance = alloc::vec![None; ctx.len()];
        let mut key = alloc::vec![false; ctx.len()];
        for (u, span) in map.utterance_token_span.iter().enumerate() {
            let Some(span) = span else { continue };
            for t in span.iter() {
                if seq.kinds[t].is_text() {
                    utterance[t - ctx.start] = Some(u);
                }
            }
            if keyset.contains(u) {
                let from = map.speaker_token_spans[u].map_or(span.start, |s| s.start);
                for t in from..span.end {
                    key[t - ctx.start] = true;
                }
            }
        }
        Self { utterance, key }
    }

    pub fn len(&self) -> usize {
        self.utterance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterance.is_empty()
    }

    pub fn is_legal(&self, start: usize, end: usize, max_len: usize) -> bool {
        start <= end
            && end < self.len()
            && end - start < max_len
            && self.utterance[start].is_some()
            && (start..=end).all(|t| self.utterance[t] == self.utterance[start])
    }
}

/// Candidate answer in context positions; `end` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    /// `log p_start + log p_end` after scaling.
    pub score: f64,
    pub utterance: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub best: SpanPrediction,
    pub n_best: Vec<SpanPrediction>,
}

/// Multiplies logits outside key utterances by `f`.
pub fn scale_logits(logits: &[f64], layout: &SpanLayout, f: f64) -> Vec<f64> {
    logits
        .iter()
        .zip(&layout.key)
        .map(|(&z, &k)| if k { z } else { z * f })
        .collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + libm::log(z.iter().map(|&v| libm::exp(v - mx)).sum::<f64>());
    z.iter().map(|&v| v - lse).collect()
}

fn top_by(indices: impl Iterator<Item = usize>, score: &[f64], n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = indices.collect();
    v.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    v.truncate(n);
    v
}

/// Beam over start positions, then over ends inside the same utterance.
pub fn decode(start_logits: &[f64], end_logits: &[f64], layout: &SpanLayout, options: DecodeOptions) -> Result<Decoded> {
    if start_logits.len() != layout.len() || end_logits.len() != layout.len() {
        return Err(Error::Dimension {
            op: "decode",
            detail: format!("{} / {} logits for {} positions", start_logits.len(), end_logits.len(), layout.len()),
        });
    }
    let ps = log_softmax(&scale_logits(start_logits, layout, options.f));
    let pe = log_softmax(&scale_logits(end_logits, layout, options.f));
    let starts = top_by((0..layout.len()).filter(|&t| layout.utterance[t].is_some()), &ps, options.beam);

    let mut cands = Vec::new();
    for s in starts {
        let u = layout.utterance[s].expect("legal start");
        let ends = (s..layout.len())
            .take(options.max_answer_len)
            .take_while(|&e| layout.utterance[e] == Some(u));
        for e in top_by(ends, &pe, options.beam) {
            cands.push(SpanPrediction {
                start: s,
                end: e,
                score: ps[s] + pe[e],
                utterance: u,
            });
        }
    }
    cands.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.start, a.end).cmp(&(b.start, b.end))));
    cands.truncate(options.beam);
    let best = cands.first().cloned().ok_or(Error::EmptyInterval { op: "decode" })?;
    Ok(Decoded { best, n_best: cands })
}

/// A decoded span mapped back onto dialogue words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordSpan {
    pub utterance: usize,
    pub start_word: usize,
    pub end_word: usize,
    pub text: String,
}

/// Words covering the tokens of `span`.
pub fn to_words(span: &SpanPrediction, seq: &TokenSequence, map: &AlignmentMap, dialogue: &Dialogue) -> Result<WordSpan> {
    let words = map.word_token_spans.get(span.utterance).ok_or(Error::UnmappableSpan { utterance: span.utterance })?;
    let (s, e) = (span.start + seq.context_range.start, span.end + seq.context_range.start);
    let find = |t: usize| words.iter().position(|w| w.contains(t));
    match (find(s), find(e)) {
        (Some(a), Some(b)) => Ok(WordSpan {
            utterance: span.utterance,
            start_word: a,
            end_word: b,
            text: dialogue.utterances[span.utterance].words[a..=b].join(" "),
        }),
        _ => Err(Error::UnmappableSpan { utterance: span.utterance }),
    }
}
