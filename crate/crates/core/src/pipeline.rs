//! Composition of the stages: example preparation, the two training loops,
//! key extraction and prediction.
//!
//! The extractor and the QA model own separate parameter stores (prefixes
//! `extractor` and `qa`), each with its own encoder.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{resolve_question_speakers, CorpusEntry, Dialogue, Question, SpeakerMention};
use crate::encoder::{encode, EmbeddingSource, EncoderMode, EncoderOutput, ToyEncoder};
use crate::extractor::{extract_keys, extraction_loss, form_units, label_units, KeySet, Unit, UnitScorer};
use crate::gat::{pool_node_inits, Gat, GatOutput};
use crate::graph::{build_graph, QuisgGraph};
use crate::metrics::Predictions;
use crate::optim::Adam;
use crate::span::{decode, no_answer_probability, qa_loss, to_words, write_back, GoldTarget, HeadLogits, LossOptions, SpanHeads, SpanLayout};
use crate::textseq::{build_sequence, AlignmentMap, TokenSequence, Tokenizer};
use crate::{Error, Gradients, ParameterStore, PipelineConfig, Result, Tape, Var};

pub const EXTRACTOR_PREFIX: &str = "extractor";
pub const QA_PREFIX: &str = "qa";

/// Seed offset of the QA store so the two stages draw different weights.
const QA_SEED_OFFSET: u64 = 0x5153_4721;

/// One question made ready for every stage.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Index of the dialogue in the corpus.
    pub entry: usize,
    pub question: Question,
    pub seq: TokenSequence,
    pub map: AlignmentMap,
    pub mentions: Vec<SpeakerMention>,
    /// Units of the configured window, labelled against the gold answers.
    pub units: Vec<Unit>,
}

/// External person-name recognitions, keyed by question id.
pub type NerTable = BTreeMap<String, Vec<String>>;

pub fn prepare_corpus(
    corpus: &[CorpusEntry],
    cfg: &PipelineConfig,
    tokenizer: &dyn Tokenizer,
    ner: Option<&NerTable>,
) -> Result<Vec<Prepared>> {
    let mut out = Vec::new();
    for (entry, e) in corpus.iter().enumerate() {
        e.validate()?;
        for q in &e.questions {
            let (seq, map) = build_sequence(q, &e.dialogue, tokenizer, cfg.sequence())?;
            let names = ner.map(|t| t.get(&q.id).map(Vec::as_slice).unwrap_or(&[]));
            let mentions = resolve_question_speakers(q, &e.dialogue, names);
            let mut units = form_units(&e.dialogue, &map, cfg.m);
            label_units(&mut units, q);
            out.push(Prepared {
                entry,
                question: q.clone(),
                seq,
                map,
                mentions,
                units,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(out)
}

/// Training target of a prepared question in context positions.
pub fn gold_target(p: &Prepared) -> Result<GoldTarget> {
    if !p.question.answerable {
        return Ok(GoldTarget::NoAnswer);
    }
    let first = &p.question.answers[0];
    let span = p.map.answer_token_spans.first().copied().flatten().ok_or(Error::UnmappableSpan {
        utterance: first.utterance_index,
    })?;
    let ctx = p.seq.context_range.start;
    Ok(GoldTarget::Span {
        start: span.start - ctx,
        end: span.end - 1 - ctx,
    })
}

fn encode_prepared(
    tape: &mut Tape,
    store: &ParameterStore,
    encoder: Option<&ToyEncoder>,
    embeddings: Option<&dyn EmbeddingSource>,
    p: &Prepared,
    width: usize,
) -> Result<EncoderOutput> {
    let mode = match (encoder, embeddings) {
        (Some(e), _) => EncoderMode::Toy(e),
        (None, Some(src)) => EncoderMode::FileBacked(src),
        (None, None) => return Err(Error::Config("no encoder and no embeddings".into())),
    };
    encode(tape, store, &p.seq, &p.question.id, mode, width)
}

#[derive(Clone, Debug)]
pub struct ExtractorModel {
    pub encoder: Option<ToyEncoder>,
    pub scorer: UnitScorer,
}

impl ExtractorModel {
    /// A fresh store for the extractor stage.
    pub fn new_store(cfg: &PipelineConfig) -> ParameterStore {
        ParameterStore::new(cfg.seed)
    }

    /// `toy_encoder = false` expects precomputed embeddings at run time.
    pub fn register(store: &mut ParameterStore, cfg: &PipelineConfig, toy_encoder: bool) -> Result<Self> {
        let encoder = if toy_encoder {
            Some(ToyEncoder::register(store, &format!("{EXTRACTOR_PREFIX}.enc"), cfg.encoder())?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            scorer: UnitScorer::register(store, EXTRACTOR_PREFIX, cfg.d_model)?,
        })
    }

    pub fn attach(store: &ParameterStore, cfg: &PipelineConfig, toy_encoder: bool) -> Result<Self> {
        let encoder = if toy_encoder {
            Some(ToyEncoder::attach(store, &format!("{EXTRACTOR_PREFIX}.enc"), cfg.encoder())?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            scorer: UnitScorer::attach(store, EXTRACTOR_PREFIX)?,
        })
    }

    pub fn loss(&self, tape: &mut Tape, store: &ParameterStore, p: &Prepared, cfg: &PipelineConfig, emb: Option<&dyn EmbeddingSource>) -> Result<Var> {
        let enc = encode_prepared(tape, store, self.encoder.as_ref(), emb, p, cfg.d_model)?;
        let logits = self.scorer.unit_logits(tape, store, &enc, &p.units)?;
        extraction_loss(tape, &logits, &p.units)
    }

    pub fn scores(&self, tape: &mut Tape, store: &ParameterStore, p: &Prepared, cfg: &PipelineConfig, emb: Option<&dyn EmbeddingSource>) -> Result<Vec<f64>> {
        let enc = encode_prepared(tape, store, self.encoder.as_ref(), emb, p, cfg.d_model)?;
        self.scorer.score_units(tape, store, &enc, &p.units)
    }
}

/// Key set of one question plus the unit scores it came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub utterances: Vec<usize>,
    pub scores: Vec<f64>,
    #[serde(skip)]
    pub keyset: KeySet,
}

impl Extraction {
    /// Rebuilds from exported `utterances` and `scores`.
    pub fn from_export(utterances: Vec<usize>, scores: Vec<f64>) -> Self {
        Self {
            keyset: KeySet::from_utterances(utterances.iter().copied()),
            utterances,
            scores,
        }
    }
}

pub fn extract(
    model: &ExtractorModel,
    store: &ParameterStore,
    prepared: &[Prepared],
    cfg: &PipelineConfig,
    emb: Option<&dyn EmbeddingSource>,
) -> Result<BTreeMap<String, Extraction>> {
    let mut out = BTreeMap::new();
    for p in prepared {
        let mut tape = Tape::new();
        let scores = model.scores(&mut tape, store, p, cfg, emb)?;
        let keyset = extract_keys(&p.units, &scores, cfg.k);
        out.insert(
            p.question.id.clone(),
            Extraction {
                utterances: keyset.utterances.clone(),
                scores,
                keyset,
            },
        );
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct QaModel {
    pub encoder: Option<ToyEncoder>,
    pub gat: Gat,
    pub heads: SpanHeads,
}

pub struct QaForward {
    pub enc: EncoderOutput,
    pub graph: QuisgGraph,
    pub gat: GatOutput,
    pub context: Var,
    pub logits: HeadLogits,
}

impl QaModel {
    pub fn new_store(cfg: &PipelineConfig) -> ParameterStore {
        ParameterStore::new(cfg.seed.wrapping_add(QA_SEED_OFFSET))
    }

    pub fn register(store: &mut ParameterStore, cfg: &PipelineConfig, toy_encoder: bool) -> Result<Self> {
        let encoder = if toy_encoder {
            Some(ToyEncoder::register(store, &format!("{QA_PREFIX}.enc"), cfg.encoder())?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            gat: Gat::register(store, &format!("{QA_PREFIX}.gat"), cfg.gat())?,
            heads: SpanHeads::register(store, QA_PREFIX, cfg.d_model, cfg.unanswerable)?,
        })
    }

    pub fn attach(store: &ParameterStore, cfg: &PipelineConfig, toy_encoder: bool) -> Result<Self> {
        let encoder = if toy_encoder {
            Some(ToyEncoder::attach(store, &format!("{QA_PREFIX}.enc"), cfg.encoder())?)
        } else {
            None
        };
        Ok(Self {
            encoder,
            gat: Gat::attach(store, &format!("{QA_PREFIX}.gat"), cfg.gat())?,
            heads: SpanHeads::attach(store, QA_PREFIX, cfg.unanswerable)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        p: &Prepared,
        dialogue: &Dialogue,
        keyset: &KeySet,
        cfg: &PipelineConfig,
        emb: Option<&dyn EmbeddingSource>,
    ) -> Result<QaForward> {
        let enc = encode_prepared(tape, store, self.encoder.as_ref(), emb, p, cfg.d_model)?;
        let graph = build_graph(&p.question, &p.mentions, keyset, dialogue, &p.map, &p.seq, cfg.k_w)?;
        let init = pool_node_inits(tape, enc.hidden, &graph)?;
        let gat = self.gat.forward(tape, store, &graph, init)?;
        let updated = write_back(tape, &enc, &graph, gat.states)?;
        let logits = self.heads.forward(tape, store, updated.hidden, &enc)?;
        Ok(QaForward {
            enc,
            graph,
            gat,
            context: updated.hidden,
            logits,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParameterStore,
        p: &Prepared,
        dialogue: &Dialogue,
        keyset: &KeySet,
        cfg: &PipelineConfig,
        emb: Option<&dyn EmbeddingSource>,
    ) -> Result<Var> {
        let gold = gold_target(p)?;
        let fwd = self.forward(tape, store, p, dialogue, keyset, cfg, emb)?;
        qa_loss(tape, &fwd.logits, gold, loss_options(cfg))
    }
}

pub fn loss_options(cfg: &PipelineConfig) -> LossOptions {
    LossOptions {
        na_weight: cfg.na_weight,
        na_label_is_unanswerable: cfg.na_label_is_unanswerable,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-question loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Shuffled mini-batch Adam over `items`. `loss` returns `None` for items
/// that do not train in the current mode.
fn train_loop<F>(store: &mut ParameterStore, items: usize, batch: usize, epochs: usize, lr: f64, seed: u64, loss: F) -> Result<TrainLog>
where
    F: Fn(&ParameterStore, &mut Tape, usize) -> Result<Option<Var>>,
{
    let adam = Adam::new(lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items).collect();
    let mut log = TrainLog::default();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let (mut total, mut counted) = (0.0, 0usize);
        for chunk in order.chunks(batch.max(1)) {
            let mut grads = Gradients::for_store(store);
            let mut used = 0usize;
            for &i in chunk {
                let mut tape = Tape::new();
                if let Some(l) = loss(store, &mut tape, i)? {
                    total += tape.scalar(l)?;
                    tape.backward(l, &mut grads)?;
                    used += 1;
                }
            }
            if used == 0 {
                continue;
            }
            counted += used;
            grads.scale(1.0 / used as f64);
            grads.fill_missing();
            adam.step(store, &grads)?;
            log.steps += 1;
        }
        log.epoch_losses.push(if counted == 0 { 0.0 } else { total / counted as f64 });
    }
    Ok(log)
}

pub fn train_extractor(
    model: &ExtractorModel,
    store: &mut ParameterStore,
    prepared: &[Prepared],
    cfg: &PipelineConfig,
    emb: Option<&dyn EmbeddingSource>,
) -> Result<TrainLog> {
    if prepared.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    train_loop(store, prepared.len(), cfg.batch_size, cfg.extractor_epochs, cfg.extractor_lr, cfg.seed, |s, t, i| {
        model.loss(t, s, &prepared[i], cfg, emb).map(Some)
    })
}

/// Trains span extraction on the given key sets. In answerable-only mode
/// unanswerable questions are skipped.
pub fn train_qa(
    model: &QaModel,
    store: &mut ParameterStore,
    corpus: &[CorpusEntry],
    prepared: &[Prepared],
    keys: &BTreeMap<String, Extraction>,
    cfg: &PipelineConfig,
    emb: Option<&dyn EmbeddingSource>,
) -> Result<TrainLog> {
    if prepared.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let keysets: Vec<&KeySet> = prepared
        .iter()
        .map(|p| keys.get(&p.question.id).map(|e| &e.keyset).ok_or_else(|| Error::UnknownQuestion(p.question.id.clone())))
        .collect::<Result<_>>()?;
    train_loop(store, prepared.len(), cfg.batch_size, cfg.qa_epochs, cfg.lr, cfg.seed.wrapping_add(QA_SEED_OFFSET), |s, t, i| {
        let p = &prepared[i];
        if !p.question.answerable && !cfg.unanswerable {
            return Ok(None);
        }
        model.loss(t, s, p, &corpus[p.entry].dialogue, keysets[i], cfg, emb).map(Some)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanRef {
    pub utterance: usize,
    pub start_word: usize,
    pub end_word: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub text: String,
    pub span: SpanRef,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub answer: Option<String>,
    pub span: Option<SpanRef>,
    pub score: f64,
    pub n_best: Vec<NBestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_answer_probability: Option<f64>,
}

pub fn predict_one(
    model: &QaModel,
    store: &ParameterStore,
    p: &Prepared,
    dialogue: &Dialogue,
    keyset: &KeySet,
    cfg: &PipelineConfig,
    emb: Option<&dyn EmbeddingSource>,
) -> Result<PredictionRecord> {
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, store, p, dialogue, keyset, cfg, emb)?;
    let start = tape.value(fwd.logits.start).data().to_vec();
    let end = tape.value(fwd.logits.end).data().to_vec();
    let layout = SpanLayout::new(&p.seq, &p.map, keyset);
    let decoded = decode(&start, &end, &layout, cfg.decode())?;
    let mut n_best = Vec::with_capacity(decoded.n_best.len());
    for c in &decoded.n_best {
        let w = to_words(c, &p.seq, &p.map, dialogue)?;
        n_best.push(NBestEntry {
            text: w.text,
            span: SpanRef {
                utterance: w.utterance,
                start_word: w.start_word,
                end_word: w.end_word,
            },
            score: c.score,
        });
    }
    let p_na = match fwd.logits.na {
        Some(z) => Some(no_answer_probability(tape.scalar(z)?, loss_options(cfg))),
        None => None,
    };
    let abstain = cfg.unanswerable && p_na.is_some_and(|p| p > cfg.na_threshold);
    let best = &n_best[0];
    Ok(PredictionRecord {
        answer: (!abstain).then(|| best.text.clone()),
        span: (!abstain).then(|| best.span.clone()),
        score: decoded.best.score,
        n_best,
        no_answer_probability: p_na,
    })
}

pub fn predict(
    model: &QaModel,
    store: &ParameterStore,
    corpus: &[CorpusEntry],
    prepared: &[Prepared],
    keys: &BTreeMap<String, Extraction>,
    cfg: &PipelineConfig,
    emb: Option<&dyn EmbeddingSource>,
) -> Result<BTreeMap<String, PredictionRecord>> {
    let mut out = BTreeMap::new();
    for p in prepared {
        let keyset = &keys.get(&p.question.id).ok_or_else(|| Error::UnknownQuestion(p.question.id.clone()))?.keyset;
        let rec = predict_one(model, store, p, &corpus[p.entry].dialogue, keyset, cfg, emb)?;
        out.insert(p.question.id.clone(), rec);
    }
    Ok(out)
}

pub fn answers(records: &BTreeMap<String, PredictionRecord>) -> Predictions {
    records.iter().map(|(k, r)| (k.clone(), r.answer.clone())).collect()
}

/// Everything produced by an in-process run of all stages.
pub struct Fitted {
    pub extractor_store: ParameterStore,
    pub qa_store: ParameterStore,
    pub extractor: ExtractorModel,
    pub qa: QaModel,
    pub extractor_log: TrainLog,
    pub qa_log: TrainLog,
    pub keys: BTreeMap<String, Extraction>,
}

/// Trains the extractor, extracts key sets, then trains the QA model on them.
pub fn fit(corpus: &[CorpusEntry], prepared: &[Prepared], cfg: &PipelineConfig) -> Result<Fitted> {
    cfg.validate()?;
    let mut extractor_store = ExtractorModel::new_store(cfg);
    let extractor = ExtractorModel::register(&mut extractor_store, cfg, true)?;
    let extractor_log = train_extractor(&extractor, &mut extractor_store, prepared, cfg, None)?;
    let keys = extract(&extractor, &extractor_store, prepared, cfg, None)?;
    let mut qa_store = QaModel::new_store(cfg);
    let qa = QaModel::register(&mut qa_store, cfg, true)?;
    let qa_log = train_qa(&qa, &mut qa_store, corpus, prepared, &keys, cfg, None)?;
    Ok(Fitted {
        extractor_store,
        qa_store,
        extractor,
        qa,
        extractor_log,
        qa_log,
        keys,
    })
}

/// `J_k + J` for one question with every stage in a single store, key
/// utterances chosen by the current extractor scores.
pub fn composed_loss(
    extractor: &ExtractorModel,
    qa: &QaModel,
    store: &ParameterStore,
    tape: &mut Tape,
    p: &Prepared,
    dialogue: &Dialogue,
    cfg: &PipelineConfig,
) -> Result<Var> {
    let enc = encode_prepared(tape, store, extractor.encoder.as_ref(), None, p, cfg.d_model)?;
    let logits = extractor.scorer.unit_logits(tape, store, &enc, &p.units)?;
    let scores: Vec<f64> = logits
        .iter()
        .map(|&z| tape.scalar(z).map(|z| 1.0 / (1.0 + libm::exp(-z))))
        .collect::<Result<_>>()?;
    let keyset = extract_keys(&p.units, &scores, cfg.k);
    let jk = extraction_loss(tape, &logits, &p.units)?;
    let j = qa.loss(tape, store, p, dialogue, &keyset, cfg, None)?;
    tape.add(jk, j)
}

/// A store holding both stages, for gradient checks of the whole chain.
pub fn composed_store(cfg: &PipelineConfig) -> Result<(ParameterStore, ExtractorModel, QaModel)> {
    cfg.validate()?;
    let mut store = ParameterStore::new(cfg.seed);
    let extractor = ExtractorModel::register(&mut store, cfg, true)?;
    let qa = QaModel::register(&mut store, cfg, true)?;
    Ok((store, extractor, qa))
}
