//! Contextual token representations behind one contract.
//!
//! [`ToyEncoder`] is trainable: hashed token embeddings plus sinusoidal
//! positions, followed by mixing layers `X <- X + elu(window_mean(X) W + b)`.
//! Each mixing layer looks two tokens to each side, so a token change moves
//! at most `2 * layers` rows on either side.
//!
//! [`EmbeddingSource`] serves precomputed matrices, e.g. exported from a large
//! pretrained model, verbatim.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::hash::Hasher;

use serde::{Deserialize, Serialize};

use crate::textseq::{TokenSequence, TokenSpan};
use crate::{Error, ParamId, ParameterStore, Result, Tape, Tensor, Var};

pub const MIX_RADIUS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    pub d_model: usize,
    pub mix_layers: usize,
    pub vocab: usize,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            mix_layers: 2,
            vocab: 4096,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyEncoder {
    cfg: ToyEncoderConfig,
    embed: ParamId,
    mix: Vec<(ParamId, ParamId)>,
}

/// Hash bucket of a token; case-insensitive.
pub fn token_bucket(token: &str, vocab: usize) -> usize {
    let mut h = fnv::FnvHasher::default();
    for c in token.chars().flat_map(char::to_lowercase) {
        let mut buf = [0u8; 4];
        h.write(c.encode_utf8(&mut buf).as_bytes());
    }
    (h.finish() % vocab as u64) as usize
}

/// Standard sinusoidal position table, `len × d`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / libm::pow(10_000.0, 2.0 * pair / d as f64);
            let v = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
            t.set(pos, i, v);
        }
    }
    t
}

impl ToyEncoder {
    pub fn register(store: &mut ParameterStore, prefix: &str, cfg: ToyEncoderConfig) -> Result<Self> {
        if cfg.d_model == 0 || cfg.vocab == 0 {
            return Err(Error::Config(format!("toy encoder needs d_model > 0 and vocab > 0, got {cfg:?}")));
        }
        let embed = store.uniform(&format!("{prefix}.embed"), cfg.vocab, cfg.d_model, 1)?;
        let mut mix = Vec::with_capacity(cfg.mix_layers);
        for l in 0..cfg.mix_layers {
            let w = store.uniform(&format!("{prefix}.mix{l}.w"), cfg.d_model, cfg.d_model, cfg.d_model)?;
            let b = store.zeros(&format!("{prefix}.mix{l}.b"), 1, cfg.d_model)?;
            mix.push((w, b));
        }
        Ok(Self { cfg, embed, mix })
    }

    /// Re-attaches to parameters already present in `store`, e.g. after
    /// loading a checkpoint.
    pub fn attach(store: &ParameterStore, prefix: &str, cfg: ToyEncoderConfig) -> Result<Self> {
        let embed = store.require(&format!("{prefix}.embed"))?;
        let mix = (0..cfg.mix_layers)
            .map(|l| {
                Ok((
                    store.require(&format!("{prefix}.mix{l}.w"))?,
                    store.require(&format!("{prefix}.mix{l}.b"))?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg, embed, mix })
    }

    pub fn config(&self) -> ToyEncoderConfig {
        self.cfg
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, tokens: &[String]) -> Result<Var> {
        let rows: Vec<usize> = tokens.iter().map(|t| token_bucket(t, self.cfg.vocab)).collect();
        let emb = tape.embed(store, self.embed, &rows)?;
        let pos = tape.constant(sinusoidal_positions(tokens.len(), self.cfg.d_model))?;
        let mut x = tape.add(emb, pos)?;
        for &(w, b) in &self.mix {
            let w = tape.param(store, w)?;
            let b = tape.param(store, b)?;
            let ctx = tape.window_mean(x, MIX_RADIUS)?;
            let lin = tape.matmul(ctx, w)?;
            let lin = tape.add_row(lin, b)?;
            let act = tape.elu(lin)?;
            x = tape.add(x, act)?;
        }
        Ok(x)
    }
}

/// Precomputed `L_QC × d_h` matrices keyed by sequence id.
pub trait EmbeddingSource {
    fn lookup(&self, sequence_id: &str) -> Option<&Tensor>;
}

impl EmbeddingSource for BTreeMap<String, Tensor> {
    fn lookup(&self, sequence_id: &str) -> Option<&Tensor> {
        self.get(sequence_id)
    }
}

#[derive(Clone, Copy)]
pub enum EncoderMode<'a> {
    Toy(&'a ToyEncoder),
    FileBacked(&'a dyn EmbeddingSource),
}

/// `H_QC` with its question and context views.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub hidden: Var,
    pub rows: usize,
    pub width: usize,
    pub question: TokenSpan,
    pub context: TokenSpan,
}

impl EncoderOutput {
    /// `H_Q` as its own value on the tape.
    pub fn question_slice(&self, tape: &mut Tape) -> Result<Var> {
        tape.slice_rows(self.hidden, self.question.start, self.question.len())
    }

    /// `H_C` as its own value on the tape.
    pub fn context_slice(&self, tape: &mut Tape) -> Result<Var> {
        tape.slice_rows(self.hidden, self.context.start, self.context.len())
    }
}

pub fn encode(
    tape: &mut Tape,
    store: &ParameterStore,
    seq: &TokenSequence,
    sequence_id: &str,
    mode: EncoderMode<'_>,
    width: usize,
) -> Result<EncoderOutput> {
    let hidden = match mode {
        EncoderMode::Toy(enc) => enc.forward(tape, store, &seq.tokens)?,
        EncoderMode::FileBacked(src) => {
            let t = src
                .lookup(sequence_id)
                .ok_or_else(|| Error::MissingEmbedding(String::from(sequence_id)))?;
            if t.shape() != [seq.len(), width] {
                return Err(Error::EmbeddingShape {
                    id: String::from(sequence_id),
                    expected: [seq.len(), width],
                    found: t.shape(),
                });
            }
            tape.constant(t.clone())?
        }
    };
    let [rows, w] = tape.shape(hidden);
    Ok(EncoderOutput {
        hidden,
        rows,
        width: w,
        question: seq.question_range,
        context: seq.context_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_words, Dialogue, Question};
    use crate::gradcheck::finite_diff_check;
    use crate::textseq::{build_sequence, SequenceOptions, WhitespaceTokenizer};
    use alloc::vec;

    fn seq(text: &str) -> TokenSequence {
        let d = Dialogue::new(
            "d",
            None,
            vec![("A".into(), split_words(text)), ("B".into(), split_words("and then some more words here"))],
        )
        .unwrap();
        let q = Question::new("q", split_words("what happened"), vec![]);
        build_sequence(&q, &d, &WhitespaceTokenizer, SequenceOptions::default()).unwrap().0
    }

    fn small() -> ToyEncoderConfig {
        ToyEncoderConfig {
            d_model: 6,
            mix_layers: 2,
            vocab: 32,
        }
    }

    #[test]
    fn deterministic_for_same_seed() {
        let run = || {
            let mut store = ParameterStore::new(4);
            let enc = ToyEncoder::register(&mut store, "e", small()).unwrap();
            let mut t = Tape::new();
            let s = seq("we went to the beach");
            let out = encode(&mut t, &store, &s, "q", EncoderMode::Toy(&enc), 6).unwrap();
            t.value(out.hidden).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn one_token_change_stays_local() {
        let mut store = ParameterStore::new(4);
        let cfg = small();
        let enc = ToyEncoder::register(&mut store, "e", cfg).unwrap();
        let a = seq("we went to the beach yesterday at noon");
        let b = seq("we went to the river yesterday at noon");
        let changed = a.tokens.iter().position(|t| t == "beach").unwrap();
        let mut t = Tape::new();
        let ha = enc.forward(&mut t, &store, &a.tokens).unwrap();
        let hb = enc.forward(&mut t, &store, &b.tokens).unwrap();
        let reach = MIX_RADIUS * cfg.mix_layers;
        for r in 0..a.len() {
            let same = t.value(ha).row(r) == t.value(hb).row(r);
            if r.abs_diff(changed) > reach {
                assert!(same, "row {r} changed");
            }
        }
        assert!(t.value(ha).row(changed) != t.value(hb).row(changed));
    }

    #[test]
    fn file_backed_is_verbatim() {
        let s = seq("x y");
        let mut src = BTreeMap::new();
        let m = Tensor::from_vec(s.len(), 16, (0..s.len() * 16).map(|i| i as f64 * 0.5).collect()).unwrap();
        src.insert(String::from("q1"), m.clone());
        let store = ParameterStore::new(0);
        let mut t = Tape::new();
        let out = encode(&mut t, &store, &s, "q1", EncoderMode::FileBacked(&src), 16).unwrap();
        assert_eq!(t.value(out.hidden), &m);

        assert_eq!(
            encode(&mut t, &store, &s, "q2", EncoderMode::FileBacked(&src), 16).unwrap_err(),
            Error::MissingEmbedding("q2".into())
        );
        assert!(matches!(
            encode(&mut t, &store, &s, "q1", EncoderMode::FileBacked(&src), 8),
            Err(Error::EmbeddingShape { .. })
        ));
    }

    #[test]
    fn slices_partition_declared_ranges() {
        let s = seq("a b c");
        let mut store = ParameterStore::new(1);
        let enc = ToyEncoder::register(&mut store, "e", small()).unwrap();
        let mut t = Tape::new();
        let out = encode(&mut t, &store, &s, "q", EncoderMode::Toy(&enc), 6).unwrap();
        let hq = out.question_slice(&mut t).unwrap();
        let hc = out.context_slice(&mut t).unwrap();
        assert_eq!(t.shape(hq)[0], s.question_range.len());
        assert_eq!(t.shape(hc)[0], s.context_len());
        assert!(s.question_range.end <= s.context_range.start);
        assert_eq!(t.value(hc).row(0), t.value(out.hidden).row(s.context_range.start));
    }

    #[test]
    fn gradients_flow_through_encoder() {
        let s = seq("p q r");
        let mut store = ParameterStore::new(2);
        let enc = ToyEncoder::register(
            &mut store,
            "e",
            ToyEncoderConfig {
                d_model: 4,
                mix_layers: 2,
                vocab: 8,
            },
        )
        .unwrap();
        let f = |st: &ParameterStore, t: &mut Tape| {
            let h = enc.forward(t, st, &s.tokens)?;
            let sq = t.mul(h, h)?;
            let e = t.elu(sq)?;
            t.sum(e)
        };
        let report = finite_diff_check(f, &store, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
