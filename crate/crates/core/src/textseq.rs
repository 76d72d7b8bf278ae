//! The flat question/context token sequence and its alignment map.
//!
//! Layout: `[CLS] q [SEP] s1 : t1 [SEP] s2 : t2 ... [SEP] sN : tN [SEP]`.
//! Scene utterances contribute their words only. The context is everything
//! between the first and the last `[SEP]`. All token indices in this module are
//! absolute positions in the full sequence.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerSpan, Dialogue, Question};
use crate::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const COLON: &str = ":";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Cls,
    QuestionWord,
    Sep,
    SpeakerName,
    UtteranceWord,
    SceneWord,
    Colon,
}

impl TokenKind {
    /// Tokens that may start or end an answer.
    pub fn is_text(self) -> bool {
        matches!(self, TokenKind::UtteranceWord | TokenKind::SceneWord)
    }
}

/// Half-open token interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    pub fn iter(&self) -> core::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub kinds: Vec<TokenKind>,
    pub question_range: TokenSpan,
    pub context_range: TokenSpan,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `L_C`, the number of context tokens.
    pub fn context_len(&self) -> usize {
        self.context_range.len()
    }

    pub fn count(&self, kind: TokenKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// Per utterance, the tokens of its text words (`None` once truncated).
    pub utterance_token_span: Vec<Option<TokenSpan>>,
    /// Per utterance, the tokens of its speaker name (`None` for scenes).
    pub speaker_token_spans: Vec<Option<TokenSpan>>,
    /// Per utterance, per word, the tokens the word was split into.
    pub word_token_spans: Vec<Vec<TokenSpan>>,
    /// Per question word, its tokens.
    pub question_word_tokens: Vec<TokenSpan>,
    /// Per gold answer of the question, its tokens (`None` if unmappable).
    pub answer_token_spans: Vec<Option<TokenSpan>>,
    /// Utterances left out of the sequence by truncation.
    pub dropped: Vec<usize>,
}

impl AlignmentMap {
    /// Utterance whose text tokens contain `token`.
    pub fn utterance_of(&self, token: usize) -> Option<usize> {
        self.utterance_token_span
            .iter()
            .position(|s| s.is_some_and(|s| s.contains(token)))
    }
}

/// Splits one word into tokens. Implementations must return at least one
/// token per word.
pub trait Tokenizer {
    fn tokenize(&self, word: &str) -> Vec<String>;
}

/// One token per whitespace-separated word.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, word: &str) -> Vec<String> {
        alloc::vec![word.to_string()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceOptions {
    pub max_len: usize,
    /// Drop trailing utterances that do not fit instead of failing.
    pub truncate: bool,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            max_len: 512,
            truncate: false,
        }
    }
}

struct Builder<'t, T: ?Sized> {
    tokenizer: &'t T,
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
}

impl<T: Tokenizer + ?Sized> Builder<'_, T> {
    fn special(&mut self, tok: &str, kind: TokenKind) {
        self.tokens.push(tok.to_string());
        self.kinds.push(kind);
    }

    fn word(&mut self, word: &str, kind: TokenKind) -> TokenSpan {
        let start = self.tokens.len();
        let mut pieces = self.tokenizer.tokenize(word);
        if pieces.is_empty() {
            pieces.push(word.to_string());
        }
        for p in pieces {
            self.tokens.push(p);
            self.kinds.push(kind);
        }
        TokenSpan::new(start, self.tokens.len())
    }
}

fn token_count<T: Tokenizer + ?Sized>(tokenizer: &T, words: impl Iterator<Item = impl AsRef<str>>) -> usize {
    words.map(|w| tokenizer.tokenize(w.as_ref()).len().max(1)).sum()
}

/// Builds `[CLS] q [SEP] C [SEP]` for a question over a dialogue.
pub fn build_sequence<T: Tokenizer + ?Sized>(
    question: &Question,
    dialogue: &Dialogue,
    tokenizer: &T,
    options: SequenceOptions,
) -> Result<(TokenSequence, AlignmentMap)> {
    dialogue.validate()?;
    let n = dialogue.utterances.len();

    // Decide which utterances fit before emitting anything.
    let mut len = 2 + token_count(tokenizer, question.words.iter());
    let mut kept = 0;
    for (i, u) in dialogue.utterances.iter().enumerate() {
        let mut cost = token_count(tokenizer, u.words.iter()) + 1; // text + following SEP
        if let Some(s) = &u.speaker {
            cost += token_count(tokenizer, s.split_whitespace()) + 1;
        }
        if len + cost > options.max_len {
            let dropped: Vec<usize> = (i..n).collect();
            if !options.truncate || i == 0 {
                let total = len
                    + dialogue.utterances[i..]
                        .iter()
                        .map(|u| {
                            token_count(tokenizer, u.words.iter())
                                + 1
                                + u.speaker.as_ref().map_or(0, |s| token_count(tokenizer, s.split_whitespace()) + 1)
                        })
                        .sum::<usize>();
                return Err(Error::SequenceTooLong {
                    len: total,
                    max: options.max_len,
                    dropped,
                });
            }
            break;
        }
        len += cost;
        kept = i + 1;
    }

    let mut b = Builder {
        tokenizer,
        tokens: Vec::with_capacity(len),
        kinds: Vec::with_capacity(len),
    };
    b.special(CLS, TokenKind::Cls);
    let question_word_tokens: Vec<TokenSpan> = question
        .words
        .iter()
        .map(|w| b.word(w, TokenKind::QuestionWord))
        .collect();
    let question_range = TokenSpan::new(1, b.tokens.len());
    b.special(SEP, TokenKind::Sep);
    let context_start = b.tokens.len();

    let mut utterance_token_span = alloc::vec![None; n];
    let mut speaker_token_spans = alloc::vec![None; n];
    let mut word_token_spans = alloc::vec![Vec::new(); n];
    for (i, u) in dialogue.utterances.iter().take(kept).enumerate() {
        if i > 0 {
            b.special(SEP, TokenKind::Sep);
        }
        if let Some(s) = &u.speaker {
            let start = b.tokens.len();
            for part in s.split_whitespace() {
                b.word(part, TokenKind::SpeakerName);
            }
            speaker_token_spans[i] = Some(TokenSpan::new(start, b.tokens.len()));
            b.special(COLON, TokenKind::Colon);
        }
        let kind = if u.is_scene {
            TokenKind::SceneWord
        } else {
            TokenKind::UtteranceWord
        };
        let start = b.tokens.len();
        word_token_spans[i] = u.words.iter().map(|w| b.word(w, kind)).collect();
        utterance_token_span[i] = Some(TokenSpan::new(start, b.tokens.len()));
    }
    let context_range = TokenSpan::new(context_start, b.tokens.len());
    b.special(SEP, TokenKind::Sep);

    let mut map = AlignmentMap {
        utterance_token_span,
        speaker_token_spans,
        word_token_spans,
        question_word_tokens,
        answer_token_spans: Vec::new(),
        dropped: (kept..n).collect(),
    };
    map.answer_token_spans = question
        .answers
        .iter()
        .map(|a| locate_answer_tokens(a, &map).ok())
        .collect();
    let seq = TokenSequence {
        tokens: b.tokens,
        kinds: b.kinds,
        question_range,
        context_range,
    };
    Ok((seq, map))
}

/// Token interval covering an answer's words.
pub fn locate_answer_tokens(span: &AnswerSpan, map: &AlignmentMap) -> Result<TokenSpan> {
    let unmappable = Error::UnmappableSpan {
        utterance: span.utterance_index,
    };
    let words = map.word_token_spans.get(span.utterance_index).ok_or(unmappable.clone())?;
    match (words.get(span.start_word), words.get(span.end_word)) {
        (Some(first), Some(last)) if span.start_word <= span.end_word => Ok(TokenSpan::new(first.start, last.end)),
        _ => Err(unmappable),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_words;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn one_utterance() -> (Question, Dialogue) {
        let d = Dialogue::new("d", None, vec![("A".into(), vec!["hi".into()])]).unwrap();
        let span = AnswerSpan::from_words(&d, 0, 0, 0).unwrap();
        (Question::new("q", vec!["who".into()], vec![span]), d)
    }

    #[test]
    fn single_utterance_layout() {
        let (q, d) = one_utterance();
        let (seq, map) = build_sequence(&q, &d, &WhitespaceTokenizer, SequenceOptions::default()).unwrap();
        assert_eq!(seq.tokens, ["[CLS]", "who", "[SEP]", "A", ":", "hi", "[SEP]"]);
        assert_eq!(map.utterance_token_span[0], Some(TokenSpan::new(5, 6)));
        assert_eq!(map.answer_token_spans[0], Some(TokenSpan::new(5, 6)));
        assert_eq!(seq.question_range, TokenSpan::new(1, 2));
        assert_eq!(seq.context_range, TokenSpan::new(3, 6));
        assert_eq!(seq.kinds[0], TokenKind::Cls);
        assert_eq!(seq.count(TokenKind::Cls), 1);
    }

    #[test]
    fn scene_has_no_speaker_or_colon() {
        let d = Dialogue::new("d", Some(split_words("at the cafe")), vec![("A B".into(), split_words("hello there"))]).unwrap();
        let q = Question::new("q", split_words("where ?"), vec![]);
        let (seq, map) = build_sequence(&q, &d, &WhitespaceTokenizer, SequenceOptions::default()).unwrap();
        assert_eq!(
            seq.tokens,
            ["[CLS]", "where", "?", "[SEP]", "at", "the", "cafe", "[SEP]", "A", "B", ":", "hello", "there", "[SEP]"]
        );
        assert_eq!(map.speaker_token_spans[0], None);
        assert_eq!(map.speaker_token_spans[1], Some(TokenSpan::new(8, 10)));
        assert_eq!(seq.kinds[5], TokenKind::SceneWord);
    }

    #[test]
    fn empty_dialogue_rejected() {
        let (q, mut d) = one_utterance();
        d.utterances.clear();
        d.roster.clear();
        assert!(matches!(
            build_sequence(&q, &d, &WhitespaceTokenizer, SequenceOptions::default()),
            Err(Error::InvalidDialogue { .. })
        ));
    }

    fn three_utterances() -> (Question, Dialogue) {
        let d = Dialogue::new(
            "d",
            None,
            vec![
                ("A".into(), split_words("one two three")),
                ("B".into(), split_words("four five")),
                ("A".into(), split_words("six seven eight")),
            ],
        )
        .unwrap();
        let span = AnswerSpan::from_words(&d, 2, 1, 2).unwrap();
        (Question::new("q", split_words("what now"), vec![span]), d)
    }

    #[test]
    fn overlong_sequence_lists_dropped_utterances() {
        let (q, d) = three_utterances();
        let opts = SequenceOptions {
            max_len: 15,
            truncate: false,
        };
        match build_sequence(&q, &d, &WhitespaceTokenizer, opts) {
            Err(Error::SequenceTooLong { dropped, max, .. }) => {
                assert_eq!(max, 15);
                assert_eq!(dropped, vec![2]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_utterance_is_unmappable() {
        let (q, d) = three_utterances();
        let opts = SequenceOptions {
            max_len: 15,
            truncate: true,
        };
        let (seq, map) = build_sequence(&q, &d, &WhitespaceTokenizer, opts).unwrap();
        assert!(seq.len() <= 15);
        assert_eq!(map.dropped, vec![2]);
        assert_eq!(map.answer_token_spans[0], None);
        assert_eq!(
            locate_answer_tokens(&q.answers[0], &map),
            Err(Error::UnmappableSpan { utterance: 2 })
        );
    }

    #[test]
    fn locate_full_and_single_word_spans() {
        let (_, d) = three_utterances();
        let q = Question::new("q", split_words("x"), vec![]);
        let (seq, map) = build_sequence(&q, &d, &WhitespaceTokenizer, SequenceOptions::default()).unwrap();
        let full = AnswerSpan::from_words(&d, 1, 0, 1).unwrap();
        assert_eq!(locate_answer_tokens(&full, &map).unwrap(), map.utterance_token_span[1].unwrap());

        let first = AnswerSpan::from_words(&d, 2, 0, 0).unwrap();
        let got = locate_answer_tokens(&first, &map).unwrap();
        // Brute force: the only "six" token in the sequence.
        let pos = seq.tokens.iter().position(|t| t == "six").unwrap();
        assert_eq!(got, TokenSpan::new(pos, pos + 1));
        assert_eq!(got.start, map.utterance_token_span[2].unwrap().start);
    }

    struct CharPairs;
    impl Tokenizer for CharPairs {
        fn tokenize(&self, word: &str) -> Vec<String> {
            let chars: Vec<char> = word.chars().collect();
            chars.chunks(2).map(|c| c.iter().collect()).collect()
        }
    }

    #[test]
    fn subword_tokenizer_spans_cover_all_pieces() {
        let (q, d) = three_utterances();
        let (seq, map) = build_sequence(&q, &d, &CharPairs, SequenceOptions::default()).unwrap();
        let span = map.answer_token_spans[0].unwrap();
        let joined: String = seq.tokens[span.start..span.end].concat();
        assert_eq!(joined, "seveneight");
    }

    fn arb_dialogue() -> impl Strategy<Value = Dialogue> {
        let word = "[a-z]{1,5}";
        let turn = ("[A-C]( [a-z]{2,4})?", proptest::collection::vec(word, 1..6));
        (proptest::option::of(proptest::collection::vec(word, 1..4)), proptest::collection::vec(turn, 1..6))
            .prop_map(|(scene, turns)| Dialogue::new("p", scene, turns).unwrap())
    }

    proptest! {
        #[test]
        fn layout_round_trips(d in arb_dialogue(), qwords in proptest::collection::vec("[a-z]{1,4}", 1..5)) {
            let q = Question::new("q", qwords.clone(), vec![]);
            let (seq, map) = build_sequence(&q, &d, &WhitespaceTokenizer, SequenceOptions::default()).unwrap();
            prop_assert_eq!(seq.tokens.len(), seq.kinds.len());
            prop_assert_eq!(seq.count(TokenKind::Sep), d.len() + 1);
            prop_assert_eq!(seq.count(TokenKind::Cls), 1);
            let qtoks: Vec<&String> = seq.question_range.iter().map(|i| &seq.tokens[i]).collect();
            prop_assert_eq!(qtoks, qwords.iter().collect::<Vec<_>>());

            let mut last_end = seq.context_range.start;
            for (i, u) in d.utterances.iter().enumerate() {
                let span = map.utterance_token_span[i].unwrap();
                prop_assert!(span.start >= last_end);
                last_end = span.end;
                let words: Vec<&String> = span.iter().map(|t| &seq.tokens[t]).collect();
                prop_assert_eq!(words, u.words.iter().collect::<Vec<_>>());
                if let (Some(s), Some(sp)) = (&u.speaker, map.speaker_token_spans[i]) {
                    prop_assert_eq!(seq.tokens[sp.start..sp.end].join(" "), s.clone());
                    prop_assert_eq!(seq.kinds[sp.end], TokenKind::Colon);
                }
                for t in span.iter() {
                    prop_assert!(seq.kinds[t].is_text());
                    prop_assert_eq!(map.utterance_of(t), Some(i));
                }
            }
            prop_assert_eq!(last_end, seq.context_range.end);
        }
    }
}
