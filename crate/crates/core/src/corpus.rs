//! Dialogue QA data model and question-speaker resolution.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One speaker turn, or the speaker-less scene description at index 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker: Option<String>,
    pub words: Vec<String>,
    pub is_scene: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
    /// Distinct full speaker names of the non-scene utterances.
    pub roster: BTreeSet<String>,
}

/// Gold answer on word indices of one utterance; `end_word` is inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub utterance_index: usize,
    pub start_word: usize,
    pub end_word: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub words: Vec<String>,
    pub answers: Vec<AnswerSpan>,
    pub answerable: bool,
}

/// A question word resolved to a speaker of the dialogue roster.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpeakerMention {
    pub question_word_index: usize,
    pub resolved_speaker: String,
}

/// A dialogue together with the questions asked about it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub dialogue: Dialogue,
    pub questions: Vec<Question>,
}

pub fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(ToString::to_string).collect()
}

impl Dialogue {
    /// Builds a dialogue from an optional scene description and a list of
    /// `(speaker, words)` turns.
    pub fn new(id: &str, scene: Option<Vec<String>>, turns: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut utterances = Vec::with_capacity(turns.len() + 1);
        if let Some(words) = scene {
            utterances.push(Utterance {
                index: 0,
                speaker: None,
                words,
                is_scene: true,
            });
        }
        for (speaker, words) in turns {
            utterances.push(Utterance {
                index: utterances.len(),
                speaker: Some(speaker),
                words,
                is_scene: false,
            });
        }
        let roster = utterances.iter().filter_map(|u| u.speaker.clone()).collect();
        let dialogue = Self {
            id: id.to_string(),
            utterances,
            roster,
        };
        dialogue.validate()?;
        Ok(dialogue)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidDialogue {
            id: self.id.clone(),
            reason,
        };
        if self.utterances.is_empty() {
            return Err(bad("no utterances".into()));
        }
        let mut roster = BTreeSet::new();
        for (i, u) in self.utterances.iter().enumerate() {
            if u.index != i {
                return Err(bad(format!("utterance at position {i} has index {}", u.index)));
            }
            if u.words.is_empty() {
                return Err(bad(format!("utterance {i} has no words")));
            }
            match (&u.speaker, u.is_scene) {
                (None, true) if i == 0 => {}
                (None, true) => return Err(bad(format!("scene utterance at index {i}"))),
                (Some(s), false) if !s.trim().is_empty() => {
                    roster.insert(s.clone());
                }
                _ => return Err(bad(format!("utterance {i} has an inconsistent speaker"))),
            }
        }
        if roster != self.roster {
            return Err(bad("roster does not match utterance speakers".into()));
        }
        Ok(())
    }

    pub fn has_scene(&self) -> bool {
        self.utterances.first().is_some_and(|u| u.is_scene)
    }
}

impl AnswerSpan {
    /// Span over `start_word..=end_word` of an utterance, with its text filled
    /// from the dialogue.
    pub fn from_words(dialogue: &Dialogue, utterance: usize, start_word: usize, end_word: usize) -> Option<Self> {
        let words = &dialogue.utterances.get(utterance)?.words;
        if start_word > end_word || end_word >= words.len() {
            return None;
        }
        Some(Self {
            utterance_index: utterance,
            start_word,
            end_word,
            text: words[start_word..=end_word].join(" "),
        })
    }
}

impl Question {
    pub fn new(id: &str, words: Vec<String>, answers: Vec<AnswerSpan>) -> Self {
        Self {
            id: id.to_string(),
            answerable: !answers.is_empty(),
            words,
            answers,
        }
    }

    /// Checks the question invariants and that every gold span reproduces its
    /// text from the dialogue words.
    pub fn validate(&self, dialogue: &Dialogue) -> Result<()> {
        let bad = |reason: String| Error::InvalidQuestion {
            id: self.id.clone(),
            reason,
        };
        if self.words.is_empty() {
            return Err(bad("no words".into()));
        }
        if self.answerable == self.answers.is_empty() {
            return Err(bad("answerable flag disagrees with the answer list".into()));
        }
        for a in &self.answers {
            let Some(u) = dialogue.utterances.get(a.utterance_index) else {
                return Err(bad(format!("answer references missing utterance {}", a.utterance_index)));
            };
            if a.start_word > a.end_word || a.end_word >= u.words.len() {
                return Err(bad(format!(
                    "answer words {}..={} outside utterance {} of {} words",
                    a.start_word,
                    a.end_word,
                    a.utterance_index,
                    u.words.len()
                )));
            }
            let found = u.words[a.start_word..=a.end_word].join(" ");
            if found != a.text {
                return Err(Error::SpanTextMismatch {
                    question: self.id.clone(),
                    expected: a.text.clone(),
                    found,
                });
            }
        }
        Ok(())
    }

    /// Utterances holding at least one gold answer, ascending.
    pub fn answer_utterances(&self) -> BTreeSet<usize> {
        self.answers.iter().map(|a| a.utterance_index).collect()
    }
}

impl CorpusEntry {
    pub fn validate(&self) -> Result<()> {
        self.dialogue.validate()?;
        self.questions.iter().try_for_each(|q| q.validate(&self.dialogue))
    }
}

/// Lowercased word with surrounding punctuation and a possessive `'s` removed.
pub fn normalize_name_word(word: &str) -> String {
    let trimmed = word.trim_matches(|c: char| !c.is_alphanumeric());
    let lower = trimmed.to_lowercase();
    for suffix in ["'s", "’s"] {
        if let Some(stem) = lower.strip_suffix(suffix) {
            if !stem.is_empty() {
                return stem.to_string();
            }
        }
    }
    lower
}

/// Every `(word index, roster speaker)` pair where the word equals some
/// whitespace-separated part of the speaker's full name, ignoring case.
pub fn match_roster<'a>(words: &[String], roster: impl IntoIterator<Item = &'a String> + Clone) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let w = normalize_name_word(w);
        if w.is_empty() {
            continue;
        }
        for speaker in roster.clone() {
            if speaker.split_whitespace().any(|part| normalize_name_word(part) == w) {
                out.push((i, speaker.clone()));
            }
        }
    }
    out
}

/// Question words that fall inside an occurrence of one of the externally
/// recognized names.
fn ner_candidates(words: &[String], names: &[String]) -> BTreeSet<usize> {
    let norm: Vec<String> = words.iter().map(|w| normalize_name_word(w)).collect();
    let mut out = BTreeSet::new();
    for name in names {
        let parts: Vec<String> = name.split_whitespace().map(normalize_name_word).collect();
        if parts.is_empty() || parts.len() > norm.len() {
            continue;
        }
        for start in 0..=norm.len() - parts.len() {
            if norm[start..start + parts.len()] == parts[..] {
                out.extend(start..start + parts.len());
            }
        }
    }
    out
}

/// Maps person names in the question onto roster speakers.
///
/// Without `external_ner` every question word is a candidate; with it, only
/// words inside the listed name spans are. Names that match nobody produce no
/// mention.
pub fn resolve_question_speakers(question: &Question, dialogue: &Dialogue, external_ner: Option<&[String]>) -> Vec<SpeakerMention> {
    let allowed = external_ner.map(|names| ner_candidates(&question.words, names));
    let mut mentions: Vec<SpeakerMention> = match_roster(&question.words, &dialogue.roster)
        .into_iter()
        .filter(|(i, _)| allowed.as_ref().is_none_or(|a| a.contains(i)))
        .map(|(question_word_index, resolved_speaker)| SpeakerMention {
            question_word_index,
            resolved_speaker,
        })
        .collect();
    mentions.sort();
    mentions.dedup();
    mentions
}
