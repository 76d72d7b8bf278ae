//! Corpus files: the canonical JSON layout plus FriendsQA and Molweni
//! adapters, and the external NER file.
//!
//! Canonical layout, one object per dialogue:
//!
//! ```json
//! [{"id": "d1", "scene": "optional text",
//!   "utterances": [{"speaker": "Ross Geller", "text": "we were on a break"}],
//!   "questions": [{"id": "q1", "text": "What were they on ?",
//!                  "answers": [{"utterance_index": 1, "start_word": 3, "end_word": 4}]}]}]
//! ```
//!
//! `utterance_index` counts the scene, when present, as utterance 0.
//! A question with no answers is unanswerable.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use quisg_core::corpus::{split_words, AnswerSpan, CorpusEntry, Dialogue, Question};
use quisg_core::pipeline::NerTable;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    pub utterances: Vec<UtteranceRecord>,
    #[serde(default)]
    pub questions: Vec<QuestionRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub speaker: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub answers: Vec<AnswerRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRecord {
    pub utterance_index: usize,
    pub start_word: usize,
    pub end_word: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorpusFormat {
    #[default]
    Canonical,
    FriendsQa,
    Molweni,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" => Ok(Self::Canonical),
            "friendsqa" => Ok(Self::FriendsQa),
            "molweni" => Ok(Self::Molweni),
            other => Err(format!("unknown corpus format {other:?} (canonical, friendsqa, molweni)")),
        }
    }
}

/// Converts one canonical record, validating spans against the words.
pub fn from_record(r: &DialogueRecord) -> quisg_core::Result<CorpusEntry> {
    let scene = r.scene.as_deref().map(split_words).filter(|w| !w.is_empty());
    let turns = r.utterances.iter().map(|u| (u.speaker.trim().to_string(), split_words(&u.text))).collect();
    let dialogue = Dialogue::new(&r.id, scene, turns)?;
    let mut questions = Vec::with_capacity(r.questions.len());
    for q in &r.questions {
        let mut answers = Vec::with_capacity(q.answers.len());
        for a in &q.answers {
            let span = AnswerSpan::from_words(&dialogue, a.utterance_index, a.start_word, a.end_word).ok_or_else(|| {
                quisg_core::Error::InvalidQuestion {
                    id: q.id.clone(),
                    reason: format!("answer words {}..={} outside utterance {}", a.start_word, a.end_word, a.utterance_index),
                }
            })?;
            answers.push(span);
        }
        let question = Question::new(&q.id, split_words(&q.text), answers);
        question.validate(&dialogue)?;
        questions.push(question);
    }
    Ok(CorpusEntry { dialogue, questions })
}

pub fn to_record(e: &CorpusEntry) -> DialogueRecord {
    let d = &e.dialogue;
    DialogueRecord {
        id: d.id.clone(),
        scene: d.utterances.first().filter(|u| u.is_scene).map(|u| u.words.join(" ")),
        utterances: d
            .utterances
            .iter()
            .filter(|u| !u.is_scene)
            .map(|u| UtteranceRecord {
                speaker: u.speaker.clone().unwrap_or_default(),
                text: u.words.join(" "),
            })
            .collect(),
        questions: e
            .questions
            .iter()
            .map(|q| QuestionRecord {
                id: q.id.clone(),
                text: q.words.join(" "),
                answers: q
                    .answers
                    .iter()
                    .map(|a| AnswerRecord {
                        utterance_index: a.utterance_index,
                        start_word: a.start_word,
                        end_word: a.end_word,
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// A loaded corpus plus the source items an adapter could not map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Loaded {
    pub entries: Vec<CorpusEntry>,
    pub skipped: Vec<String>,
}

impl Loaded {
    pub fn question_count(&self) -> usize {
        self.entries.iter().map(|e| e.questions.len()).sum()
    }
}

pub fn load(path: &Path, format: CorpusFormat) -> Result<Loaded> {
    let loaded = match format {
        CorpusFormat::Canonical => {
            let records: Vec<DialogueRecord> = read_json(path)?;
            let entries = records.iter().map(from_record).collect::<quisg_core::Result<_>>()?;
            Loaded {
                entries,
                skipped: Vec::new(),
            }
        }
        CorpusFormat::FriendsQa => friendsqa::convert(read_json(path)?)?,
        CorpusFormat::Molweni => molweni::convert(read_json(path)?)?,
    };
    log::info!(
        "{}: {} dialogues, {} questions, {} skipped",
        path.display(),
        loaded.entries.len(),
        loaded.question_count(),
        loaded.skipped.len()
    );
    for s in &loaded.skipped {
        log::warn!("skipped {s}");
    }
    Ok(loaded)
}

pub fn save(path: &Path, entries: &[CorpusEntry]) -> Result<()> {
    let records: Vec<DialogueRecord> = entries.iter().map(to_record).collect();
    let text = serde_json::to_string_pretty(&records).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// JSON object mapping question id to the person names found in it.
pub fn load_ner(path: &Path) -> Result<NerTable> {
    read_json(path)
}

mod friendsqa {
    use super::*;

    #[derive(Deserialize)]
    pub(super) struct File {
        data: Vec<Episode>,
    }

    #[derive(Deserialize)]
    struct Episode {
        title: String,
        paragraphs: Vec<Paragraph>,
    }

    #[derive(Deserialize)]
    struct Paragraph {
        // The released files spell this key with a trailing colon.
        #[serde(alias = "utterances:")]
        utterances: Vec<Turn>,
        qas: Vec<Qa>,
    }

    #[derive(Deserialize)]
    struct Turn {
        utterance: String,
        #[serde(default)]
        speakers: Vec<String>,
    }

    #[derive(Deserialize)]
    struct Qa {
        id: String,
        question: String,
        answers: Vec<Answer>,
    }

    #[derive(Deserialize)]
    struct Answer {
        utterance_id: usize,
        inner_start: usize,
        inner_end: usize,
        #[serde(default)]
        is_speaker: bool,
    }

    const NOTE: &str = "#NOTE#";

    pub(super) fn convert(file: File) -> Result<Loaded> {
        let mut out = Loaded::default();
        for ep in file.data {
            for (pi, para) in ep.paragraphs.into_iter().enumerate() {
                let id = if pi == 0 { ep.title.clone() } else { format!("{}_{pi}", ep.title) };
                let mut scene = None;
                let mut turns = Vec::new();
                for (i, t) in para.utterances.iter().enumerate() {
                    let speaker = t.speakers.join(" & ");
                    let mut words = split_words(&t.utterance);
                    if i == 0 && (speaker.is_empty() || speaker == NOTE) {
                        scene = Some(words);
                        continue;
                    }
                    if words.is_empty() {
                        // Keep the position so utterance ids stay aligned.
                        out.skipped.push(format!("dialogue {id}: empty utterance {i}"));
                        words.push("...".into());
                    }
                    turns.push((if speaker.is_empty() { NOTE.into() } else { speaker }, words));
                }
                let offset = usize::from(scene.as_ref().is_some_and(Vec::is_empty));
                let scene = scene.filter(|w| !w.is_empty());
                let dialogue = match Dialogue::new(&id, scene, turns) {
                    Ok(d) => d,
                    Err(e) => {
                        out.skipped.push(format!("dialogue {id}: {e}"));
                        continue;
                    }
                };
                let mut questions = Vec::new();
                for qa in para.qas {
                    let spans: Vec<AnswerSpan> = qa
                        .answers
                        .iter()
                        .filter(|a| !a.is_speaker)
                        .filter_map(|a| AnswerSpan::from_words(&dialogue, a.utterance_id.checked_sub(offset)?, a.inner_start, a.inner_end))
                        .collect();
                    if spans.is_empty() {
                        out.skipped.push(format!("question {}: no answer maps onto utterance words", qa.id));
                        continue;
                    }
                    questions.push(Question::new(&qa.id, split_words(&qa.question), spans));
                }
                out.entries.push(CorpusEntry { dialogue, questions });
            }
        }
        Ok(out)
    }
}

mod molweni {
    use super::*;

    #[derive(Deserialize)]
    pub(super) struct File {
        data: Data,
    }

    #[derive(Deserialize)]
    struct Data {
        dialogues: Vec<Dlg>,
    }

    #[derive(Deserialize)]
    struct Dlg {
        #[serde(default)]
        id: Option<String>,
        edus: Vec<Edu>,
        #[serde(default)]
        context: String,
        qas: Vec<Qa>,
    }

    #[derive(Deserialize)]
    struct Edu {
        text: String,
        speaker: String,
    }

    #[derive(Deserialize)]
    struct Qa {
        id: String,
        question: String,
        #[serde(default)]
        answers: Vec<Answer>,
        #[serde(default)]
        is_impossible: bool,
    }

    #[derive(Deserialize)]
    struct Answer {
        text: String,
        #[serde(default)]
        answer_start: Option<usize>,
    }

    /// Character offset of each utterance text inside the flat context.
    fn offsets(context: &str, edus: &[Edu]) -> Vec<Option<usize>> {
        let mut cursor = 0;
        edus.iter()
            .map(|e| {
                let at = context.get(cursor..)?.find(e.text.trim())? + cursor;
                cursor = at + e.text.trim().len();
                Some(at)
            })
            .collect()
    }

    /// Every occurrence of `answer` as a word run, nearest to `answer_start`
    /// first when offsets are known.
    fn locate(dialogue: &Dialogue, answer: &[String], starts: &[Option<usize>], answer_start: Option<usize>) -> Option<AnswerSpan> {
        let mut hits = Vec::new();
        for (i, u) in dialogue.utterances.iter().enumerate() {
            if answer.is_empty() || answer.len() > u.words.len() {
                continue;
            }
            for s in 0..=u.words.len() - answer.len() {
                if u.words[s..s + answer.len()] == *answer {
                    hits.push((i, s));
                }
            }
        }
        let distance = |&(i, _): &(usize, usize)| match (starts.get(i).copied().flatten(), answer_start) {
            (Some(o), Some(a)) => o.abs_diff(a),
            _ => usize::MAX,
        };
        let (i, s) = hits.iter().copied().min_by_key(|h| (distance(h), h.0, h.1))?;
        AnswerSpan::from_words(dialogue, i, s, s + answer.len() - 1)
    }

    pub(super) fn convert(file: File) -> Result<Loaded> {
        let mut out = Loaded::default();
        for (di, d) in file.data.dialogues.into_iter().enumerate() {
            let id = d.id.clone().unwrap_or_else(|| format!("molweni{di}"));
            let turns = d.edus.iter().map(|e| (e.speaker.trim().to_string(), split_words(&e.text))).collect();
            let dialogue = match Dialogue::new(&id, None, turns) {
                Ok(x) => x,
                Err(e) => {
                    out.skipped.push(format!("dialogue {id}: {e}"));
                    continue;
                }
            };
            let starts = offsets(&d.context, &d.edus);
            let mut questions = Vec::new();
            for qa in d.qas {
                let spans: Vec<AnswerSpan> = if qa.is_impossible {
                    Vec::new()
                } else {
                    qa.answers.iter().filter_map(|a| locate(&dialogue, &split_words(&a.text), &starts, a.answer_start)).collect()
                };
                if !qa.is_impossible && spans.is_empty() {
                    out.skipped.push(format!("question {}: answer text not found in any utterance", qa.id));
                    continue;
                }
                questions.push(Question::new(&qa.id, split_words(&qa.question), spans));
            }
            out.entries.push(CorpusEntry { dialogue, questions });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> DialogueRecord {
        serde_json::from_str(
            r#"{"id": "d1", "scene": "Central Perk",
                "utterances": [{"speaker": "Ross Geller", "text": "we were on a break"},
                               {"speaker": "Rachel Green", "text": "no we were not"}],
                "questions": [{"id": "q1", "text": "What were they on ?",
                               "answers": [{"utterance_index": 1, "start_word": 3, "end_word": 4}]},
                              {"id": "q2", "text": "Who is Joey ?", "answers": []}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn canonical_round_trip() {
        let e = from_record(&record()).unwrap();
        assert!(e.dialogue.has_scene());
        assert_eq!(e.questions[0].answers[0].text, "a break");
        assert!(!e.questions[1].answerable);
        assert_eq!(to_record(&e), record());
    }

    #[test]
    fn span_outside_utterance_names_question() {
        let mut r = record();
        r.questions[0].answers[0].end_word = 9;
        let err = from_record(&r).unwrap_err();
        assert!(err.to_string().contains("q1"), "{err}");
    }

    #[test]
    fn friendsqa_layout() {
        let file: friendsqa::File = serde_json::from_str(
            r##"{"version": "0.1", "data": [{"title": "s01_e01_c01", "paragraphs": [{
                "utterances:": [{"utterance": "There's nothing to tell !", "speakers": ["Monica Geller"], "uid": 0},
                                {"utterance": "C'mon , you're going out with the guy !", "speakers": ["Joey Tribbiani"], "uid": 1}],
                "qas": [{"id": "q1", "question": "Who is Monica going out with ?",
                         "answers": [{"answer_text": "the guy", "utterance_id": 1, "inner_start": 6, "inner_end": 7, "is_speaker": false},
                                     {"answer_text": "Joey", "utterance_id": 1, "inner_start": 0, "inner_end": 0, "is_speaker": true}]}]}]}]}"##,
        )
        .unwrap();
        let loaded = friendsqa::convert(file).unwrap();
        assert_eq!(loaded.entries.len(), 1);
        let q = &loaded.entries[0].questions[0];
        assert_eq!(q.answers.len(), 1);
        assert_eq!(q.answers[0].text, "the guy");
        assert_eq!(q.answers[0].utterance_index, 1);
    }

    #[test]
    fn molweni_layout() {
        let file: molweni::File = serde_json::from_str(
            r#"{"data": {"dialogues": [{"edus": [{"text": "how do i mount a usb drive", "speaker": "nate"},
                                                {"text": "use the mount command", "speaker": "ikonia"}],
                                       "context": "nate: how do i mount a usb drive\nikonia: use the mount command",
                                       "qas": [{"id": "m1", "question": "What should nate use ?", "is_impossible": false,
                                                "answers": [{"text": "the mount command", "answer_start": 44}]},
                                               {"id": "m2", "question": "Why ?", "is_impossible": true, "answers": []}]}]}}"#,
        )
        .unwrap();
        let loaded = molweni::convert(file).unwrap();
        let qs = &loaded.entries[0].questions;
        assert_eq!(qs[0].answers[0].utterance_index, 1);
        assert_eq!(qs[0].answers[0].start_word, 1);
        assert!(!qs[1].answerable);
    }

    #[test]
    fn format_tags() {
        assert_eq!("FriendsQA".parse::<CorpusFormat>().unwrap(), CorpusFormat::FriendsQa);
        assert!("squad".parse::<CorpusFormat>().is_err());
    }
}
