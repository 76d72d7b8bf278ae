//! Seeded synthetic dialogues for probing key-utterance coverage.
//!
//! Each dialogue has one utterance that shares two topic words with the
//! question. The answer, a time expression, sits one or two utterances before
//! or after it. Other time expressions appear only in utterances at least
//! three away, so the answer utterance alone does not stand out.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnswerSpan, CorpusEntry, Dialogue, Question};
use crate::Result;

const SPEAKERS: [&str; 4] = ["Alice", "Bob", "Carol", "Dave"];

const FILLER: [&str; 40] = [
    "well", "maybe", "later", "really", "okay", "sure", "then", "just", "think", "know", "going", "back", "still", "again",
    "never", "always", "right", "fine", "yeah", "look", "wait", "kind", "sort", "much", "more", "less", "soon", "today",
    "honestly", "anyway", "though", "actually", "pretty", "quite", "almost", "basically", "totally", "literally", "seriously",
    "probably",
];

const TOPIC: [&str; 24] = [
    "piano", "garden", "bicycle", "museum", "wedding", "turtle", "lasagna", "violin", "camping", "lottery", "tattoo", "sailboat",
    "karaoke", "volcano", "marathon", "telescope", "bakery", "aquarium", "chess", "poetry", "origami", "surfing", "opera",
    "pottery",
];

const TIMES: [&str; 16] = [
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "noon", "midnight", "tonight", "tomorrow",
    "yesterday", "morning", "evening", "weekend", "afternoon",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoverageSpec {
    pub dialogues: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub words_per_utterance: usize,
    /// Time expressions placed away from the similar utterance.
    pub distractors: usize,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        Self {
            dialogues: 40,
            min_utterances: 9,
            max_utterances: 12,
            words_per_utterance: 8,
            distractors: 2,
        }
    }
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| FILLER.choose(rng).expect("non-empty").to_string()).collect()
}

/// One question per dialogue. Deterministic in `seed`.
pub fn coverage_corpus(seed: u64, spec: CoverageSpec) -> Result<Vec<CorpusEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.dialogues);
    for d in 0..spec.dialogues {
        let n = rng.gen_range(spec.min_utterances..=spec.max_utterances);
        let similar = rng.gen_range(0..n);
        let offsets: Vec<isize> = [-2isize, -1, 1, 2]
            .into_iter()
            .filter(|o| (0..n as isize).contains(&(similar as isize + o)))
            .collect();
        let answer = (similar as isize + *offsets.choose(&mut rng).expect("n >= 3")) as usize;
        let topics: Vec<&str> = TOPIC.choose_multiple(&mut rng, 2).copied().collect();
        let far: Vec<usize> = (0..n).filter(|u| u.abs_diff(similar) >= 3).collect();
        let distractors: Vec<usize> = far.choose_multiple(&mut rng, spec.distractors).copied().collect();
        let mut answer_at = 0;

        let mut turns = Vec::with_capacity(n);
        for u in 0..n {
            let len = rng.gen_range(spec.words_per_utterance.saturating_sub(2).max(3)..=spec.words_per_utterance + 2);
            let mut words = filler(&mut rng, len);
            if u == similar {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, topics[1].to_string());
                words.insert(at, topics[0].to_string());
            }
            if u == answer || distractors.contains(&u) {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, TIMES.choose(&mut rng).expect("non-empty").to_string());
                if u == answer {
                    answer_at = at;
                }
            }
            let speaker = SPEAKERS[(u + rng.gen_range(0..2)) % SPEAKERS.len()];
            turns.push((speaker.to_string(), words));
        }
        let dialogue = Dialogue::new(&format!("cov{d}"), None, turns)?;
        let span = AnswerSpan::from_words(&dialogue, answer, answer_at, answer_at).expect("in range");
        let question = Question::new(
            &format!("cov{d}q"),
            ["When", "did", "they", "discuss", "the", topics[0], topics[1], "?"].iter().map(|w| w.to_string()).collect(),
            alloc::vec![span],
        );
        out.push(CorpusEntry {
            dialogue,
            questions: alloc::vec![question],
        });
    }
    Ok(out)
}
