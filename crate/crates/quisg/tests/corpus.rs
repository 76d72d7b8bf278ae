use quisg::corpus_io::{self, from_record, to_record, CorpusFormat, DialogueRecord};
use quisg_core::corpus::CorpusEntry;

fn bundled() -> Vec<CorpusEntry> {
    let records: Vec<DialogueRecord> = serde_json::from_str(quisg::TOY_CORPUS).unwrap();
    records.iter().map(|r| from_record(r).unwrap()).collect()
}

fn overlap(a: &[String], b: &[String]) -> usize {
    let norm = |w: &String| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    let b: Vec<String> = b.iter().map(norm).collect();
    a.iter().map(norm).filter(|w| w.len() > 3 && b.contains(w)).count()
}

#[test]
fn bundled_corpus_shape() {
    let corpus = bundled();
    assert_eq!(corpus.len(), 8);
    assert_eq!(corpus.iter().map(|e| e.questions.len()).sum::<usize>(), 20);
    assert!(corpus.iter().any(|e| e.dialogue.has_scene()));
    let (mut inside, mut away) = (0, 0);
    for e in &corpus {
        e.validate().unwrap();
        for q in &e.questions {
            let a = &q.answers[0];
            let u = &e.dialogue.utterances[a.utterance_index];
            assert_eq!(a.text, u.words[a.start_word..=a.end_word].join(" "), "{}", q.id);
            let similar = e.dialogue.utterances.iter().max_by_key(|u| (overlap(&q.words, &u.words), std::cmp::Reverse(u.index))).unwrap();
            if similar.index == a.utterance_index {
                inside += 1;
            } else {
                away += 1;
            }
        }
    }
    assert!(inside > 0 && away > 0, "inside {inside}, away {away}");
}

#[test]
fn canonical_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let corpus = bundled();
    corpus_io::save(&path, &corpus).unwrap();
    let loaded = corpus_io::load(&path, CorpusFormat::Canonical).unwrap();
    assert_eq!(loaded.entries, corpus);
    assert!(loaded.skipped.is_empty());
    let records: Vec<DialogueRecord> = corpus.iter().map(to_record).collect();
    let direct: Vec<DialogueRecord> = serde_json::from_str(quisg::TOY_CORPUS).unwrap();
    assert_eq!(records, direct);
}

#[test]
fn empty_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, "[]").unwrap();
    let loaded = corpus_io::load(&path, CorpusFormat::Canonical).unwrap();
    assert!(loaded.entries.is_empty() && loaded.skipped.is_empty());
    let bundled_path = dir.path().join("toy.json");
    std::fs::write(&bundled_path, quisg::TOY_CORPUS).unwrap();
    let a = corpus_io::load(&bundled_path, CorpusFormat::Canonical).unwrap();
    let b = corpus_io::load(&bundled_path, CorpusFormat::Canonical).unwrap();
    assert_eq!(a.entries, b.entries);
}

#[test]
fn malformed_json_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "[{\"id\": \"d\",\n \"utterances\": 3}]").unwrap();
    let err = corpus_io::load(&path, CorpusFormat::Canonical).unwrap_err().to_string();
    assert!(err.contains("bad.json") && err.contains('2'), "{err}");
}
