//! JSON artifacts passed between stages: key sets, predictions, reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use quisg_core::metrics::Predictions;
use quisg_core::pipeline::{Extraction, PredictionRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type KeySets = BTreeMap<String, Extraction>;

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// `{"<question id>": {"utterances": [...], "scores": [...]}}`.
pub fn read_keysets(path: &Path) -> Result<KeySets> {
    let raw: BTreeMap<String, Extraction> = read_json(path)?;
    Ok(raw.into_iter().map(|(k, e)| (k, Extraction::from_export(e.utterances, e.scores))).collect())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PredictionEntry {
    Record(Box<PredictionRecord>),
    Answer(Option<String>),
}

/// Accepts the full records written by `predict` or a plain
/// `{"<question id>": "answer" | null}` map.
pub fn read_answers(path: &Path) -> Result<Predictions> {
    let raw: BTreeMap<String, PredictionEntry> = read_json(path)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| {
            let a = match v {
                PredictionEntry::Record(r) => r.answer,
                PredictionEntry::Answer(a) => a,
            };
            (k, a)
        })
        .collect())
}
