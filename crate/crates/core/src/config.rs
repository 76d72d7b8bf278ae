//! Every tunable of the pipeline in one flat record.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::encoder::ToyEncoderConfig;
use crate::gat::GatConfig;
use crate::span::DecodeOptions;
use crate::textseq::SequenceOptions;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Window size: a unit spans `m + 1` utterances.
    pub m: usize,
    /// Units kept per question.
    pub k: usize,
    /// Word-node window inside one utterance.
    pub k_w: usize,
    pub heads: usize,
    pub gat_layers: usize,
    pub leaky_slope: f64,
    /// Logit scale for tokens outside key utterances.
    pub f: f64,
    pub beam: usize,
    pub max_answer_len: usize,
    pub d_model: usize,
    pub mix_layers: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub truncate: bool,
    pub lr: f64,
    pub extractor_lr: f64,
    pub batch_size: usize,
    pub extractor_epochs: usize,
    pub qa_epochs: usize,
    /// Train and decode with the answerability head.
    pub unanswerable: bool,
    /// Label 1 of the answerability loss means "no answer".
    pub na_label_is_unanswerable: bool,
    pub na_weight: f64,
    pub na_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            m: 2,
            k: 3,
            k_w: crate::graph::DEFAULT_WORD_WINDOW,
            heads: 2,
            gat_layers: 5,
            leaky_slope: crate::gat::DEFAULT_LEAKY_SLOPE,
            f: 0.5,
            beam: 5,
            max_answer_len: 30,
            d_model: 32,
            mix_layers: 2,
            vocab: 4096,
            max_len: 512,
            truncate: false,
            lr: 1e-2,
            extractor_lr: 1e-2,
            batch_size: 4,
            extractor_epochs: 10,
            qa_epochs: 20,
            unanswerable: false,
            na_label_is_unanswerable: true,
            na_weight: 0.5,
            na_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    /// Settings for Molweni-style data: fewer layers, milder scaling,
    /// unanswerable questions.
    pub fn molweni() -> Self {
        Self {
            gat_layers: 3,
            f: 0.9,
            unanswerable: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad(format!("k must be positive, got {}", self.k));
        }
        if self.beam == 0 || self.max_answer_len == 0 || self.batch_size == 0 {
            return bad(format!(
                "beam, max_answer_len and batch_size must be positive, got {}, {}, {}",
                self.beam, self.max_answer_len, self.batch_size
            ));
        }
        if !(self.f.is_finite() && self.f > 0.0) {
            return bad(format!("f must be a positive number, got {}", self.f));
        }
        if !(self.lr > 0.0 && self.extractor_lr > 0.0) {
            return bad(format!("learning rates must be positive, got {} and {}", self.lr, self.extractor_lr));
        }
        if !(0.0..=1.0).contains(&self.na_threshold) {
            return bad(format!("na_threshold must lie in [0, 1], got {}", self.na_threshold));
        }
        self.gat().validate()?;
        if self.vocab == 0 || self.max_len < 4 {
            return bad(format!("vocab {} / max_len {} too small", self.vocab, self.max_len));
        }
        Ok(())
    }

    pub fn encoder(&self) -> ToyEncoderConfig {
        ToyEncoderConfig {
            d_model: self.d_model,
            mix_layers: self.mix_layers,
            vocab: self.vocab,
        }
    }

    pub fn gat(&self) -> GatConfig {
        GatConfig {
            layers: self.gat_layers,
            heads: self.heads,
            d_model: self.d_model,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn sequence(&self) -> SequenceOptions {
        SequenceOptions {
            max_len: self.max_len,
            truncate: self.truncate,
        }
    }

    pub fn decode(&self) -> DecodeOptions {
        DecodeOptions {
            f: self.f,
            beam: self.beam,
            max_answer_len: self.max_answer_len,
        }
    }
}
