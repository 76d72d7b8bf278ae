//! Dialogue reading comprehension over speaker-scoped graphs.
//!
//! The pipeline runs in five stages, all of which live in this crate and need
//! nothing beyond `alloc`:
//!
//! 1. [`textseq`] flattens a question and a dialogue into one token sequence
//!    (`[CLS] question [SEP] s1 : t1 [SEP] ... sN : tN [SEP]`) with an
//!    alignment map back to utterances, speaker names and question words.
//! 2. [`encoder`] turns the sequence into contextual rows, either with a small
//!    trainable encoder or from precomputed embeddings.
//! 3. [`extractor`] scores sliding windows of contiguous utterances against the
//!    question and keeps the members of the best windows as key utterances.
//! 4. [`graph`] builds the question/interlocutor graph over the key utterances
//!    and [`gat`] runs node-type aware graph attention on it.
//! 5. [`span`] writes node states back onto the tokens and decodes an answer
//!    span with a beam restricted to single utterances.
//!
//! All differentiable pieces are built on the small reverse-mode engine in
//! [`tape`], with [`gradcheck`] as the finite-difference oracle.
//!
//! IO, corpus files and the CLI live in the `quisg` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod config;
pub mod corpus;
pub mod encoder;
mod error;
pub mod extractor;
pub mod gat;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod span;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod textseq;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
