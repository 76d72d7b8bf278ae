//! Files and the command-line driver around `quisg-core`.
//!
//! * [`corpus_io`]: canonical corpus JSON, FriendsQA/Molweni adapters, NER files.
//! * [`tensor_io`]: the binary tensor map used for checkpoints and embeddings.
//! * [`artifacts`]: key-set, prediction and report JSON.
//! * [`config_io`]: TOML settings with `--set` overrides.
//! * [`cli`]: the subcommands.

pub mod artifacts;
pub mod cli;
pub mod config_io;
pub mod corpus_io;
mod error;
pub mod tensor_io;

pub use error::{Error, Result};

/// The bundled eight-dialogue corpus.
pub const TOY_CORPUS: &str = include_str!("../data/toy_corpus.json");
