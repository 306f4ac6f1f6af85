//! Dialogue instruction-corpus compiler.
//!
//! Turns dialogue corpora in a single line-delimited interchange format into
//! instruction-formatted input/output pairs: every task instance is rendered as
//! a task definition, task-specific custom fields, the dialogue context framed
//! by special tokens, optional class options and a prompt. The crate also
//! builds the augmented tasks (none-of-the-above options, corrupted-response
//! editing, utterance-level pretraining objectives, instruction meta tasks),
//! assembles a capped multi-task mixture, and scores model outputs.
//!
//! Module map:
//!
//! - [`types`]: the shared data model (turns, dialogues, instances, examples).
//! - [`ingest`]: streaming reader for the interchange format.
//! - [`registry`]: task specifications and instruction templates.
//! - [`formatter`]: text serialization, structural validation, token budgets.
//! - [`augment`]: NOTA, corruption, pretraining and meta-task builders.
//! - [`mixer`]: per-task sampling, corpus compilation and holdout splits.
//! - [`metrics`]: accuracy, BLEU-2, ROUGE-L, F1, begins-with, Spearman.

pub mod augment;
pub mod error;
pub mod formatter;
pub mod ingest;
pub mod metrics;
pub mod mixer;
pub mod registry;
pub mod seed;
pub mod tokens;
pub mod types;

pub use error::{Error, Result};
pub use formatter::{FormatConfig, Segments, TokenCounter};
pub use mixer::{CorpusLine, MixturePlan, MixtureReport};
pub use registry::{Registry, TaskSpec};
pub use types::{
    Dialogue, Flag, FormattedExample, OptionStyle, OutputKind, Provenance, TaskCategory,
    TaskInstance, Turn,
};
