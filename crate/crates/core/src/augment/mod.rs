//! Data augmentations: none-of-the-above options, corrupted-response edit
//! instances, utterance-level pretraining objectives and instruction meta tasks.
//!
//! Every builder takes an explicit rng so results are a pure function of the
//! inputs and the seed.

mod corrupt;
mod meta;
mod nota;
mod pretrain;

pub use corrupt::{
    corrupt_response, insert_unit, make_edit_instance, remove_unit, repeat_unit, segment,
    segment_phrases, segment_sentences, Corrupted, CorruptionKind, CorruptionOp, Granularity,
    Inapplicable, MAX_ATTEMPTS,
};
pub use meta::{instruction_of, make_meta_instances, MetaConfig, MetaKind, DEFAULT_NUM_CHOICES};
pub use nota::{apply_nota, nota_quota, NotaConfig};
pub use pretrain::{make_pretrain_instances, Donor, PretrainKind};
