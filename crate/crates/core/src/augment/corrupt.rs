use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Dialogue, TaskInstance};

/// Attempts at drawing a non-identity corruption before giving up.
pub const MAX_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Shuffle,
    Repeat,
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Phrase,
    Sentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionOp {
    pub kind: CorruptionKind,
    pub granularity: Granularity,
}

impl CorruptionOp {
    pub const fn new(kind: CorruptionKind, granularity: Granularity) -> Self {
        CorruptionOp { kind, granularity }
    }

    pub const ALL: [CorruptionOp; 8] = {
        use CorruptionKind::*;
        use Granularity::*;
        [
            CorruptionOp::new(Shuffle, Sentence),
            CorruptionOp::new(Repeat, Sentence),
            CorruptionOp::new(Add, Sentence),
            CorruptionOp::new(Remove, Sentence),
            CorruptionOp::new(Shuffle, Phrase),
            CorruptionOp::new(Repeat, Phrase),
            CorruptionOp::new(Add, Phrase),
            CorruptionOp::new(Remove, Phrase),
        ]
    };

    fn min_units(self) -> usize {
        match self.kind {
            CorruptionKind::Shuffle | CorruptionKind::Remove => 2,
            CorruptionKind::Repeat | CorruptionKind::Add => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Inapplicable {
    #[error("needs at least {needed} units, response has {found}")]
    TooFewUnits { needed: usize, found: usize },
    #[error("no donor text available")]
    NoDonor,
    #[error("could not produce a response different from the original")]
    NoChange,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corrupted {
    pub text: String,
    pub original_units: Vec<String>,
    pub units: Vec<String>,
}

/// Splits after `.`, `!` or `?` when followed by whitespace.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(j, next)) = chars.peek() {
                if next.is_whitespace() {
                    out.push(text[start..j].trim().to_owned());
                    start = j;
                }
            }
        }
        let _ = i;
    }
    out.push(text[start..].trim().to_owned());
    out.retain(|s| !s.is_empty());
    out
}

/// Contiguous whitespace-token spans of 2–4 tokens. Texts shorter than four
/// tokens cannot hold two such spans and are split into single tokens.
pub fn segment_phrases<R: Rng + ?Sized>(text: &str, rng: &mut R) -> Vec<String> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() < 4 {
        return toks.into_iter().map(str::to_owned).collect();
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let remaining = toks.len() - i;
        let mut len = rng.random_range(2..=4).min(remaining);
        if remaining - len == 1 {
            // never leave a dangling single token
            len = if len < 4 { len + 1 } else { len - 1 };
        }
        out.push(toks[i..i + len].join(" "));
        i += len;
    }
    out
}

pub fn segment<R: Rng + ?Sized>(text: &str, granularity: Granularity, rng: &mut R) -> Vec<String> {
    match granularity {
        Granularity::Sentence => segment_sentences(text),
        Granularity::Phrase => segment_phrases(text, rng),
    }
}

pub fn repeat_unit(units: &[String], idx: usize) -> Vec<String> {
    let mut out = units.to_vec();
    out.insert(idx + 1, units[idx].clone());
    out
}

pub fn remove_unit(units: &[String], idx: usize) -> Vec<String> {
    let mut out = units.to_vec();
    out.remove(idx);
    out
}

pub fn insert_unit(units: &[String], idx: usize, unit: String) -> Vec<String> {
    let mut out = units.to_vec();
    out.insert(idx, unit);
    out
}

/// Corrupts a response by shuffling, repeating, adding or removing one unit.
/// `donors` supplies texts for the add operation.
pub fn corrupt_response<R: Rng + ?Sized>(
    response: &str,
    op: CorruptionOp,
    donors: &[String],
    rng: &mut R,
) -> Result<Corrupted, Inapplicable> {
    let units = segment(response, op.granularity, rng);
    if units.len() < op.min_units() {
        return Err(Inapplicable::TooFewUnits {
            needed: op.min_units(),
            found: units.len(),
        });
    }
    let original = units.join(" ");
    let donors: Vec<&String> = donors.iter().filter(|d| !d.trim().is_empty()).collect();
    if op.kind == CorruptionKind::Add && donors.is_empty() {
        return Err(Inapplicable::NoDonor);
    }

    for _ in 0..MAX_ATTEMPTS {
        let corrupted = match op.kind {
            CorruptionKind::Shuffle => {
                let mut v = units.clone();
                v.shuffle(rng);
                v
            }
            CorruptionKind::Repeat => repeat_unit(&units, rng.random_range(0..units.len())),
            CorruptionKind::Remove => remove_unit(&units, rng.random_range(0..units.len())),
            CorruptionKind::Add => {
                let donor = donors.choose(rng).expect("non-empty donors");
                let pieces = segment(donor, op.granularity, rng);
                let Some(piece) = pieces.choose(rng) else { continue };
                insert_unit(&units, rng.random_range(0..=units.len()), piece.clone())
            }
        };
        let text = corrupted.join(" ");
        if text != original && text != response {
            return Ok(Corrupted {
                text,
                original_units: units,
                units: corrupted,
            });
        }
    }
    Err(Inapplicable::NoChange)
}

/// Builds an edit instance: the corrupted response goes in the RESPONSE
/// field and the clean response is the gold output.
pub fn make_edit_instance<R: Rng + ?Sized>(
    dialogue: &Dialogue,
    gold_response: &str,
    op: CorruptionOp,
    donors: &[String],
    task_name: &str,
    instance_id: &str,
    rng: &mut R,
) -> Result<TaskInstance, Inapplicable> {
    let corrupted = corrupt_response(gold_response, op, donors, rng)?;
    Ok(TaskInstance {
        instance_id: instance_id.to_owned(),
        task_name: task_name.to_owned(),
        context: dialogue.clone(),
        custom_fields: IndexMap::from([("RESPONSE".to_string(), corrupted.text)]),
        class_options: None,
        gold_output: gold_response.to_owned(),
        target_response: Some(gold_response.to_owned()),
        flags: Default::default(),
    })
}
