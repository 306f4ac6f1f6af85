//! Streaming reader for the dialogue interchange format.
//!
//! One JSON object per line:
//!
//! ```json
//! {"dialogue_id": "d1",
//!  "turns": [{"speaker": "user", "text": "hi"}, {"speaker": "system", "text": "hello"}],
//!  "fields": {"EMOTION": "happy"},
//!  "class_options": ["a", "b"],
//!  "gold": "a",
//!  "target_response": "...",
//!  "metadata": {"split_note": "..."}}
//! ```
//!
//! Only `dialogue_id` and `turns` are mandatory. Blank lines are ignored.
//! Malformed records are yielded as [`RecordError`]s in stream order.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dialogue, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDescriptor {
    pub path: PathBuf,
    pub dataset_id: String,
    #[serde(default)]
    pub split: Split,
}

impl CorpusDescriptor {
    pub fn new(path: impl Into<PathBuf>, dataset_id: impl Into<String>, split: Split) -> Self {
        CorpusDescriptor {
            path: path.into(),
            dataset_id: dataset_id.into(),
            split,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    speaker: String,
    text: String,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    dialogue_id: String,
    turns: Vec<RawTurn>,
    #[serde(default)]
    fields: Option<IndexMap<String, String>>,
    #[serde(default)]
    class_options: Option<Vec<String>>,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    target_response: Option<String>,
    #[serde(default)]
    metadata: Option<BTreeMap<String, String>>,
}

/// A parsed interchange record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub dialogue: Dialogue,
    pub fields: IndexMap<String, String>,
    pub class_options: Option<Vec<String>>,
    pub gold: Option<String>,
    pub target_response: Option<String>,
    /// 1-based line number in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

impl std::error::Error for RecordError {}

/// Lazy stream of records from one corpus file.
pub struct CorpusReader {
    path: PathBuf,
    dataset_id: String,
    lines: Lines<BufReader<File>>,
    line: usize,
    seen_ids: HashSet<String>,
    failed: Option<std::io::Error>,
}

impl CorpusReader {
    fn error(&self, message: impl Into<String>) -> RecordError {
        RecordError {
            path: self.path.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    fn parse(&mut self, text: &str) -> Result<CorpusRecord, RecordError> {
        let raw: RawRecord = serde_json::from_str(text).map_err(|e| self.error(format!("schema error: {e}")))?;
        let turns = raw
            .turns
            .into_iter()
            .enumerate()
            .map(|(i, t)| Turn::new(t.speaker, &t.text).map_err(|e| self.error(format!("turn {}: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        if raw.dialogue_id.trim().is_empty() {
            return Err(self.error("empty dialogue_id"));
        }
        let dialogue = Dialogue::new(raw.dialogue_id, turns, self.dataset_id.clone())
            .map_err(|e| self.error(e.to_string()))?
            .with_metadata(raw.metadata.unwrap_or_default());
        if !self.seen_ids.insert(dialogue.dialogue_id.clone()) {
            return Err(self.error(format!("duplicate dialogue_id {:?}", dialogue.dialogue_id)));
        }
        Ok(CorpusRecord {
            dialogue,
            fields: raw.fields.unwrap_or_default(),
            class_options: raw.class_options,
            gold: raw.gold,
            target_response: raw.target_response,
            line: self.line,
        })
    }

    /// An I/O failure that ended the stream early, if any.
    pub fn take_io_error(&mut self) -> Option<Error> {
        self.failed.take().map(|e| Error::io(&self.path, e))
    }
}

impl Iterator for CorpusReader {
    type Item = Result<CorpusRecord, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.line += 1;
                    let err = self.error(format!("read error: {e}"));
                    self.failed = Some(e);
                    return Some(Err(err));
                }
            };
            self.line += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line));
        }
    }
}

pub fn read_corpus(descriptor: &CorpusDescriptor) -> Result<CorpusReader> {
    if descriptor.dataset_id.trim().is_empty() {
        return Err(Error::Plan(format!(
            "corpus {} has an empty dataset_id",
            descriptor.path.display()
        )));
    }
    let file = File::open(&descriptor.path).map_err(|e| Error::io(&descriptor.path, e))?;
    Ok(CorpusReader {
        path: descriptor.path.clone(),
        dataset_id: descriptor.dataset_id.clone(),
        lines: BufReader::new(file).lines(),
        line: 0,
        seen_ids: HashSet::new(),
        failed: None,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Census {
    pub records: usize,
    pub errors: Vec<RecordError>,
}

/// Counts well-formed records, collecting per-record errors.
pub fn count_instances(descriptor: &CorpusDescriptor) -> Result<Census> {
    let mut census = Census::default();
    let mut reader = read_corpus(descriptor)?;
    for item in reader.by_ref() {
        match item {
            Ok(_) => census.records += 1,
            Err(e) => census.errors.push(e),
        }
    }
    if let Some(e) = reader.take_io_error() {
        return Err(e);
    }
    Ok(census)
}

/// Resolves a possibly relative corpus path against a base directory.
pub(crate) fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_owned()
    } else {
        base.join(path)
    }
}
