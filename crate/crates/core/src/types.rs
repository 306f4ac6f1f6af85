//! Canonical in-memory data model shared by every pipeline stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::TaskSpec;
use crate::tokens;

/// One speaker-attributed utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    speaker: String,
    text: String,
}

impl Turn {
    /// Builds a turn, trimming the text. Empty text and text containing a
    /// fixed reserved token are rejected.
    pub fn new(speaker: impl Into<String>, text: impl AsRef<str>) -> Result<Self> {
        let text = text.as_ref().trim();
        if text.is_empty() {
            return Err(Error::InvalidTurn("empty text".into()));
        }
        if let Some(tok) = tokens::find_reserved(text, []) {
            return Err(Error::InvalidTurn(format!("reserved token {tok} in turn text")));
        }
        Ok(Turn {
            speaker: speaker.into(),
            text: text.to_owned(),
        })
    }

    /// The placeholder turn used by masking objectives.
    pub fn mask(speaker: impl Into<String>) -> Self {
        Turn {
            speaker: speaker.into(),
            text: tokens::MASK.to_owned(),
        }
    }

    pub fn is_mask(&self) -> bool {
        self.text == tokens::MASK
    }

    pub fn speaker(&self) -> &str {
        &self.speaker
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    turns: Vec<Turn>,
    pub source_dataset: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Dialogue {
    pub fn new(
        dialogue_id: impl Into<String>,
        turns: Vec<Turn>,
        source_dataset: impl Into<String>,
    ) -> Result<Self> {
        let dialogue_id = dialogue_id.into();
        if turns.is_empty() {
            return Err(Error::InvalidDialogue {
                id: dialogue_id,
                reason: "no turns".into(),
            });
        }
        Ok(Dialogue {
            dialogue_id,
            turns,
            source_dataset: source_dataset.into(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// A copy of this dialogue holding a different (non-empty) turn list.
    pub fn with_turns(&self, turns: Vec<Turn>) -> Result<Self> {
        let mut out = Dialogue::new(self.dialogue_id.clone(), turns, self.source_dataset.clone())?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskCategory {
    Classification,
    Generation,
    Evaluation,
    Edit,
    Pretraining,
    Safety,
    Miscellaneous,
    Meta,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 8] = [
        TaskCategory::Classification,
        TaskCategory::Generation,
        TaskCategory::Evaluation,
        TaskCategory::Edit,
        TaskCategory::Pretraining,
        TaskCategory::Safety,
        TaskCategory::Miscellaneous,
        TaskCategory::Meta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskCategory::Classification => "classification",
            TaskCategory::Generation => "generation",
            TaskCategory::Evaluation => "evaluation",
            TaskCategory::Edit => "edit",
            TaskCategory::Pretraining => "pretraining",
            TaskCategory::Safety => "safety",
            TaskCategory::Miscellaneous => "miscellaneous",
            TaskCategory::Meta => "meta",
        }
    }
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    FreeText,
    ClassLabel,
    IndexLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptionStyle {
    None,
    NameList,
    IndexedList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    NotaCorrect,
    NotaDistractor,
    Truncated,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::NotaCorrect => "nota_correct",
            Flag::NotaDistractor => "nota_distractor",
            Flag::Truncated => "truncated",
        }
    }
}

/// One dialogue bound to one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub instance_id: String,
    pub task_name: String,
    pub context: Dialogue,
    /// Field label -> value. Rendering follows the task's declaration order,
    /// not the order of this map.
    pub custom_fields: IndexMap<String, String>,
    pub class_options: Option<Vec<String>>,
    pub gold_output: String,
    pub target_response: Option<String>,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub source_dataset: String,
    pub dialogue_id: String,
    pub instance_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedExample {
    pub input_text: String,
    pub output_text: String,
    pub task_name: String,
    pub category: TaskCategory,
    pub definition_id: usize,
    pub prompt_id: usize,
    pub option_style: OptionStyle,
    pub provenance: Provenance,
    pub seed: u64,
    pub flags: BTreeSet<Flag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownTask(String),
    TaskMismatch { instance: String, spec: String },
    ReservedToken { location: String, token: String },
    MissingField(String),
    UndeclaredField(String),
    MissingOptions,
    UnexpectedOptions,
    EmptyOptions,
    DuplicateOption(String),
    GoldNotAmongOptions,
    EmptyGold,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownTask(t) => write!(f, "unknown task {t:?}"),
            Violation::TaskMismatch { instance, spec } => {
                write!(f, "instance task {instance:?} does not match spec {spec:?}")
            }
            Violation::ReservedToken { location, token } => {
                write!(f, "reserved token in {location} ({token})")
            }
            Violation::MissingField(l) => write!(f, "missing required field {l}"),
            Violation::UndeclaredField(l) => write!(f, "undeclared field {l}"),
            Violation::MissingOptions => f.write_str("classification task without class options"),
            Violation::UnexpectedOptions => f.write_str("class options on a free-text task"),
            Violation::EmptyOptions => f.write_str("empty option list"),
            Violation::DuplicateOption(o) => write!(f, "duplicate option {o:?}"),
            Violation::GoldNotAmongOptions => f.write_str("gold not among options"),
            Violation::EmptyGold => f.write_str("empty gold output"),
        }
    }
}

/// Checks an instance against its task spec, collecting every violation.
pub fn validate_instance(instance: &TaskInstance, spec: &TaskSpec) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if instance.task_name != spec.name && !spec.aliases.contains(&instance.task_name) {
        out.push(Violation::TaskMismatch {
            instance: instance.task_name.clone(),
            spec: spec.name.clone(),
        });
    }

    let field_tokens: Vec<&str> = spec.fields.iter().map(|f| f.token.as_str()).collect();
    let mut leak = |location: String, text: &str| {
        if let Some(token) = tokens::find_reserved(text, field_tokens.iter().copied()) {
            out.push(Violation::ReservedToken { location, token });
        }
    };
    for turn in instance.context.turns() {
        if !turn.is_mask() {
            leak("turn text".into(), turn.text());
        }
    }
    for (label, value) in &instance.custom_fields {
        leak(format!("field {label}"), value);
    }
    if let Some(options) = &instance.class_options {
        for opt in options {
            leak("class option".into(), opt);
        }
    }
    leak("gold output".into(), &instance.gold_output);
    if let Some(target) = &instance.target_response {
        leak("target response".into(), target);
    }

    for field in &spec.fields {
        if !field.optional && !instance.custom_fields.contains_key(&field.label) {
            out.push(Violation::MissingField(field.label.clone()));
        }
    }
    for label in instance.custom_fields.keys() {
        if spec.field(label).is_none() {
            out.push(Violation::UndeclaredField(label.clone()));
        }
    }

    if instance.gold_output.trim().is_empty() {
        out.push(Violation::EmptyGold);
    }

    match (&instance.class_options, spec.output_kind) {
        (None, OutputKind::ClassLabel | OutputKind::IndexLabel) => out.push(Violation::MissingOptions),
        (Some(_), OutputKind::FreeText) => out.push(Violation::UnexpectedOptions),
        (Some(options), _) => {
            if options.is_empty() {
                out.push(Violation::EmptyOptions);
            }
            let mut seen = BTreeSet::new();
            for opt in options {
                if !seen.insert(opt.as_str()) {
                    out.push(Violation::DuplicateOption(opt.clone()));
                }
            }
            if !instance.flags.contains(&Flag::NotaCorrect)
                && !options.contains(&instance.gold_output)
            {
                out.push(Violation::GoldNotAmongOptions);
            }
        }
        (None, OutputKind::FreeText) => {}
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
