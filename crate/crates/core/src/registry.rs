//! Task specifications and instruction templates.
//!
//! A registry is loaded from a JSON document of the form
//!
//! ```json
//! { "tasks": [ {
//!     "name": "intent classification",
//!     "aliases": ["intent detection"],
//!     "category": "classification",
//!     "output_kind": "class-label",
//!     "option_style": "name-list",
//!     "options_preamble": "The possible intents are:",
//!     "construction": "direct",
//!     "fields": [ { "label": "EMOTION", "token": "[EMOTION]", "optional": false } ],
//!     "definitions": ["...", "...", "..."],
//!     "prompts": ["...", "...", "..."],
//!     "metrics": ["accuracy"]
//! } ] }
//! ```
//!
//! Templates may reference a declared, non-optional field with `{LABEL}`;
//! the value of that field is substituted at render time.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::tokens;
use crate::types::{validate_instance, OptionStyle, OutputKind, TaskCategory, TaskInstance, Violation};

pub const MIN_TEMPLATES: usize = 3;
pub const MAX_TEMPLATES: usize = 10;

const BUILTIN: &str = include_str!("../registry/builtin.json");

/// Field labels the meta-task builders fill in.
pub mod meta_fields {
    pub const INPUT: &str = "INPUT";
    pub const OUTPUT: &str = "OUTPUT";
    pub const INSTRUCTION: &str = "INSTRUCTION";
}

/// How instances of a task are produced from corpus records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    /// Record fields, options and gold are used as-is.
    Direct,
    /// Corrupted-response editing.
    Edit,
    FillMissing,
    FindMissingIndex,
    FindIncoherent,
    FindSwapped,
    InstructionSelection,
    InstructionBinary,
}

impl Construction {
    pub fn is_meta(self) -> bool {
        matches!(self, Construction::InstructionSelection | Construction::InstructionBinary)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub label: String,
    pub token: String,
    #[serde(default)]
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub category: TaskCategory,
    pub output_kind: OutputKind,
    #[serde(default = "default_style")]
    pub option_style: OptionStyle,
    #[serde(default)]
    pub options_preamble: Option<String>,
    #[serde(default = "default_construction")]
    pub construction: Construction,
    #[serde(default)]
    pub fields: Vec<FieldSpec>,
    pub definitions: Vec<String>,
    pub prompts: Vec<String>,
    #[serde(default)]
    pub metrics: Vec<MetricKind>,
}

fn default_style() -> OptionStyle {
    OptionStyle::None
}

fn default_construction() -> Construction {
    Construction::Direct
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TemplateChoice {
    pub definition_id: usize,
    pub prompt_id: usize,
}

impl TaskSpec {
    pub fn field(&self, label: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.label == label)
    }

    pub fn has_options(&self) -> bool {
        self.output_kind != OutputKind::FreeText
    }

    pub fn definition(&self, id: usize, values: &indexmap::IndexMap<String, String>) -> String {
        fill(&self.definitions[id], values)
    }

    pub fn prompt(&self, id: usize, values: &indexmap::IndexMap<String, String>) -> String {
        fill(&self.prompts[id], values)
    }

    /// Checks every load-time invariant of the spec.
    pub fn check(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::InvalidTask {
                task: self.name.clone(),
                reason,
            })
        };
        if self.name.trim().is_empty() {
            return fail("empty task name".into());
        }
        for (what, list) in [("definitions", &self.definitions), ("prompts", &self.prompts)] {
            if !(MIN_TEMPLATES..=MAX_TEMPLATES).contains(&list.len()) {
                return fail(format!(
                    "{what} out of {MIN_TEMPLATES}–{MAX_TEMPLATES} range ({} given)",
                    list.len()
                ));
            }
        }
        match (self.output_kind, self.option_style) {
            (OutputKind::FreeText, OptionStyle::None) => {}
            (OutputKind::FreeText, _) => return fail("free-text task with an option style".into()),
            (_, OptionStyle::None) => return fail("label output requires an option style".into()),
            (OutputKind::IndexLabel, OptionStyle::NameList) => {
                return fail("index-label output requires indexed-list options".into())
            }
            _ => {}
        }

        let mut labels = BTreeSet::new();
        let mut toks = BTreeSet::new();
        for field in &self.fields {
            if field.label.trim().is_empty() || field.label.contains(['{', '}']) {
                return fail(format!("bad field label {:?}", field.label));
            }
            if !tokens::is_token_shaped(&field.token) {
                return fail(format!("field token {:?} is not of the form [LABEL]", field.token));
            }
            if tokens::FIXED.contains(&field.token.as_str()) {
                return fail(format!("field token {} collides with a structural token", field.token));
            }
            if !labels.insert(field.label.as_str()) || !toks.insert(field.token.as_str()) {
                return fail(format!("duplicate field {}", field.label));
            }
        }

        if let Some(pre) = &self.options_preamble {
            if !self.has_options() {
                return fail("options preamble on a task without options".into());
            }
            if tokens::TOKEN_PATTERN.is_match(pre) || pre.trim().is_empty() || pre.trim() != pre {
                return fail(format!("bad options preamble {pre:?}"));
            }
        }

        for template in self.definitions.iter().chain(&self.prompts) {
            if template.trim().is_empty() || template.trim() != template {
                return fail(format!("template {template:?} is empty or has outer whitespace"));
            }
            if let Some(m) = tokens::TOKEN_PATTERN.find(template) {
                return fail(format!("template contains special token {}", m.as_str()));
            }
            for slot in placeholders(template).map_err(|reason| Error::InvalidTask {
                task: self.name.clone(),
                reason,
            })? {
                match self.field(slot) {
                    Some(f) if !f.optional => {}
                    Some(_) => return fail(format!("placeholder {{{slot}}} names an optional field")),
                    None => return fail(format!("placeholder {{{slot}}} is not a declared field")),
                }
            }
        }

        let need = |label: &str| self.field(label).is_some_and(|f| !f.optional);
        match self.construction {
            Construction::InstructionSelection => {
                if self.output_kind == OutputKind::FreeText || !need(meta_fields::OUTPUT) {
                    return fail("instruction selection needs options and an OUTPUT field".into());
                }
            }
            Construction::InstructionBinary => {
                if self.output_kind == OutputKind::FreeText
                    || !need(meta_fields::OUTPUT)
                    || !need(meta_fields::INSTRUCTION)
                {
                    return fail(
                        "instruction binary needs options, OUTPUT and INSTRUCTION fields".into(),
                    );
                }
            }
            Construction::Edit if !need("RESPONSE") => {
                return fail("edit construction needs a RESPONSE field".into());
            }
            _ => {}
        }
        Ok(())
    }
}

/// Placeholder labels of a template, in order of appearance.
fn placeholders(template: &str) -> Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return Err(format!("unbalanced '}}' in template {template:?}"));
        }
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| format!("unclosed placeholder in template {template:?}"))?;
        let label = &after[..close];
        if label.is_empty() || label.contains('{') {
            return Err(format!("malformed placeholder in template {template:?}"));
        }
        out.push(label);
        rest = &after[close + 1..];
    }
    Ok(out)
}

fn fill(template: &str, values: &indexmap::IndexMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').expect("placeholders checked at load");
        let label = &after[..close];
        out.push_str(values.get(label).map(String::as_str).unwrap_or_default());
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Deserialize)]
struct RegistryDoc {
    tasks: Vec<TaskSpec>,
}

/// Immutable set of task specs keyed by canonical name.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    tasks: BTreeMap<String, TaskSpec>,
    aliases: BTreeMap<String, String>,
}

impl Registry {
    pub fn from_specs(specs: impl IntoIterator<Item = TaskSpec>) -> Result<Self> {
        let mut reg = Registry::default();
        for spec in specs {
            spec.check()?;
            for key in std::iter::once(&spec.name).chain(&spec.aliases) {
                if reg.tasks.contains_key(key) || reg.aliases.contains_key(key) {
                    return Err(Error::DuplicateTask(key.clone()));
                }
            }
            for alias in &spec.aliases {
                reg.aliases.insert(alias.clone(), spec.name.clone());
            }
            reg.tasks.insert(spec.name.clone(), spec);
        }
        Ok(reg)
    }

    pub fn from_json_str(doc: &str) -> Result<Self> {
        let doc: RegistryDoc =
            serde_json::from_str(doc).map_err(|e| Error::json("<registry>", e))?;
        Self::from_specs(doc.tasks)
    }

    /// The task set shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN).expect("builtin registry is valid")
    }

    pub fn builtin_json() -> &'static str {
        BUILTIN
    }

    pub fn get(&self, name: &str) -> Option<&TaskSpec> {
        self.resolve(name).and_then(|n| self.tasks.get(n))
    }

    /// Canonical name for a task name or alias.
    pub fn resolve(&self, name: &str) -> Option<&str> {
        if let Some((k, _)) = self.tasks.get_key_value(name) {
            return Some(k.as_str());
        }
        self.aliases.get(name).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }

    pub fn specs(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Like [`validate_instance`], but an unknown task is itself a violation.
    pub fn validate_instance(&self, instance: &TaskInstance) -> Result<(), Vec<Violation>> {
        match self.get(&instance.task_name) {
            Some(spec) => validate_instance(instance, spec),
            None => Err(vec![Violation::UnknownTask(instance.task_name.clone())]),
        }
    }
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: RegistryDoc = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Registry::from_specs(doc.tasks)
}

/// Uniform, independent draw of a definition and a prompt.
pub fn sample_template<R: Rng + ?Sized>(spec: &TaskSpec, rng: &mut R) -> TemplateChoice {
    TemplateChoice {
        definition_id: rng.random_range(0..spec.definitions.len()),
        prompt_id: rng.random_range(0..spec.prompts.len()),
    }
}
