//! Serialization of task instances into instruction-formatted text.
//!
//! Every input has the same layout:
//!
//! ```text
//! <definition> <custom fields> [CONTEXT] t1 [ENDOFTURN] t2 [ENDOFDIALOGUE] <options> [QUESTION] <prompt>
//! ```
//!
//! where custom fields render as `[TOKEN] value` pairs and options as
//! `<preamble> [OPTIONS] a | b` (name list) or `[OPTIONS] 1: a, 2: b`
//! (indexed list). Pieces are joined by single spaces and empty pieces are
//! omitted, which keeps whitespace token counts additive over segments.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{TaskSpec, TemplateChoice};
use crate::tokens::{self, CONTEXT, END_OF_DIALOGUE, END_OF_TURN, MASK, OPTIONS, QUESTION};
use crate::types::{validate_instance, Flag, FormattedExample, OptionStyle, Provenance, TaskInstance};

pub const DEFAULT_INPUT_BUDGET: usize = 1024;
pub const DEFAULT_OUTPUT_BUDGET: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    Whitespace,
    /// JSON lines of `{"text": <turn text>, "tokens": <count>}`.
    ExternalCountFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatConfig {
    pub input_budget: usize,
    pub output_budget: usize,
    pub tokenizer_mode: TokenizerMode,
    pub option_style_override: Option<OptionStyle>,
}

impl Default for FormatConfig {
    fn default() -> Self {
        FormatConfig {
            input_budget: DEFAULT_INPUT_BUDGET,
            output_budget: DEFAULT_OUTPUT_BUDGET,
            tokenizer_mode: TokenizerMode::Whitespace,
            option_style_override: None,
        }
    }
}

impl FormatConfig {
    pub fn check(&self) -> Result<()> {
        if self.input_budget == 0 || self.output_budget == 0 {
            return Err(Error::Plan("token budgets must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counts tokens for budget enforcement.
#[derive(Debug, Clone, Default)]
pub enum TokenCounter {
    #[default]
    Whitespace,
    /// Precomputed per-turn counts; anything not listed is counted by whitespace.
    External(HashMap<String, usize>),
}

#[derive(Deserialize)]
struct CountRecord {
    text: String,
    tokens: usize,
}

impl TokenCounter {
    pub fn from_mode(mode: &TokenizerMode) -> Result<Self> {
        match mode {
            TokenizerMode::Whitespace => Ok(TokenCounter::Whitespace),
            TokenizerMode::ExternalCountFile(path) => Self::load_counts(path),
        }
    }

    fn load_counts(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut counts = HashMap::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CountRecord = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
            counts.insert(rec.text.trim().to_owned(), rec.tokens);
        }
        Ok(TokenCounter::External(counts))
    }

    pub fn count_text(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    pub fn count_turn(&self, text: &str) -> usize {
        match self {
            TokenCounter::Whitespace => self.count_text(text),
            TokenCounter::External(map) => map
                .get(text)
                .copied()
                .unwrap_or_else(|| self.count_text(text)),
        }
    }
}

fn context_from_texts<S: AsRef<str>>(turns: &[S]) -> String {
    let mut out = String::from(CONTEXT);
    out.push(' ');
    for (i, t) in turns.iter().enumerate() {
        if i > 0 {
            out.push(' ');
            out.push_str(END_OF_TURN);
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out.push(' ');
    out.push_str(END_OF_DIALOGUE);
    out
}

pub fn render_context(turns: &[crate::types::Turn]) -> Result<String> {
    if turns.is_empty() {
        return Err(Error::Format("cannot render an empty context".into()));
    }
    let texts: Vec<&str> = turns.iter().map(|t| t.text()).collect();
    Ok(context_from_texts(&texts))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedOptions {
    pub text: String,
    /// `labels[i]` is the expected output when option `i` is the gold one.
    pub labels: Vec<String>,
}

impl RenderedOptions {
    pub fn output_for(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }
}

pub fn render_options<S: AsRef<str>>(options: &[S], style: OptionStyle) -> Result<RenderedOptions> {
    if options.is_empty() {
        return Err(Error::Format("empty option list".into()));
    }
    let mut seen = BTreeSet::new();
    for o in options {
        if !seen.insert(o.as_ref()) {
            return Err(Error::Format(format!("duplicate option {:?}", o.as_ref())));
        }
    }
    let (body, labels) = match style {
        OptionStyle::None => return Err(Error::Format("option style none cannot render options".into())),
        OptionStyle::NameList => (
            options.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" | "),
            options.iter().map(|o| o.as_ref().to_owned()).collect(),
        ),
        OptionStyle::IndexedList => (
            options
                .iter()
                .enumerate()
                .map(|(i, o)| format!("{}: {}", i + 1, o.as_ref()))
                .collect::<Vec<_>>()
                .join(", "),
            (1..=options.len()).map(|i| i.to_string()).collect(),
        ),
    };
    Ok(RenderedOptions {
        text: format!("{OPTIONS} {body}"),
        labels,
    })
}

/// `[TOKEN] value` pairs in the spec's declaration order.
pub fn render_custom_fields(fields: &IndexMap<String, String>, spec: &TaskSpec) -> Result<String> {
    for label in fields.keys() {
        if spec.field(label).is_none() {
            return Err(Error::Format(format!(
                "field {label} has no registered token in task {}",
                spec.name
            )));
        }
    }
    let parts: Vec<String> = spec
        .fields
        .iter()
        .filter_map(|f| fields.get(&f.label).map(|v| format!("{} {}", f.token, v)))
        .collect();
    Ok(parts.join(" "))
}

/// The five segments of a rendered input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub instruction: String,
    pub custom_fields: String,
    pub turns: Vec<String>,
    /// Preamble plus `[OPTIONS] ...`, when the task has options.
    pub options: Option<String>,
    pub prompt: String,
}

impl Segments {
    pub fn context(&self) -> String {
        context_from_texts(&self.turns)
    }

    pub fn question(&self) -> String {
        format!("{QUESTION} {}", self.prompt)
    }

    pub fn render(&self) -> String {
        let context = self.context();
        let question = self.question();
        [
            self.instruction.as_str(),
            self.custom_fields.as_str(),
            &context,
            self.options.as_deref().unwrap_or(""),
            &question,
        ]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
    }

    /// Splits a rendered input back into its segments. Fails unless the text
    /// passes [`validate_format`] and re-renders byte-for-byte.
    pub fn parse(text: &str) -> Result<Self> {
        validate_format(text).map_err(|v| {
            Error::Format(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        let noncanonical = || Error::Format("non-canonical segment layout".into());
        let ctx = text.find(CONTEXT).ok_or_else(noncanonical)?;
        let eod = text.find(END_OF_DIALOGUE).ok_or_else(noncanonical)?;
        let q = text.find(QUESTION).ok_or_else(noncanonical)?;

        let prefix = text[..ctx].strip_suffix(' ').unwrap_or(&text[..ctx]);
        let (instruction, custom_fields) = match tokens::TOKEN_PATTERN.find(prefix) {
            Some(m) => (
                prefix[..m.start()].strip_suffix(' ').unwrap_or(&prefix[..m.start()]),
                &prefix[m.start()..],
            ),
            None => (prefix, ""),
        };

        let body = &text[ctx + CONTEXT.len()..eod];
        let inner = body
            .strip_prefix(' ')
            .and_then(|b| b.strip_suffix(' '))
            .ok_or_else(noncanonical)?;
        let sep = format!(" {END_OF_TURN} ");
        let turns: Vec<String> = inner.split(sep.as_str()).map(str::to_owned).collect();

        let middle = &text[eod + END_OF_DIALOGUE.len()..q];
        let middle = middle.strip_prefix(' ').unwrap_or(middle);
        let middle = middle.strip_suffix(' ').unwrap_or(middle);
        let options = (!middle.is_empty()).then(|| middle.to_owned());

        let prompt = text[q + QUESTION.len()..]
            .strip_prefix(' ')
            .ok_or_else(noncanonical)?;

        let segs = Segments {
            instruction: instruction.to_owned(),
            custom_fields: custom_fields.to_owned(),
            turns,
            options,
            prompt: prompt.to_owned(),
        };
        if segs.render() != text {
            return Err(noncanonical());
        }
        Ok(segs)
    }

    /// Token count of everything except the turn texts and their separators.
    fn fixed_cost(&self, counter: &TokenCounter) -> usize {
        counter.count_text(&self.instruction)
            + counter.count_text(&self.custom_fields)
            + counter.count_text(self.options.as_deref().unwrap_or(""))
            + counter.count_text(&self.question())
            + 2 // [CONTEXT] and [ENDOFDIALOGUE]
    }

    pub fn token_count(&self, counter: &TokenCounter) -> usize {
        let turns: usize = self.turns.iter().map(|t| counter.count_turn(t)).sum();
        self.fixed_cost(counter) + turns + self.turns.len().saturating_sub(1)
    }

    /// Drops the oldest turns until the input fits `budget`. The most recent
    /// turn is never dropped; if it alone is too long its oldest words go.
    /// Returns whether anything was removed.
    pub fn fit(&mut self, budget: usize, counter: &TokenCounter) -> Result<bool> {
        let fixed = self.fixed_cost(counter);
        if fixed + 1 > budget {
            return Err(Error::FixedSegmentsExceedBudget { fixed, budget });
        }
        let mut total = self.token_count(counter);
        if total <= budget {
            return Ok(false);
        }
        let mut drop = 0;
        while total > budget && self.turns.len() - drop > 1 {
            total -= counter.count_turn(&self.turns[drop]) + 1;
            drop += 1;
        }
        self.turns.drain(..drop);
        if total > budget {
            let keep = budget - fixed;
            let last = self.turns.last_mut().expect("at least one turn");
            let words: Vec<&str> = last.split_whitespace().collect();
            *last = words[words.len().saturating_sub(keep)..].join(" ");
        }
        Ok(true)
    }
}

/// Truncates a rendered input to `budget` tokens by dropping the oldest turns.
pub fn truncate_input(text: &str, budget: usize, counter: &TokenCounter) -> Result<(String, bool)> {
    if budget == 0 {
        return Err(Error::Format("budget must be at least 1".into()));
    }
    let mut segs = Segments::parse(text)?;
    if segs.fit(budget, counter)? {
        Ok((segs.render(), true))
    } else {
        Ok((text.to_owned(), false))
    }
}

/// Keeps the first `budget` whitespace tokens of an output, preserving spacing.
pub fn truncate_output(text: &str, budget: usize) -> (String, bool) {
    let base = text.as_ptr() as usize;
    match text.split_whitespace().nth(budget.saturating_sub(1)) {
        Some(tok) if text.split_whitespace().nth(budget).is_some() => {
            let end = tok.as_ptr() as usize - base + tok.len();
            (text[..end].to_owned(), true)
        }
        _ => (text.to_owned(), false),
    }
}

/// Serializes one instance with the chosen definition and prompt.
pub fn render_example(
    instance: &TaskInstance,
    spec: &TaskSpec,
    template: TemplateChoice,
    config: &FormatConfig,
    counter: &TokenCounter,
    seed: u64,
) -> Result<FormattedExample> {
    validate_instance(instance, spec).map_err(|v| {
        Error::Format(format!(
            "instance {} is invalid: {}",
            instance.instance_id,
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
        ))
    })?;
    if template.definition_id >= spec.definitions.len() || template.prompt_id >= spec.prompts.len() {
        return Err(Error::Format(format!("template choice {template:?} out of range")));
    }

    let style = match &instance.class_options {
        Some(_) => config.option_style_override.unwrap_or(spec.option_style),
        None => OptionStyle::None,
    };
    let (options, output) = match &instance.class_options {
        Some(opts) => {
            let rendered = render_options(opts, style)?;
            let gold = opts
                .iter()
                .position(|o| *o == instance.gold_output)
                .ok_or_else(|| Error::Format("gold output is not an option".into()))?;
            let output = rendered.labels[gold].clone();
            let text = match &spec.options_preamble {
                Some(pre) => format!("{pre} {}", rendered.text),
                None => rendered.text,
            };
            (Some(text), output)
        }
        None => (None, instance.gold_output.clone()),
    };

    let mut segs = Segments {
        instruction: spec.definition(template.definition_id, &instance.custom_fields),
        custom_fields: render_custom_fields(&instance.custom_fields, spec)?,
        turns: instance.context.turns().iter().map(|t| t.text().to_owned()).collect(),
        options,
        prompt: spec.prompt(template.prompt_id, &instance.custom_fields),
    };
    let input_cut = segs.fit(config.input_budget, counter)?;
    let input_text = segs.render();
    if let Err(v) = validate_format(&input_text) {
        return Err(Error::Format(format!(
            "rendered input fails validation: {}",
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
        )));
    }
    let (output_text, output_cut) = truncate_output(&output, config.output_budget);

    let mut flags = instance.flags.clone();
    if input_cut || output_cut {
        flags.insert(Flag::Truncated);
    }
    Ok(FormattedExample {
        input_text,
        output_text,
        task_name: spec.name.clone(),
        category: spec.category,
        definition_id: template.definition_id,
        prompt_id: template.prompt_id,
        option_style: style,
        provenance: Provenance {
            source_dataset: instance.context.source_dataset.clone(),
            dialogue_id: instance.context.dialogue_id.clone(),
            instance_id: instance.instance_id.clone(),
        },
        seed,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatViolation {
    Count {
        token: &'static str,
        expected: &'static str,
        found: usize,
    },
    Order(&'static str),
    Misplaced {
        token: &'static str,
        reason: &'static str,
    },
}

impl fmt::Display for FormatViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatViolation::Count { token, expected, found } => {
                write!(f, "expected {expected} {token}, found {found}")
            }
            FormatViolation::Order(what) => write!(f, "token order violated: {what}"),
            FormatViolation::Misplaced { token, reason } => write!(f, "{token} {reason}"),
        }
    }
}

fn positions(text: &str, token: &str) -> Vec<usize> {
    text.match_indices(token).map(|(i, _)| i).collect()
}

/// Structural check of a rendered input.
pub fn validate_format(text: &str) -> Result<(), Vec<FormatViolation>> {
    let mut out = Vec::new();
    let ctx = positions(text, CONTEXT);
    let eot = positions(text, END_OF_TURN);
    let eod = positions(text, END_OF_DIALOGUE);
    let q = positions(text, QUESTION);
    let opt = positions(text, OPTIONS);
    let mask = positions(text, MASK);

    for (token, found) in [(CONTEXT, &ctx), (END_OF_DIALOGUE, &eod), (QUESTION, &q)] {
        if found.len() != 1 {
            out.push(FormatViolation::Count {
                token,
                expected: "exactly one",
                found: found.len(),
            });
        }
    }
    if opt.len() > 1 {
        out.push(FormatViolation::Count {
            token: OPTIONS,
            expected: "at most one",
            found: opt.len(),
        });
    }

    if let (Some(&c), Some(&d)) = (ctx.first(), eod.first()) {
        if c > d {
            out.push(FormatViolation::Order("[CONTEXT] after [ENDOFDIALOGUE]"));
        }
        if eot.iter().any(|&t| t < c) {
            out.push(FormatViolation::Order("[ENDOFTURN] before [CONTEXT]"));
        }
        if eot.iter().any(|&t| t > d) {
            out.push(FormatViolation::Order("[ENDOFTURN] after [ENDOFDIALOGUE]"));
        }
        for &m in &mask {
            let before_ok = [CONTEXT, END_OF_TURN]
                .iter()
                .any(|tok| text[..m].ends_with(&format!("{tok} ")));
            let after_ok = [END_OF_TURN, END_OF_DIALOGUE]
                .iter()
                .any(|tok| text[m + MASK.len()..].starts_with(&format!(" {tok}")));
            if m < c || m > d || !before_ok || !after_ok {
                out.push(FormatViolation::Misplaced {
                    token: MASK,
                    reason: "must stand alone as a dialogue turn",
                });
            }
        }
    }
    if let (Some(&d), Some(&qq)) = (eod.first(), q.first()) {
        if d > qq {
            out.push(FormatViolation::Order("[ENDOFDIALOGUE] after [QUESTION]"));
        }
        if opt.iter().any(|&o| o < d || o > qq) {
            out.push(FormatViolation::Misplaced {
                token: OPTIONS,
                reason: "must sit between [ENDOFDIALOGUE] and [QUESTION]",
            });
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
