//! Subcommand implementations. Each returns `Ok(false)` when it reported
//! error-level diagnostics but still produced its output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use dialcomp::formatter::validate_format;
use dialcomp::metrics::{read_predictions, read_ratings, read_references, score_task};
use dialcomp::mixer::{compile as compile_plan, report_path};
use dialcomp::registry::load_registry;
use dialcomp::{CorpusLine, Flag, MixturePlan, Registry, Segments};

pub fn compile(plan: &Path, registry: &Path, out: &Path, seed: u64) -> Result<bool> {
    let registry = load_registry(registry).context("loading registry")?;
    let mut plan = MixturePlan::load(plan).context("loading plan")?;
    plan.master_seed = seed;
    let report = compile_plan(&plan, &registry, out).context("compiling corpus")?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    log::info!("wrote {} lines to {}", report.totals.emitted, out.display());
    log::info!("report at {}", report_path(out).display());

    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(true)
}

#[derive(Default)]
struct TaskStats {
    lines: usize,
    nota_correct: usize,
    nota_distractor: usize,
    truncated: usize,
}

pub fn stats(corpus: &Path) -> Result<bool> {
    let file = File::open(corpus).with_context(|| format!("cannot read {}", corpus.display()))?;
    let mut per_task: BTreeMap<String, TaskStats> = BTreeMap::new();
    let mut total = 0usize;
    let mut invalid = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", corpus.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed: CorpusLine = match serde_json::from_str(&line) {
            Ok(l) => l,
            Err(e) => {
                invalid += 1;
                eprintln!("error: {}:{}: malformed line: {e}", corpus.display(), i + 1);
                continue;
            }
        };
        if let Err(violations) = validate_format(&parsed.input) {
            invalid += 1;
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            eprintln!("error: {}:{}: invalid input: {}", corpus.display(), i + 1, msg.join("; "));
        }
        let s = per_task.entry(parsed.task).or_default();
        s.lines += 1;
        s.nota_correct += usize::from(parsed.flags.contains(&Flag::NotaCorrect));
        s.nota_distractor += usize::from(parsed.flags.contains(&Flag::NotaDistractor));
        s.truncated += usize::from(parsed.flags.contains(&Flag::Truncated));
    }

    let valid = total - invalid;
    let rate = if total == 0 { 0.0 } else { 100.0 * valid as f64 / total as f64 };
    let width = per_task.keys().map(String::len).max().unwrap_or(0).max("total".len());
    let mut out = std::io::stdout().lock();
    writeln!(out, "lines: {total}")?;
    writeln!(out, "valid: {valid} ({rate:.2}%)")?;
    writeln!(out, "{:<width$}  {:>7}  {:>12}  {:>15}  {:>9}", "task", "lines", "nota_correct", "nota_distractor", "truncated")?;
    let mut sum = TaskStats::default();
    for (task, s) in &per_task {
        writeln!(out, "{task:<width$}  {:>7}  {:>12}  {:>15}  {:>9}", s.lines, s.nota_correct, s.nota_distractor, s.truncated)?;
        sum.lines += s.lines;
        sum.nota_correct += s.nota_correct;
        sum.nota_distractor += s.nota_distractor;
        sum.truncated += s.truncated;
    }
    writeln!(out, "{:<width$}  {:>7}  {:>12}  {:>15}  {:>9}", "total", sum.lines, sum.nota_correct, sum.nota_distractor, sum.truncated)?;
    Ok(invalid == 0)
}

pub fn inspect(corpus: &Path, instance: &str) -> Result<bool> {
    let file = File::open(corpus).with_context(|| format!("cannot read {}", corpus.display()))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", corpus.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(parsed) = serde_json::from_str::<CorpusLine>(&line) else {
            log::warn!("{}:{}: skipping malformed line", corpus.display(), i + 1);
            continue;
        };
        if parsed.instance_id != instance {
            continue;
        }
        let segs = Segments::parse(&parsed.input)
            .with_context(|| format!("{}:{}: cannot split input into segments", corpus.display(), i + 1))?;
        let mut out = std::io::stdout().lock();
        writeln!(out, "instance: {}", parsed.instance_id)?;
        writeln!(out, "task: {} ({})", parsed.task, parsed.category)?;
        writeln!(out, "templates: definition {} prompt {}", parsed.definition_id, parsed.prompt_id)?;
        writeln!(out)?;
        writeln!(out, "instruction: {}", segs.instruction)?;
        writeln!(out, "custom fields: {}", segs.custom_fields)?;
        writeln!(out, "context: {}", segs.context())?;
        if let Some(options) = &segs.options {
            writeln!(out, "options: {options}")?;
        }
        writeln!(out, "prompt: {}", segs.question())?;
        writeln!(out)?;
        writeln!(out, "output: {}", parsed.output)?;
        return Ok(true);
    }
    bail!("instance {instance} not found in {}", corpus.display())
}

pub fn score(task: &str, preds: &Path, refs: &Path, ratings: Option<&Path>, registry: Option<&Path>) -> Result<bool> {
    let registry = match registry {
        Some(p) => load_registry(p).context("loading registry")?,
        None => Registry::builtin(),
    };
    let spec = registry.get(task).with_context(|| format!("unknown task {task}"))?;
    if spec.metrics.is_empty() {
        bail!("no metric profile for task {}", spec.name);
    }
    let preds = read_predictions(preds)?;
    let refs = read_references(refs)?;
    let ratings = ratings.map(read_ratings).transpose()?;
    let report = score_task(spec, &preds, &refs, ratings.as_deref())?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(true)
}
