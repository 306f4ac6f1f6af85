//! Mixture assembly: per-task capped sampling, augmentation, template
//! assignment and deterministic corpus serialization.
//!
//! Every random choice draws from a seed derived from the master seed and
//! the task name (plus the instance id for per-instance choices), so a
//! task's output depends only on its own corpora and the master seed, and
//! the corpus is identical for any worker count.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    apply_nota, make_edit_instance, make_meta_instances, make_pretrain_instances, CorruptionOp,
    Donor, MetaConfig, MetaKind, NotaConfig, PretrainKind, DEFAULT_NUM_CHOICES,
};
use crate::error::{Error, Result};
use crate::formatter::{render_example, validate_format, FormatConfig, TokenCounter, TokenizerMode};
use crate::ingest::{self, read_corpus, CorpusDescriptor, CorpusRecord};
use crate::registry::{sample_template, Construction, Registry, TaskSpec};
use crate::seed;
use crate::types::{validate_instance, Flag, FormattedExample, TaskCategory, TaskInstance};

pub const DEFAULT_CAP: usize = 5000;

/// Donor utterances kept per task for add-corruption and incoherence tasks.
const DONOR_POOL: usize = 1024;

/// Tasks held out from training in the zero-shot experiments.
pub const ZERO_SHOT_UNSEEN: [&str; 6] = [
    "dialfact classification",
    "relation classification",
    "answer selection",
    "eval selection",
    "knowledge grounded generation",
    "begins with generation",
];

fn default_cap() -> usize {
    DEFAULT_CAP
}

fn default_num_choices() -> usize {
    DEFAULT_NUM_CHOICES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    #[serde(default = "default_cap")]
    pub per_task_cap: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Included tasks and their corpora. Meta tasks take no corpora.
    pub tasks: BTreeMap<String, Vec<CorpusDescriptor>>,
    #[serde(default)]
    pub nota: NotaConfig,
    #[serde(default)]
    pub format: FormatConfig,
    /// Worker threads; defaults to the number of cores.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Tasks excluded from the compiled corpus.
    #[serde(default)]
    pub unseen_tasks: BTreeSet<String>,
    #[serde(default = "default_num_choices")]
    pub meta_num_choices: usize,
}

impl MixturePlan {
    pub fn new(master_seed: u64) -> Self {
        MixturePlan {
            per_task_cap: DEFAULT_CAP,
            master_seed,
            tasks: BTreeMap::new(),
            nota: NotaConfig::default(),
            format: FormatConfig::default(),
            workers: None,
            unseen_tasks: BTreeSet::new(),
            meta_num_choices: DEFAULT_NUM_CHOICES,
        }
    }

    pub fn with_task(mut self, name: impl Into<String>, corpora: Vec<CorpusDescriptor>) -> Self {
        self.tasks.insert(name.into(), corpora);
        self
    }

    /// Reads a JSON plan, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: MixturePlan = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for corpora in plan.tasks.values_mut() {
            for c in corpora {
                c.path = ingest::resolve(base, &c.path);
            }
        }
        if let TokenizerMode::ExternalCountFile(p) = &mut plan.format.tokenizer_mode {
            *p = ingest::resolve(base, p);
        }
        Ok(plan)
    }

    /// Checks the plan and rewrites task aliases to canonical names.
    pub fn check(&mut self, registry: &Registry) -> Result<()> {
        if self.per_task_cap == 0 {
            return Err(Error::Plan("per_task_cap must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Plan("workers must be at least 1".into()));
        }
        if self.meta_num_choices < 2 {
            return Err(Error::Plan("meta_num_choices must be at least 2".into()));
        }
        self.nota.check()?;
        self.format.check()?;
        let mut tasks = BTreeMap::new();
        for (name, corpora) in std::mem::take(&mut self.tasks) {
            let canonical = canonical(registry, &name)?;
            let spec = registry.get(&canonical).expect("resolved");
            if !spec.construction.is_meta() && corpora.is_empty() {
                return Err(Error::Plan(format!("task {canonical} has no corpora")));
            }
            if tasks.insert(canonical.clone(), corpora).is_some() {
                return Err(Error::Plan(format!("task {canonical} listed twice")));
            }
        }
        self.tasks = tasks;
        self.unseen_tasks = self
            .unseen_tasks
            .iter()
            .map(|n| canonical(registry, n))
            .collect::<Result<_>>()?;
        Ok(())
    }
}

fn canonical(registry: &Registry, name: &str) -> Result<String> {
    registry
        .resolve(name)
        .map(str::to_owned)
        .ok_or_else(|| Error::UnknownTask(name.to_owned()))
}

/// Splits a plan into a train plan without the unseen tasks and an eval plan
/// with only them. With `seen` given, the train plan is further limited to it.
pub fn holdout_split(
    plan: &MixturePlan,
    registry: &Registry,
    seen: Option<&BTreeSet<String>>,
    unseen: &BTreeSet<String>,
) -> Result<(MixturePlan, MixturePlan)> {
    let unseen: BTreeSet<String> = unseen.iter().map(|n| canonical(registry, n)).collect::<Result<_>>()?;
    let seen: Option<BTreeSet<String>> = seen
        .map(|s| s.iter().map(|n| canonical(registry, n)).collect::<Result<_>>())
        .transpose()?;
    if let Some(seen) = &seen {
        if let Some(both) = seen.intersection(&unseen).next() {
            return Err(Error::Plan(format!("task {both} is designated both seen and unseen")));
        }
    }
    let mut train = plan.clone();
    let mut eval = plan.clone();
    train.unseen_tasks.clear();
    eval.unseen_tasks.clear();
    train.tasks.clear();
    eval.tasks.clear();
    for (name, corpora) in &plan.tasks {
        let name = canonical(registry, name)?;
        if unseen.contains(&name) {
            eval.tasks.insert(name, corpora.clone());
        } else if seen.as_ref().is_none_or(|s| s.contains(&name)) {
            train.tasks.insert(name, corpora.clone());
        }
    }
    Ok((train, eval))
}

/// Uniform sampling without replacement in one pass (Algorithm R).
/// Items come back in stream order.
#[derive(Debug)]
pub struct Reservoir<T, R> {
    cap: usize,
    seen: usize,
    items: Vec<(usize, T)>,
    rng: R,
}

impl<T, R: Rng> Reservoir<T, R> {
    pub fn new(cap: usize, rng: R) -> Self {
        Reservoir {
            cap,
            seen: 0,
            items: Vec::new(),
            rng,
        }
    }

    pub fn push(&mut self, item: T) {
        let idx = self.seen;
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push((idx, item));
        } else {
            let j = self.rng.random_range(0..self.seen);
            if j < self.cap {
                self.items[j] = (idx, item);
            }
        }
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn into_items(mut self) -> Vec<T> {
        self.items.sort_unstable_by_key(|(i, _)| *i);
        self.items.into_iter().map(|(_, t)| t).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskReport {
    /// Well-formed records read (pool size for meta tasks).
    pub available: usize,
    /// Unparseable records.
    pub malformed: usize,
    /// Records that cannot form an instance of this task.
    pub skipped: usize,
    /// `min(available - skipped, cap)`.
    pub sampled: usize,
    /// Sampled instances lost to construction or rendering failures.
    pub dropped: usize,
    pub emitted: usize,
    pub nota_correct: usize,
    pub nota_distractor: usize,
    pub truncated: usize,
}

impl TaskReport {
    fn add(&mut self, o: &TaskReport) {
        self.available += o.available;
        self.malformed += o.malformed;
        self.skipped += o.skipped;
        self.sampled += o.sampled;
        self.dropped += o.dropped;
        self.emitted += o.emitted;
        self.nota_correct += o.nota_correct;
        self.nota_distractor += o.nota_distractor;
        self.truncated += o.truncated;
    }

    fn count_flags(&mut self, examples: &[FormattedExample]) {
        self.emitted = examples.len();
        for e in examples {
            self.nota_correct += usize::from(e.flags.contains(&Flag::NotaCorrect));
            self.nota_distractor += usize::from(e.flags.contains(&Flag::NotaDistractor));
            self.truncated += usize::from(e.flags.contains(&Flag::Truncated));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub per_task_cap: usize,
    pub master_seed: u64,
    pub tasks: BTreeMap<String, TaskReport>,
    pub totals: TaskReport,
    pub warnings: Vec<String>,
}

/// One line of a compiled corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub input: String,
    pub output: String,
    pub task: String,
    pub category: TaskCategory,
    pub definition_id: usize,
    pub prompt_id: usize,
    pub dataset: String,
    pub dialogue_id: String,
    pub instance_id: String,
    pub seed: u64,
    pub flags: Vec<Flag>,
}

impl From<&FormattedExample> for CorpusLine {
    fn from(e: &FormattedExample) -> Self {
        CorpusLine {
            input: e.input_text.clone(),
            output: e.output_text.clone(),
            task: e.task_name.clone(),
            category: e.category,
            definition_id: e.definition_id,
            prompt_id: e.prompt_id,
            dataset: e.provenance.source_dataset.clone(),
            dialogue_id: e.provenance.dialogue_id.clone(),
            instance_id: e.provenance.instance_id.clone(),
            seed: e.seed,
            flags: e.flags.iter().copied().collect(),
        }
    }
}

/// Samples `min(available, cap)` instances per task from in-memory streams.
/// Tasks come out in name order, instances in stream order.
pub fn sample_mixture<I>(streams: BTreeMap<String, I>, plan: &MixturePlan) -> (Vec<TaskInstance>, MixtureReport)
where
    I: IntoIterator<Item = TaskInstance>,
{
    let mut report = MixtureReport {
        per_task_cap: plan.per_task_cap,
        master_seed: plan.master_seed,
        ..Default::default()
    };
    let mut out = Vec::new();
    for (task, stream) in streams {
        let mut res = Reservoir::new(plan.per_task_cap, seed::rng(seed::derive(plan.master_seed, &[&task, "sample"])));
        stream.into_iter().for_each(|i| res.push(i));
        let tr = TaskReport {
            available: res.seen(),
            ..Default::default()
        };
        let items = res.into_items();
        if tr.available == 0 {
            report.warnings.push(format!("task {task} has no available instances"));
        }
        report.tasks.insert(
            task,
            TaskReport {
                sampled: items.len(),
                emitted: items.len(),
                ..tr
            },
        );
        out.extend(items);
    }
    for t in report.tasks.values() {
        report.totals.add(t);
    }
    (out, report)
}

enum Candidate {
    Ready(TaskInstance),
    Edit {
        instance_id: String,
        record: CorpusRecord,
        response: String,
        trim_last: bool,
    },
    Pretrain {
        instance_id: String,
        record: CorpusRecord,
    },
}

fn pretrain_kind(c: Construction) -> Option<PretrainKind> {
    match c {
        Construction::FillMissing => Some(PretrainKind::FillMissing),
        Construction::FindMissingIndex => Some(PretrainKind::FindMissingIndex),
        Construction::FindIncoherent => Some(PretrainKind::FindIncoherent),
        Construction::FindSwapped => Some(PretrainKind::FindSwapped),
        _ => None,
    }
}

fn direct_instance(rec: &CorpusRecord, spec: &TaskSpec, instance_id: String) -> Option<TaskInstance> {
    let gold = rec.gold.clone().or_else(|| {
        (!spec.has_options())
            .then(|| rec.target_response.clone())
            .flatten()
    })?;
    let inst = TaskInstance {
        instance_id,
        task_name: spec.name.clone(),
        context: rec.dialogue.clone(),
        // fields the task does not declare are dropped so one corpus can feed several tasks
        custom_fields: rec
            .fields
            .iter()
            .filter(|(k, _)| spec.field(k).is_some())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        class_options: if spec.has_options() { rec.class_options.clone() } else { None },
        gold_output: gold,
        target_response: rec.target_response.clone(),
        flags: Default::default(),
    };
    validate_instance(&inst, spec).ok().map(|_| inst)
}

fn candidate(rec: CorpusRecord, spec: &TaskSpec, instance_id: String) -> Option<Candidate> {
    match spec.construction {
        Construction::Direct => direct_instance(&rec, spec, instance_id).map(Candidate::Ready),
        Construction::Edit => {
            let explicit = rec.target_response.clone().or_else(|| rec.gold.clone());
            let (response, trim_last) = match explicit {
                Some(r) => (r, false),
                None if rec.dialogue.turns().len() >= 2 => {
                    let last = rec.dialogue.turns().last().expect("non-empty");
                    if last.is_mask() {
                        return None;
                    }
                    (last.text().to_owned(), true)
                }
                None => return None,
            };
            if response.trim().is_empty() {
                return None;
            }
            Some(Candidate::Edit {
                instance_id,
                record: rec,
                response,
                trim_last,
            })
        }
        c => {
            let kind = pretrain_kind(c)?;
            let turns = rec.dialogue.turns();
            if turns.len() < kind.min_turns() {
                return None;
            }
            if kind == PretrainKind::FindSwapped && turns.iter().all(|t| t.text() == turns[0].text()) {
                return None;
            }
            Some(Candidate::Pretrain { instance_id, record: rec })
        }
    }
}

fn build<R: Rng + ?Sized>(cand: Candidate, spec: &TaskSpec, donors: &[Donor], rng: &mut R) -> Option<TaskInstance> {
    let inst = match cand {
        Candidate::Ready(i) => i,
        Candidate::Edit {
            instance_id,
            record,
            response,
            trim_last,
        } => {
            let context = if trim_last {
                let turns = record.dialogue.turns();
                record.dialogue.with_turns(turns[..turns.len() - 1].to_vec()).ok()?
            } else {
                record.dialogue
            };
            let texts: Vec<String> = donors.iter().map(|d| d.text.clone()).collect();
            let mut ops = CorruptionOp::ALL;
            ops.shuffle(rng);
            ops.iter()
                .find_map(|&op| make_edit_instance(&context, &response, op, &texts, &spec.name, &instance_id, rng).ok())?
        }
        Candidate::Pretrain { instance_id, record } => {
            let kind = pretrain_kind(spec.construction)?;
            make_pretrain_instances(&record.dialogue, kind, donors, &spec.name, &instance_id, rng)
                .into_iter()
                .next()?
        }
    };
    validate_instance(&inst, spec).ok().map(|_| inst)
}

struct TaskOutput {
    examples: Vec<FormattedExample>,
    report: TaskReport,
    warnings: Vec<String>,
}

struct Ctx<'a> {
    plan: &'a MixturePlan,
    registry: &'a Registry,
    counter: &'a TokenCounter,
}

impl Ctx<'_> {
    fn instance_seed(&self, task: &str, instance_id: &str) -> u64 {
        seed::derive(self.plan.master_seed, &[task, instance_id])
    }

    fn render(&self, inst: &TaskInstance, spec: &TaskSpec, instance_seed: u64, rng: &mut seed::Rng) -> Result<FormattedExample> {
        let template = sample_template(spec, rng);
        let ex = render_example(inst, spec, template, &self.plan.format, self.counter, instance_seed)?;
        if let Err(v) = validate_format(&ex.input_text) {
            return Err(Error::Format(format!("{} fails validation: {v:?}", inst.instance_id)));
        }
        Ok(ex)
    }

    /// Renders a batch; failures are dropped with a warning.
    fn render_all(&self, instances: &[TaskInstance], spec: &TaskSpec, out: &mut TaskOutput) {
        for inst in instances {
            let s = self.instance_seed(&spec.name, &inst.instance_id);
            // a second stream so template choice is independent of construction draws
            let mut rng = seed::rng(seed::derive(s, &["template"]));
            match self.render(inst, spec, s, &mut rng) {
                Ok(ex) => out.examples.push(ex),
                Err(e) => {
                    out.report.dropped += 1;
                    log::warn!("{}: dropped {}: {e}", spec.name, inst.instance_id);
                    if out.report.dropped == 1 {
                        out.warnings.push(format!("task {}: dropped {}: {e}", spec.name, inst.instance_id));
                    }
                }
            }
        }
    }

    fn compile_task(&self, name: &str, corpora: &[CorpusDescriptor]) -> Result<TaskOutput> {
        let spec = self.registry.get(name).ok_or_else(|| Error::UnknownTask(name.into()))?;
        let master = self.plan.master_seed;
        let mut sample = Reservoir::new(self.plan.per_task_cap, seed::rng(seed::derive(master, &[name, "sample"])));
        let mut donor_pool = Reservoir::new(DONOR_POOL, seed::rng(seed::derive(master, &[name, "donors"])));
        let mut out = TaskOutput {
            examples: Vec::new(),
            report: TaskReport::default(),
            warnings: Vec::new(),
        };
        let mut ids = HashSet::new();
        let mut first_error = None;

        for desc in corpora {
            let mut reader = read_corpus(desc)?;
            for item in reader.by_ref() {
                let rec = match item {
                    Ok(r) => r,
                    Err(e) => {
                        log::warn!("{name}: {e}");
                        out.report.malformed += 1;
                        first_error.get_or_insert_with(|| e.to_string());
                        continue;
                    }
                };
                out.report.available += 1;
                let instance_id = format!("{name}/{}/{}", desc.dataset_id, rec.dialogue.dialogue_id);
                if !ids.insert(instance_id.clone()) {
                    out.report.skipped += 1;
                    log::warn!("{name}: duplicate instance {instance_id}");
                    continue;
                }
                for t in rec.dialogue.turns().iter().filter(|t| !t.is_mask()) {
                    donor_pool.push(Donor {
                        dialogue_id: rec.dialogue.dialogue_id.clone(),
                        text: t.text().to_owned(),
                    });
                }
                match candidate(rec, spec, instance_id) {
                    Some(c) => sample.push(c),
                    None => out.report.skipped += 1,
                }
            }
            if let Some(e) = reader.take_io_error() {
                return Err(e);
            }
        }
        if out.report.malformed > 0 {
            out.warnings.push(format!(
                "task {name}: {} malformed records (first: {})",
                out.report.malformed,
                first_error.unwrap_or_default()
            ));
        }
        if out.report.available == 0 {
            out.warnings.push(format!("task {name} has no available instances"));
        }

        let donors = donor_pool.into_items();
        let sampled = sample.into_items();
        out.report.sampled = sampled.len();
        let mut instances = Vec::with_capacity(sampled.len());
        for cand in sampled {
            let id = match &cand {
                Candidate::Ready(i) => i.instance_id.clone(),
                Candidate::Edit { instance_id, .. } | Candidate::Pretrain { instance_id, .. } => instance_id.clone(),
            };
            let mut rng = seed::rng(self.instance_seed(name, &id));
            match build(cand, spec, &donors, &mut rng) {
                Some(i) => instances.push(i),
                None => out.report.dropped += 1,
            }
        }

        if spec.has_options() {
            let (with_opts, without): (Vec<_>, Vec<_>) = instances.into_iter().partition(|i| i.class_options.is_some());
            let mut rng = seed::rng(seed::derive(master, &[name, "nota"]));
            instances = apply_nota(with_opts, &self.plan.nota, &mut rng)?;
            instances.extend(without);
            instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        }
        self.render_all(&instances, spec, &mut out);
        out.report.count_flags(&out.examples);
        Ok(out)
    }

    fn compile_meta(&self, name: &str, pool: &[FormattedExample]) -> TaskOutput {
        let spec = self.registry.get(name).expect("checked");
        let kind = match spec.construction {
            Construction::InstructionBinary => MetaKind::Binary,
            _ => MetaKind::Selection,
        };
        let mut out = TaskOutput {
            examples: Vec::new(),
            report: TaskReport {
                available: pool.len(),
                ..Default::default()
            },
            warnings: Vec::new(),
        };
        let cfg = MetaConfig {
            num_choices: self.plan.meta_num_choices,
            count: self.plan.per_task_cap,
        };
        let mut rng = seed::rng(seed::derive(self.plan.master_seed, &[name, "meta"]));
        match make_meta_instances(pool, kind, &cfg, name, &mut rng) {
            Ok(instances) => {
                out.report.sampled = cfg.count.min(pool.len());
                out.report.dropped = out.report.sampled - instances.len();
                self.render_all(&instances, spec, &mut out);
            }
            Err(e) => out.warnings.push(format!("task {name}: {e}")),
        }
        out.report.count_flags(&out.examples);
        out
    }
}

/// Compiles a plan into corpus lines in emission order.
pub fn compile_lines(plan: &MixturePlan, registry: &Registry) -> Result<(Vec<CorpusLine>, MixtureReport)> {
    let mut plan = plan.clone();
    plan.check(registry)?;
    if !plan.unseen_tasks.is_empty() {
        let unseen = plan.unseen_tasks.clone();
        plan = holdout_split(&plan, registry, None, &unseen)?.0;
    }
    let counter = TokenCounter::from_mode(&plan.format.tokenizer_mode)?;
    let ctx = Ctx {
        plan: &plan,
        registry,
        counter: &counter,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = plan.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Plan(format!("cannot start worker pool: {e}")))?;

    let (meta, direct): (Vec<_>, Vec<_>) = plan
        .tasks
        .iter()
        .partition(|(n, _)| registry.get(n).is_some_and(|s| s.construction.is_meta()));

    let outputs: Vec<(String, TaskOutput)> = pool.install(|| {
        direct
            .par_iter()
            .map(|(name, corpora)| ctx.compile_task(name, corpora).map(|o| ((*name).clone(), o)))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut outputs: BTreeMap<String, TaskOutput> = outputs.into_iter().collect();
    if !meta.is_empty() {
        let source: Vec<FormattedExample> = outputs.values().flat_map(|o| o.examples.iter().cloned()).collect();
        let built: Vec<(String, TaskOutput)> = pool.install(|| {
            meta.par_iter()
                .map(|(name, _)| ((*name).clone(), ctx.compile_meta(name, &source)))
                .collect()
        });
        outputs.extend(built);
    }

    let mut report = MixtureReport {
        per_task_cap: plan.per_task_cap,
        master_seed: plan.master_seed,
        ..Default::default()
    };
    let mut lines = Vec::new();
    for (name, out) in outputs {
        lines.extend(out.examples.iter().map(CorpusLine::from));
        report.totals.add(&out.report);
        report.warnings.extend(out.warnings);
        report.tasks.insert(name, out.report);
    }
    Ok((lines, report))
}

/// Path of the report written next to a compiled corpus.
pub fn report_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".report.json");
    out.with_file_name(name)
}

/// Compiles a plan to `out` (JSON lines) plus a report next to it. On
/// failure no partial corpus is left behind.
pub fn compile(plan: &MixturePlan, registry: &Registry, out: &Path) -> Result<MixtureReport> {
    let (lines, report) = compile_lines(plan, registry)?;
    let mut tmp_name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".partial");
    let tmp = out.with_file_name(tmp_name);
    let write = || -> Result<()> {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for line in &lines {
            serde_json::to_writer(&mut w, line).map_err(|e| Error::json(&tmp, e))?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, out).map_err(|e| Error::io(out, e))?;
        let rp = report_path(out);
        let doc = serde_json::to_string_pretty(&report).map_err(|e| Error::json(&rp, e))?;
        fs::write(&rp, doc + "\n").map_err(|e| Error::io(&rp, e))
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        let _ = fs::remove_file(out);
        return Err(e);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;

    fn write_corpus(dir: &Path, name: &str, n: usize, with_options: bool) -> CorpusDescriptor {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        for i in 0..n {
            let labels = ["lost item", "booking", "weather"];
            let rec = if with_options {
                serde_json::json!({
                    "dialogue_id": format!("d{i}"),
                    "turns": [{"speaker": "user", "text": format!("I need help number {i}.")},
                              {"speaker": "system", "text": "Sure. What is it?"},
                              {"speaker": "user", "text": "My bag is gone."}],
                    "class_options": ["lost item", "booking", "weather"],
                    "gold": labels[i % 3],
                })
            } else {
                serde_json::json!({
                    "dialogue_id": format!("d{i}"),
                    "turns": [{"speaker": "user", "text": format!("Hello there {i}.")},
                              {"speaker": "system", "text": "Hi. How can I help?"},
                              {"speaker": "user", "text": "Just chatting today."}],
                    "target_response": "That sounds nice. Tell me more.",
                })
            };
            writeln!(f, "{rec}").unwrap();
        }
        CorpusDescriptor::new(path, name.trim_end_matches(".jsonl"), Split::Train)
    }

    #[test]
    fn reservoir_is_uniform_enough() {
        let mut hits = [0usize; 10];
        for s in 0..2000 {
            let mut r = Reservoir::new(3, seed::rng(s));
            (0..10).for_each(|i| r.push(i));
            let items = r.into_items();
            assert_eq!(items.len(), 3);
            assert!(items.windows(2).all(|w| w[0] < w[1]));
            items.into_iter().for_each(|i| hits[i] += 1);
        }
        // each item is kept with probability 0.3; 600 expected, sd about 20
        for h in hits {
            assert!((500..700).contains(&h), "{hits:?}");
        }
    }

    #[test]
    fn sample_mixture_caps_and_orders() {
        let plan = MixturePlan {
            per_task_cap: 5,
            ..MixturePlan::new(1)
        };
        let mk = |task: &str, n: usize| -> Vec<TaskInstance> {
            (0..n)
                .map(|i| TaskInstance {
                    instance_id: format!("{task}/{i}"),
                    task_name: task.into(),
                    context: crate::types::Dialogue::new(format!("d{i}"), vec![crate::types::Turn::new("a", "hi").unwrap()], "x").unwrap(),
                    custom_fields: Default::default(),
                    class_options: None,
                    gold_output: "ok".into(),
                    target_response: None,
                    flags: Default::default(),
                })
                .collect()
        };
        let streams = BTreeMap::from([("b".to_string(), mk("b", 3)), ("a".to_string(), mk("a", 12))]);
        let (out, report) = sample_mixture(streams.clone(), &plan);
        assert_eq!(report.tasks["a"].sampled, 5);
        assert_eq!(report.tasks["b"].sampled, 3);
        assert_eq!(out.len(), 8);
        assert!(out[..5].iter().all(|i| i.task_name == "a"));
        assert_eq!(sample_mixture(streams, &plan).0, out);
    }

    #[test]
    fn compile_small_mixture() {
        let dir = tempfile::tempdir().unwrap();
        let intents = write_corpus(dir.path(), "intents.jsonl", 100, true);
        let chat = write_corpus(dir.path(), "chat.jsonl", 40, false);
        let plan = MixturePlan::new(7)
            .with_task("intent classification", vec![intents])
            .with_task("response generation", vec![chat.clone()])
            .with_task("edit generation", vec![chat.clone()])
            .with_task("fill missing utterance", vec![chat.clone()])
            .with_task("find incoherent utterance", vec![chat])
            .with_task("instruction binary", vec![]);
        let reg = Registry::builtin();
        let (lines, report) = compile_lines(&plan, &reg).unwrap();
        assert_eq!(report.tasks["intent classification"].emitted, 100);
        assert_eq!(report.tasks["intent classification"].nota_correct, 5);
        assert_eq!(report.tasks["intent classification"].nota_distractor, 5);
        assert_eq!(report.tasks["response generation"].emitted, 40);
        assert_eq!(report.tasks["edit generation"].emitted, 40);
        assert_eq!(report.tasks["instruction binary"].emitted, 260);
        assert_eq!(lines.len(), report.totals.emitted);
        let tasks: Vec<&str> = lines.iter().map(|l| l.task.as_str()).collect();
        let mut sorted = tasks.clone();
        sorted.sort();
        assert_eq!(tasks, sorted);
        for l in &lines {
            validate_format(&l.input).unwrap();
        }
    }

    #[test]
    fn compile_writes_corpus_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let intents = write_corpus(dir.path(), "intents.jsonl", 20, true);
        let plan = MixturePlan::new(3).with_task("intent detection", vec![intents]);
        let out = dir.path().join("train.jsonl");
        let report = compile(&plan, &Registry::builtin(), &out).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 20);
        assert_eq!(report.tasks["intent classification"].emitted, 20);
        let first: indexmap::IndexMap<String, serde_json::Value> = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<&str> = first.keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["input", "output", "task", "category", "definition_id", "prompt_id", "dataset", "dialogue_id", "instance_id", "seed", "flags"]
        );
        assert!(report_path(&out).exists());
    }

    #[test]
    fn failed_compile_leaves_no_output() {
        let dir = tempfile::tempdir().unwrap();
        let plan = MixturePlan::new(3).with_task(
            "intent classification",
            vec![CorpusDescriptor::new(dir.path().join("missing.jsonl"), "x", Split::Train)],
        );
        let out = dir.path().join("train.jsonl");
        assert!(compile(&plan, &Registry::builtin(), &out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn holdout() {
        let reg = Registry::builtin();
        let d = CorpusDescriptor::new("x.jsonl", "x", Split::Train);
        let plan = MixturePlan::new(0)
            .with_task("eval selection", vec![d.clone()])
            .with_task("relation classification", vec![d.clone()])
            .with_task("intent classification", vec![d]);
        let unseen: BTreeSet<String> = ["eval selection", "relation classification"].map(String::from).into();
        let (train, eval) = holdout_split(&plan, &reg, None, &unseen).unwrap();
        assert_eq!(train.tasks.keys().collect::<Vec<_>>(), ["intent classification"]);
        assert_eq!(eval.tasks.len(), 2);
        let (train, _) = holdout_split(&plan, &reg, None, &BTreeSet::new()).unwrap();
        assert_eq!(train.tasks.len(), 3);
        let seen: BTreeSet<String> = ["eval selection".to_string()].into();
        assert!(holdout_split(&plan, &reg, Some(&seen), &unseen).is_err());
        let bogus: BTreeSet<String> = ["no such task".to_string()].into();
        assert!(holdout_split(&plan, &reg, None, &bogus).is_err());
    }
}
