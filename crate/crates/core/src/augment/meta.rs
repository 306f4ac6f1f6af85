use std::collections::BTreeMap;

use indexmap::IndexMap;
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formatter::Segments;
use crate::registry::meta_fields::{INPUT, INSTRUCTION, OUTPUT};
use crate::tokens::{self, MASK};
use crate::types::{Dialogue, FormattedExample, TaskInstance, Turn};

pub const DEFAULT_NUM_CHOICES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaKind {
    /// Pick the instruction that produced an input/output pair.
    Selection,
    /// Say whether a given instruction produced an input/output pair.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub num_choices: usize,
    /// Upper bound on the number of instances built.
    pub count: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            num_choices: DEFAULT_NUM_CHOICES,
            count: usize::MAX,
        }
    }
}

/// The natural-language instruction of a formatted example: its definition
/// followed by its prompt.
pub fn instruction_of(example: &FormattedExample) -> Result<String> {
    Segments::parse(&example.input_text).map(|s| joined_instruction(&s))
}

fn joined_instruction(segs: &Segments) -> String {
    [segs.instruction.as_str(), segs.prompt.as_str()]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

struct Parsed<'a> {
    example: &'a FormattedExample,
    instruction: String,
    segments: Segments,
}

/// Builds meta-task instances from a pool of already formatted examples.
///
/// Each instance embeds one pool example: its dialogue turns become the
/// context, its custom fields and options (special tokens flattened to
/// `LABEL:` text) become `INPUT`, its output becomes `OUTPUT`. Distractor
/// instructions come from examples of other tasks, at most one per task.
pub fn make_meta_instances<R: Rng + ?Sized>(
    pool: &[FormattedExample],
    kind: MetaKind,
    cfg: &MetaConfig,
    task_name: &str,
    rng: &mut R,
) -> Result<Vec<TaskInstance>> {
    let needed = match kind {
        MetaKind::Selection => cfg.num_choices,
        MetaKind::Binary => 2,
    };
    if needed < 2 {
        return Err(Error::Augment("meta tasks need at least two choices".into()));
    }
    let parsed = pool
        .iter()
        .map(|example| {
            Segments::parse(&example.input_text).map(|segments| Parsed {
                example,
                instruction: joined_instruction(&segments),
                segments,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in parsed.iter().enumerate() {
        by_task.entry(p.example.task_name.as_str()).or_default().push(i);
    }
    if by_task.len() < needed {
        return Err(Error::Augment(format!(
            "{task_name} needs examples from at least {needed} tasks, pool has {}",
            by_task.len()
        )));
    }

    let k = cfg.count.min(parsed.len());
    let mut chosen = index::sample(rng, parsed.len(), k).into_vec();
    chosen.sort_unstable();

    let mut out = Vec::with_capacity(k);
    for idx in chosen {
        let host = &parsed[idx];
        let mut others: Vec<&str> = by_task
            .keys()
            .copied()
            .filter(|t| *t != host.example.task_name)
            .collect();
        others.shuffle(rng);

        let mut fields = embedded_fields(&host.segments, &host.example.output_text);
        let (options, gold) = match kind {
            MetaKind::Selection => {
                let mut options = vec![host.instruction.clone()];
                for task in others {
                    if options.len() == cfg.num_choices {
                        break;
                    }
                    let pick = &parsed[*by_task[task].choose(rng).expect("non-empty")];
                    if !options.contains(&pick.instruction) {
                        options.push(pick.instruction.clone());
                    }
                }
                if options.len() < cfg.num_choices {
                    continue;
                }
                options.shuffle(rng);
                (options, host.instruction.clone())
            }
            MetaKind::Binary => {
                let positive = rng.random_bool(0.5);
                let instruction = if positive {
                    host.instruction.clone()
                } else {
                    let task = others[0];
                    let pick = &parsed[*by_task[task].choose(rng).expect("non-empty")];
                    if pick.instruction == host.instruction {
                        continue;
                    }
                    pick.instruction.clone()
                };
                fields.shift_insert(0, INSTRUCTION.to_owned(), instruction);
                let gold = if positive { "yes" } else { "no" };
                (vec!["yes".to_owned(), "no".to_owned()], gold.to_owned())
            }
        };

        let turns = host
            .segments
            .turns
            .iter()
            .map(|t| if t == MASK { Ok(Turn::mask("")) } else { Turn::new("", t) })
            .collect::<Result<Vec<_>>>()?;
        let context = Dialogue::new(
            host.example.provenance.dialogue_id.clone(),
            turns,
            host.example.provenance.source_dataset.clone(),
        )?;
        out.push(TaskInstance {
            instance_id: format!("{task_name}/{}", host.example.provenance.instance_id),
            task_name: task_name.to_owned(),
            context,
            custom_fields: fields,
            class_options: Some(options),
            gold_output: gold,
            target_response: None,
            flags: Default::default(),
        });
    }
    Ok(out)
}

fn embedded_fields(segs: &Segments, output: &str) -> IndexMap<String, String> {
    let input = [segs.custom_fields.as_str(), segs.options.as_deref().unwrap_or("")]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    let mut fields = IndexMap::new();
    if !input.is_empty() {
        fields.insert(INPUT.to_owned(), tokens::flatten(&input));
    }
    fields.insert(OUTPUT.to_owned(), tokens::flatten(output));
    fields
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formatter::{render_example, FormatConfig, TokenCounter};
    use crate::registry::{Registry, TemplateChoice};

    fn example(reg: &Registry, task: &str, id: usize, fields: &[(&str, &str)], options: Option<&[&str]>, gold: &str) -> FormattedExample {
        let spec = reg.get(task).unwrap();
        let inst = TaskInstance {
            instance_id: format!("{task}/{id}"),
            task_name: spec.name.clone(),
            context: Dialogue::new(
                format!("d{id}"),
                vec![Turn::new("a", "I lost my bag.").unwrap(), Turn::new("b", "Sorry to hear that.").unwrap()],
                "fixture",
            )
            .unwrap(),
            custom_fields: fields.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            class_options: options.map(|o| o.iter().map(|s| s.to_string()).collect()),
            gold_output: gold.into(),
            target_response: None,
            flags: Default::default(),
        };
        let t = TemplateChoice { definition_id: id % 3, prompt_id: 0 };
        render_example(&inst, spec, t, &FormatConfig::default(), &TokenCounter::Whitespace, 0).unwrap()
    }

    fn pool() -> Vec<FormattedExample> {
        let reg = Registry::builtin();
        let mut v = Vec::new();
        for i in 0..3 {
            v.push(example(&reg, "intent classification", i, &[], Some(&["lost item", "booking"]), "lost item"));
            v.push(example(&reg, "emotion grounded generation", i, &[("EMOTION", "sad")], None, "I am sorry."));
            v.push(example(&reg, "response generation", i, &[], None, "Where did you lose it?"));
            v.push(example(&reg, "summarization", i, &[], None, "A lost bag."));
        }
        v
    }

    #[test]
    fn selection_instances_are_valid() {
        let reg = Registry::builtin();
        let pool = pool();
        let cfg = MetaConfig::default();
        let out = make_meta_instances(&pool, MetaKind::Selection, &cfg, "instruction selection", &mut crate::seed::rng(1)).unwrap();
        assert_eq!(out.len(), pool.len());
        for inst in &out {
            let opts = inst.class_options.as_ref().unwrap();
            assert_eq!(opts.len(), 4);
            assert!(opts.contains(&inst.gold_output));
            reg.validate_instance(inst).unwrap();
            assert!(!inst.custom_fields[OUTPUT].contains('['));
        }
        let first = &out[0];
        assert_eq!(first.custom_fields[INPUT], "The possible intents are: OPTIONS: lost item | booking");
        assert_eq!(first.gold_output, instruction_of(&pool[0]).unwrap());
    }

    #[test]
    fn binary_instances_are_valid() {
        let reg = Registry::builtin();
        let pool = pool();
        let out = make_meta_instances(&pool, MetaKind::Binary, &MetaConfig::default(), "instruction binary", &mut crate::seed::rng(2)).unwrap();
        assert!(!out.is_empty());
        for inst in &out {
            reg.validate_instance(inst).unwrap();
            assert_eq!(inst.class_options.as_deref().unwrap(), ["yes", "no"]);
            assert_eq!(inst.custom_fields.keys().next().unwrap(), INSTRUCTION);
        }
    }

    #[test]
    fn too_few_tasks_is_an_error() {
        let pool: Vec<_> = pool().into_iter().filter(|e| e.task_name != "summarization").collect();
        let res = make_meta_instances(&pool, MetaKind::Selection, &MetaConfig::default(), "instruction selection", &mut crate::seed::rng(1));
        assert!(matches!(res, Err(Error::Augment(_))));
    }

    #[test]
    fn count_caps_output() {
        let cfg = MetaConfig { count: 5, ..MetaConfig::default() };
        let out = make_meta_instances(&pool(), MetaKind::Selection, &cfg, "instruction selection", &mut crate::seed::rng(1)).unwrap();
        assert_eq!(out.len(), 5);
    }
}
