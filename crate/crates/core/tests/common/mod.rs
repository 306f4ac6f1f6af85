//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dialcomp::ingest::{CorpusDescriptor, Split};
use dialcomp::registry::Construction;
use dialcomp::seed;
use dialcomp::types::{Dialogue, TaskInstance, Turn};
use dialcomp::{Registry, TaskSpec};
use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const WORDS: [&str; 24] = [
    "train", "station", "bag", "ticket", "london", "today", "please", "help", "lost", "blue",
    "small", "call", "time", "hotel", "room", "booking", "dinner", "table", "late", "sorry",
    "maybe", "thanks", "where", "when",
];

pub const INTENTS: [&str; 4] = ["lost item", "booking", "schedule", "checkout"];

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn sentence<R: Rng + ?Sized>(rng: &mut R, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    let mut words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let end = [".", "?", "!"].choose(rng).unwrap().to_string();
    let last = format!("{}{end}", words.pop().unwrap());
    words.push(&last);
    words.join(" ")
}

pub fn utterance<R: Rng + ?Sized>(rng: &mut R, sentences: usize) -> String {
    (0..sentences).map(|_| sentence(rng, 3, 8)).collect::<Vec<_>>().join(" ")
}

fn turns_json<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<serde_json::Value> {
    (0..n)
        .map(|i| {
            let k = rng.random_range(1..=3);
            serde_json::json!({"speaker": if i % 2 == 0 { "user" } else { "system" }, "text": utterance(rng, k)})
        })
        .collect()
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = serde_json::Value>) {
    let mut w = BufWriter::new(File::create(path).unwrap());
    for l in lines {
        writeln!(w, "{l}").unwrap();
    }
    w.flush().unwrap();
}

/// Intent-style records with four options and a gold label among them.
pub fn classification_corpus(dir: &Path, name: &str, n: usize, seed_value: u64) -> CorpusDescriptor {
    let mut rng = seed::rng(seed_value);
    let path = dir.join(format!("{name}.jsonl"));
    let records: Vec<_> = (0..n)
        .map(|i| {
            let t = rng.random_range(1..=4);
            serde_json::json!({
                "dialogue_id": format!("c{i}"),
                "turns": turns_json(&mut rng, t),
                "class_options": INTENTS,
                "gold": INTENTS[i % INTENTS.len()],
            })
        })
        .collect();
    write_lines(&path, records);
    CorpusDescriptor::new(path, name, Split::Train)
}

/// Chat records with 3-6 turns, a multi-sentence target response and
/// knowledge / initial-phrase fields so one file can feed many tasks.
pub fn dialogue_corpus(dir: &Path, name: &str, n: usize, seed_value: u64) -> CorpusDescriptor {
    let mut rng = seed::rng(seed_value);
    let path = dir.join(format!("{name}.jsonl"));
    let records: Vec<_> = (0..n)
        .map(|i| {
            let t = rng.random_range(3..=6);
            let k = rng.random_range(1..=3);
            let response = utterance(&mut rng, k);
            let phrase: String = response.split_whitespace().take(2).collect::<Vec<_>>().join(" ");
            serde_json::json!({
                "dialogue_id": format!("g{i}"),
                "turns": turns_json(&mut rng, t),
                "target_response": response,
                "fields": {"KNOWLEDGE": sentence(&mut rng, 5, 12), "INITIAL PHRASE": phrase},
            })
        })
        .collect();
    write_lines(&path, records);
    CorpusDescriptor::new(path, name, Split::Train)
}

/// A valid random instance of a direct task. Turn lengths go up to
/// `max_turn_words` so long dialogues overflow the input budget.
pub fn random_instance<R: Rng + ?Sized>(spec: &TaskSpec, rng: &mut R, id: usize, max_turn_words: usize) -> TaskInstance {
    let n_turns = rng.random_range(1..=12);
    let turns: Vec<Turn> = (0..n_turns)
        .map(|i| {
            let n = rng.random_range(1..=max_turn_words);
            let text: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
            Turn::new(if i % 2 == 0 { "user" } else { "system" }, text.join(" ")).unwrap()
        })
        .collect();
    let context = Dialogue::new(format!("d{id}"), turns, "fuzz").unwrap();
    let custom_fields: IndexMap<String, String> = spec
        .fields
        .iter()
        .map(|f| (f.label.clone(), sentence(rng, 1, 12)))
        .collect();
    let (class_options, gold_output) = if spec.has_options() {
        let k = rng.random_range(2..=6);
        let opts: Vec<String> = (0..k).map(|j| format!("{} {j}", WORDS.choose(rng).unwrap())).collect();
        let gold = opts.choose(rng).unwrap().clone();
        (Some(opts), gold)
    } else {
        let n = rng.random_range(1..=400);
        let out: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
        (None, out.join(" "))
    };
    TaskInstance {
        instance_id: format!("f{id}"),
        task_name: spec.name.clone(),
        context,
        custom_fields,
        class_options,
        gold_output,
        target_response: None,
        flags: Default::default(),
    }
}

/// Builtin tasks whose instances come straight from a dialogue record.
pub fn direct_specs(registry: &Registry) -> Vec<&TaskSpec> {
    registry.specs().filter(|s| s.construction == Construction::Direct).collect()
}
