use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::types::{Dialogue, TaskInstance, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainKind {
    /// One turn masked; gold is the masked text.
    FillMissing,
    /// One turn masked; gold is its 1-based index.
    FindMissingIndex,
    /// One turn replaced by a foreign utterance; gold is its index.
    FindIncoherent,
    /// Two turns swapped; gold is "i, j" ascending.
    FindSwapped,
}

impl PretrainKind {
    pub fn min_turns(self) -> usize {
        match self {
            PretrainKind::FindIncoherent => 2,
            _ => 3,
        }
    }
}

/// An utterance from some other dialogue of the same corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Donor {
    pub dialogue_id: String,
    pub text: String,
}

/// Builds the pretraining instance of `kind` for a dialogue. Returns an empty
/// vector when the dialogue cannot support the objective.
pub fn make_pretrain_instances<R: Rng + ?Sized>(
    dialogue: &Dialogue,
    kind: PretrainKind,
    donors: &[Donor],
    task_name: &str,
    instance_id: &str,
    rng: &mut R,
) -> Vec<TaskInstance> {
    let turns = dialogue.turns();
    if turns.len() < kind.min_turns() {
        return Vec::new();
    }
    let mut new_turns = turns.to_vec();
    let gold = match kind {
        PretrainKind::FillMissing | PretrainKind::FindMissingIndex => {
            let idx = rng.random_range(0..turns.len());
            new_turns[idx] = Turn::mask(turns[idx].speaker());
            match kind {
                PretrainKind::FillMissing => turns[idx].text().to_owned(),
                _ => (idx + 1).to_string(),
            }
        }
        PretrainKind::FindIncoherent => {
            let idx = rng.random_range(0..turns.len());
            let pool: Vec<&Donor> = donors
                .iter()
                .filter(|d| d.dialogue_id != dialogue.dialogue_id && d.text != turns[idx].text())
                .collect();
            let Some(donor) = pool.choose(rng) else {
                return Vec::new();
            };
            let Ok(turn) = Turn::new(turns[idx].speaker(), &donor.text) else {
                return Vec::new();
            };
            new_turns[idx] = turn;
            (idx + 1).to_string()
        }
        PretrainKind::FindSwapped => {
            let pairs: Vec<(usize, usize)> = (0..turns.len())
                .flat_map(|i| (i + 1..turns.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| turns[i].text() != turns[j].text())
                .collect();
            let Some(&(i, j)) = pairs.choose(rng) else {
                return Vec::new();
            };
            new_turns.swap(i, j);
            format!("{}, {}", i + 1, j + 1)
        }
    };
    let Ok(context) = dialogue.with_turns(new_turns) else {
        return Vec::new();
    };
    vec![TaskInstance {
        instance_id: instance_id.to_owned(),
        task_name: task_name.to_owned(),
        context,
        custom_fields: Default::default(),
        class_options: None,
        gold_output: gold,
        target_response: None,
        flags: Default::default(),
    }]
}
