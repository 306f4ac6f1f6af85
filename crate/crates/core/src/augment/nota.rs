use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Flag, TaskInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NotaConfig {
    /// Fraction of a task's instances that receive a NOTA option.
    pub rate: f64,
    /// Fraction of those where NOTA is the correct answer.
    pub correct_fraction: f64,
    pub nota_text: String,
}

impl Default for NotaConfig {
    fn default() -> Self {
        NotaConfig {
            rate: 0.10,
            correct_fraction: 0.5,
            nota_text: "none of the above".into(),
        }
    }
}

impl NotaConfig {
    pub fn check(&self) -> Result<()> {
        for (name, v) in [("rate", self.rate), ("correct_fraction", self.correct_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Plan(format!("nota {name} {v} outside [0, 1]")));
            }
        }
        if self.nota_text.trim().is_empty() {
            return Err(Error::Plan("empty nota_text".into()));
        }
        Ok(())
    }
}

/// `floor(fraction * n)`, tolerant of binary rounding (0.29 * 100 is 28.999…).
pub fn nota_quota(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Adds a NOTA option to exactly `floor(rate * n)` instances.
///
/// Instances whose options already contain the NOTA text are not eligible.
/// Single-option instances can only become distractors, since removing their
/// gold would leave no real option.
pub fn apply_nota<R: Rng + ?Sized>(
    mut instances: Vec<TaskInstance>,
    cfg: &NotaConfig,
    rng: &mut R,
) -> Result<Vec<TaskInstance>> {
    cfg.check()?;
    for inst in &instances {
        match &inst.class_options {
            Some(opts) if opts.contains(&inst.gold_output) => {}
            _ => {
                return Err(Error::Augment(format!(
                    "instance {} has no options containing its gold label",
                    inst.instance_id
                )))
            }
        }
    }

    let eligible: Vec<usize> = instances
        .iter()
        .enumerate()
        .filter(|(_, i)| !i.class_options.as_ref().unwrap().contains(&cfg.nota_text))
        .map(|(k, _)| k)
        .collect();
    let k = nota_quota(cfg.rate, instances.len()).min(eligible.len());
    let chosen: Vec<usize> = index::sample(rng, eligible.len(), k)
        .into_iter()
        .map(|j| eligible[j])
        .collect();
    let quota = nota_quota(cfg.correct_fraction, k);

    let mut correct = 0;
    for idx in chosen {
        let inst = &mut instances[idx];
        let opts = inst.class_options.as_mut().unwrap();
        if correct < quota && opts.len() >= 2 {
            opts.retain(|o| *o != inst.gold_output);
            let slot = rng.random_range(0..=opts.len());
            opts.insert(slot, cfg.nota_text.clone());
            inst.gold_output = cfg.nota_text.clone();
            inst.flags.insert(Flag::NotaCorrect);
            correct += 1;
        } else {
            let slot = rng.random_range(0..=opts.len());
            opts.insert(slot, cfg.nota_text.clone());
            inst.flags.insert(Flag::NotaDistractor);
        }
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::types::{Dialogue, Turn};
    use std::collections::BTreeSet;

    fn instances(n: usize, options: &[&str], gold: &str) -> Vec<TaskInstance> {
        (0..n)
            .map(|i| TaskInstance {
                instance_id: format!("i{i}"),
                task_name: "intent classification".into(),
                context: Dialogue::new(format!("d{i}"), vec![Turn::new("a", "hi").unwrap()], "x")
                    .unwrap(),
                custom_fields: Default::default(),
                class_options: Some(options.iter().map(|s| s.to_string()).collect()),
                gold_output: gold.into(),
                target_response: None,
                flags: BTreeSet::new(),
            })
            .collect()
    }

    fn count(v: &[TaskInstance], f: Flag) -> usize {
        v.iter().filter(|i| i.flags.contains(&f)).count()
    }

    #[test]
    fn exact_counts_at_default_rate() {
        let out = apply_nota(instances(100, &["a", "b", "c"], "b"), &NotaConfig::default(), &mut seed::rng(1))
            .unwrap();
        assert_eq!(count(&out, Flag::NotaCorrect), 5);
        assert_eq!(count(&out, Flag::NotaDistractor), 5);
    }

    #[test]
    fn correct_and_distractor_soundness() {
        let cfg = NotaConfig::default();
        let out = apply_nota(instances(200, &["a", "b", "c"], "b"), &cfg, &mut seed::rng(2)).unwrap();
        for inst in &out {
            let opts = inst.class_options.as_ref().unwrap();
            if inst.flags.contains(&Flag::NotaCorrect) {
                assert_eq!(inst.gold_output, cfg.nota_text);
                assert!(!opts.contains(&"b".to_string()));
                assert!(opts.contains(&"a".to_string()) && opts.contains(&"c".to_string()));
                assert_eq!(opts.len(), 3);
            } else if inst.flags.contains(&Flag::NotaDistractor) {
                assert_eq!(inst.gold_output, "b");
                assert!(opts.contains(&"b".to_string()) && opts.contains(&cfg.nota_text));
            } else {
                assert_eq!(opts, &["a", "b", "c"]);
            }
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let input = instances(50, &["a", "b"], "a");
        let cfg = NotaConfig {
            rate: 0.0,
            ..NotaConfig::default()
        };
        assert_eq!(apply_nota(input.clone(), &cfg, &mut seed::rng(3)).unwrap(), input);
    }

    #[test]
    fn single_option_instances_only_become_distractors() {
        let cfg = NotaConfig {
            rate: 1.0,
            ..NotaConfig::default()
        };
        let out = apply_nota(instances(10, &["only"], "only"), &cfg, &mut seed::rng(4)).unwrap();
        assert_eq!(count(&out, Flag::NotaCorrect), 0);
        assert_eq!(count(&out, Flag::NotaDistractor), 10);
    }

    #[test]
    fn quota_floor_is_robust_to_rounding() {
        assert_eq!(nota_quota(0.29, 100), 29);
        assert_eq!(nota_quota(0.1, 1000), 100);
        assert_eq!(nota_quota(0.1, 9), 0);
    }

    #[test]
    fn rejects_gold_outside_options() {
        assert!(apply_nota(instances(3, &["a"], "z"), &NotaConfig::default(), &mut seed::rng(5)).is_err());
    }
}
