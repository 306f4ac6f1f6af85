mod common;

use dialcomp::formatter::{render_example, truncate_input, validate_format, FormatViolation};
use dialcomp::registry::sample_template;
use dialcomp::types::{Turn, Violation};
use dialcomp::{seed, tokens, Flag, FormatConfig, Registry, Segments, TokenCounter};
use proptest::prelude::*;

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn rendered_inputs_respect_budgets_and_layout(
        seed_value in any::<u64>(),
        input_budget in 120usize..1100,
        output_budget in 1usize..300,
        max_turn_words in 1usize..200,
    ) {
        let reg = Registry::builtin();
        let specs = common::direct_specs(&reg);
        let mut rng = seed::rng(seed_value);
        let spec = specs[(seed_value % specs.len() as u64) as usize];
        let inst = common::random_instance(spec, &mut rng, 0, max_turn_words);
        let cfg = FormatConfig { input_budget, output_budget, ..FormatConfig::default() };
        let template = sample_template(spec, &mut rng);
        let ex = render_example(&inst, spec, template, &cfg, &TokenCounter::Whitespace, seed_value).unwrap();

        prop_assert!(words(&ex.input_text) <= input_budget);
        prop_assert!(words(&ex.output_text) <= output_budget);
        prop_assert!(validate_format(&ex.input_text).is_ok());
        let segs = Segments::parse(&ex.input_text).unwrap();
        prop_assert_eq!(segs.render(), ex.input_text.clone());
        prop_assert_eq!(segs.options.is_some(), spec.has_options());

        // the most recent turn survives truncation, possibly shortened from the front
        let last = inst.context.turns().last().unwrap().text();
        prop_assert!(last.ends_with(segs.turns.last().unwrap().as_str()));

        let roomy = FormatConfig { input_budget, output_budget: usize::MAX, ..FormatConfig::default() };
        let full = render_example(&inst, spec, template, &roomy, &TokenCounter::Whitespace, seed_value).unwrap();
        prop_assert!(full.output_text.starts_with(&ex.output_text));
        let cut = ex.output_text != full.output_text
            || segs.turns.len() < inst.context.turns().len()
            || segs.turns.last().unwrap() != last;
        prop_assert_eq!(ex.flags.contains(&Flag::Truncated), cut);
    }

    #[test]
    fn truncation_is_idempotent(seed_value in any::<u64>(), budget in 60usize..400) {
        let reg = Registry::builtin();
        let spec = reg.get("response generation").unwrap();
        let mut rng = seed::rng(seed_value);
        let inst = common::random_instance(spec, &mut rng, 0, 80);
        let ex = render_example(&inst, spec, sample_template(spec, &mut rng), &FormatConfig::default(), &TokenCounter::Whitespace, 0).unwrap();
        let (once, _) = truncate_input(&ex.input_text, budget, &TokenCounter::Whitespace).unwrap();
        let (twice, again) = truncate_input(&once, budget, &TokenCounter::Whitespace).unwrap();
        prop_assert!(words(&once) <= budget);
        prop_assert!(!again);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn reserved_tokens_are_rejected_in_turns(prefix in "[a-z ]{0,10}", which in 0usize..6) {
        let text = format!("{prefix}{}", tokens::FIXED[which]);
        prop_assert!(Turn::new("a", &text).is_err());
    }

    #[test]
    fn reserved_tokens_are_reported_in_fields(seed_value in any::<u64>(), which in 0usize..6) {
        let reg = Registry::builtin();
        let spec = reg.get("knowledge grounded generation").unwrap();
        let mut inst = common::random_instance(spec, &mut seed::rng(seed_value), 0, 10);
        inst.custom_fields.insert("KNOWLEDGE".into(), format!("fact {}", tokens::FIXED[which]));
        let violations = reg.validate_instance(&inst).unwrap_err();
        prop_assert!(violations.iter().any(|v| matches!(v, Violation::ReservedToken { .. })), "{violations:?}");
    }
}

#[test]
fn validator_flags_each_structural_fault() {
    let good = "Do it. [CONTEXT] hi [ENDOFTURN] yo [ENDOFDIALOGUE] [OPTIONS] a | b [QUESTION] Which?";
    assert!(validate_format(good).is_ok());
    let bad = [
        "Do it. hi [ENDOFDIALOGUE] [QUESTION] Which?",
        "Do it. [CONTEXT] hi [CONTEXT] yo [ENDOFDIALOGUE] [QUESTION] Which?",
        "Do it. [CONTEXT] hi [ENDOFDIALOGUE] [QUESTION] Which? [QUESTION] Again?",
        "Do it. [QUESTION] Which? [CONTEXT] hi [ENDOFDIALOGUE]",
        "Do it. [CONTEXT] hi [ENDOFDIALOGUE] [QUESTION] Which? [OPTIONS] a | b",
        "Do it. [CONTEXT] hi [ENDOFDIALOGUE] [ENDOFTURN] [QUESTION] Which?",
    ];
    for text in bad {
        let v: Vec<FormatViolation> = validate_format(text).unwrap_err();
        assert!(!v.is_empty(), "{text}");
        assert!(Segments::parse(text).is_err());
    }
}
