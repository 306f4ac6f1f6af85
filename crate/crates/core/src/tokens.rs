//! Reserved special tokens.
//!
//! These strings are part of the output vocabulary contract and may never
//! appear inside payload text (turns, field values, options, gold outputs).
//! Per-task field tokens such as `[EMOTION]` are declared in the registry and
//! are reserved on top of this fixed list.

use std::sync::LazyLock;

use regex::Regex;

pub const CONTEXT: &str = "[CONTEXT]";
pub const END_OF_TURN: &str = "[ENDOFTURN]";
pub const END_OF_DIALOGUE: &str = "[ENDOFDIALOGUE]";
pub const QUESTION: &str = "[QUESTION]";
pub const OPTIONS: &str = "[OPTIONS]";
pub const MASK: &str = "[MASK]";

pub const FIXED: [&str; 6] = [CONTEXT, END_OF_TURN, END_OF_DIALOGUE, QUESTION, OPTIONS, MASK];

/// Shape of every special token: an upper-case label in square brackets.
pub(crate) static TOKEN_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[[A-Z][A-Z0-9 _]*\]").expect("token pattern"));

/// First reserved token (fixed list or `extra`) contained in `text`.
pub fn find_reserved<'a>(text: &str, extra: impl IntoIterator<Item = &'a str>) -> Option<String> {
    FIXED
        .iter()
        .copied()
        .chain(extra)
        .find(|tok| text.contains(tok))
        .map(str::to_owned)
}

/// Whether `token` is syntactically a special token.
pub fn is_token_shaped(token: &str) -> bool {
    TOKEN_PATTERN
        .find(token)
        .is_some_and(|m| m.start() == 0 && m.end() == token.len())
}

/// Rewrites every special token in `text` as a plain `LABEL:` prefix.
pub fn flatten(text: &str) -> String {
    TOKEN_PATTERN
        .replace_all(text, |caps: &regex::Captures<'_>| {
            let tok = &caps[0];
            format!("{}:", &tok[1..tok.len() - 1])
        })
        .into_owned()
}
