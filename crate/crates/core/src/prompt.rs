//! Prompt text and `{placeholder}` substitution.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::Message;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template is missing placeholder {{{0}}}")]
    MissingPlaceholder(String),
}

/// A system/user message pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn messages(&self) -> Vec<Message> {
        let mut out = Vec::with_capacity(2);
        if !self.system.is_empty() {
            out.push(Message::system(self.system.clone()));
        }
        out.push(Message::user(self.user.clone()));
        out
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[system]\n{}\n\n[user]\n{}\n", self.system, self.user)
    }
}

/// Replaces `{name}` occurrences for each `(name, value)` in a single left to
/// right pass; substituted values are never rescanned. Unknown `{...}`
/// sequences are kept verbatim.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn has_placeholder(template: &str, name: &str) -> bool {
    template.contains(&format!("{{{name}}}"))
}

pub fn require(template: &str, names: &[&str]) -> Result<(), TemplateError> {
    match names.iter().find(|n| !has_placeholder(template, n)) {
        Some(n) => Err(TemplateError::MissingPlaceholder(n.to_string())),
        None => Ok(()),
    }
}
