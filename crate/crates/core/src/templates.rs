//! Prompt templates.
//!
//! Templates are plain UTF-8 files using `{name}` placeholders; `{{` and
//! `}}` stand for literal braces. Built-in templates are compiled in from
//! `resources/templates/`; a directory with the same relative layout can
//! override any of them at runtime. One trailing newline is stripped from
//! every file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("template {template:?} has no value for placeholder {{{name}}}")]
    MissingValue { template: String, name: String },
    #[error("template {template:?}: unbalanced brace at byte {at}")]
    Syntax { template: String, at: usize },
    #[error("reading template overrides: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../resources/templates/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "retrieval/wrapper",
    "retrieval/instruction_query",
    "retrieval/instruction_reasoning",
    "retrieval/instruction_question",
    "retrieval/instruction_history",
    "retrieval/body_reasoning",
    "retrieval/body_question",
    "retrieval/history_header",
    "retrieval/turn_query",
    "retrieval/turn_query_reasoning",
    "retrieval/turn_docs",
    "retrieval/current_query",
    "rerank/oracle_system",
    "rerank/oracle_user",
    "rerank/listwise_system",
    "rerank/listwise_user",
    "rerank/passage",
    "analysis/clues_decompose",
    "analysis/clues_assign",
    "analysis/hops_system",
    "analysis/hops_user",
    "analysis/claims_system",
    "analysis/claims_user",
    "analysis/judge",
    "agent/system",
);

fn strip_one_newline(s: &str) -> &str {
    s.strip_suffix('\n')
        .map(|s| s.strip_suffix('\r').unwrap_or(s))
        .unwrap_or(s)
}

/// Substitutes `{name}` placeholders in a single left-to-right pass, so
/// braces inside substituted values are never re-expanded.
pub fn render(name: &str, template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let bytes = template.as_bytes();
    let mut i = 0;
    let mut plain_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push_str(&template[plain_start..i]);
                out.push('{');
                i += 2;
                plain_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push_str(&template[plain_start..i]);
                out.push('}');
                i += 2;
                plain_start = i;
            }
            b'{' => {
                let close = template[i + 1..].find('}').ok_or(TemplateError::Syntax {
                    template: name.into(),
                    at: i,
                })?;
                let key = &template[i + 1..i + 1 + close];
                let value = values.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).ok_or_else(|| {
                    TemplateError::MissingValue {
                        template: name.into(),
                        name: key.into(),
                    }
                })?;
                out.push_str(&template[plain_start..i]);
                out.push_str(value);
                i += close + 2;
                plain_start = i;
            }
            b'}' => {
                return Err(TemplateError::Syntax {
                    template: name.into(),
                    at: i,
                })
            }
            _ => i += 1,
        }
    }
    out.push_str(&template[plain_start..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    entries: BTreeMap<String, String>,
}

impl Templates {
    /// The compiled-in set, shared.
    pub fn builtin() -> Arc<Templates> {
        static BUILT: OnceLock<Arc<Templates>> = OnceLock::new();
        BUILT
            .get_or_init(|| {
                Arc::new(Templates {
                    entries: BUILTIN
                        .iter()
                        .map(|(k, v)| (k.to_string(), strip_one_newline(v).to_string()))
                        .collect(),
                })
            })
            .clone()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Built-ins overridden by any `<name>.txt` found under `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = (*Self::builtin()).clone();
        for (name, _) in BUILTIN {
            let p = dir.join(format!("{name}.txt"));
            if p.is_file() {
                let text = std::fs::read_to_string(&p)?;
                t.entries.insert(name.to_string(), strip_one_newline(&text).to_string());
            }
        }
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Result<&str, TemplateError> {
        self.entries
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| TemplateError::Unknown(name.into()))
    }

    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        render(name, self.get(name)?, values)
    }
}
