//! Builds retrieval inputs from a trajectory prefix.
//!
//! Each [`Transformation`] selects which history elements reach the
//! retriever. History-bearing variants count search turns only; a history
//! line is numbered by its position in the rendered window, starting at 1.
//! When a reasoning-bearing history window holds nothing but the current
//! turn, the input is the current reasoning and query.

use std::sync::Arc;

use crate::model::{Action, ComposedQuery, Observation, Transformation, Turn, Window};
use crate::templates::{TemplateError, Templates};
use crate::tokenize::Tokenizer;

/// Default token budget for the document-bearing history variant.
pub const DEFAULT_HISTORY_TOKEN_BUDGET: usize = 8192;

#[derive(Debug, Clone)]
pub struct CompositionConfig {
    pub transformation: Transformation,
    pub window_k: Option<Window>,
    pub history_token_budget: usize,
    pub global_question: Option<String>,
    pub tokenizer: Tokenizer,
    pub templates: Arc<Templates>,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self::new(Transformation::CurrentReasoning)
    }
}

impl CompositionConfig {
    pub fn new(transformation: Transformation) -> Self {
        Self {
            transformation,
            window_k: None,
            history_token_budget: DEFAULT_HISTORY_TOKEN_BUDGET,
            global_question: None,
            tokenizer: Tokenizer::Whitespace,
            templates: Templates::builtin(),
        }
    }

    pub fn window(k: Window) -> Self {
        Self {
            window_k: Some(k),
            ..Self::new(Transformation::WindowK)
        }
    }

    pub fn with_question(mut self, question: impl Into<String>) -> Self {
        self.global_question = Some(question.into());
        self
    }

    pub fn with_budget(mut self, tokens: usize) -> Self {
        self.history_token_budget = tokens;
        self
    }

    /// Short tag naming this configuration in trajectories and reports.
    pub fn tag(&self) -> String {
        match (self.transformation, self.window_k) {
            (Transformation::WindowK, Some(k)) => format!("window_{k}"),
            (t, _) => t.as_str().to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("turn {0} is not a search turn")]
    NotASearchTurn(usize),
    #[error("turn {0} has no reasoning")]
    MissingReasoning(usize),
    #[error("the global question is required for this transformation")]
    MissingGlobalQuestion,
    #[error("window transformation requires window_k")]
    MissingWindow,
    #[error("turn {0} has no search results to include")]
    MissingObservation(usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

struct SearchTurn<'a> {
    index: usize,
    reasoning: &'a str,
    query: &'a str,
    observation: Option<&'a Observation>,
}

fn search_turns(history: &[Turn]) -> Vec<SearchTurn<'_>> {
    history
        .iter()
        .filter_map(|t| match &t.action {
            Action::Search { query } => Some(SearchTurn {
                index: t.index,
                reasoning: &t.reasoning,
                query,
                observation: t.observation.as_ref(),
            }),
            _ => None,
        })
        .collect()
}

fn need_reasoning(t: &SearchTurn<'_>) -> Result<(), ComposeError> {
    if t.reasoning.trim().is_empty() {
        Err(ComposeError::MissingReasoning(t.index))
    } else {
        Ok(())
    }
}

/// Composes the retrieval input for the last turn of `history`, which must
/// be a search turn. Pure: the history is never modified.
pub fn compose(history: &[Turn], config: &CompositionConfig) -> Result<ComposedQuery, ComposeError> {
    let last = history.last().ok_or(ComposeError::EmptyHistory)?;
    if !last.action.is_search() {
        return Err(ComposeError::NotASearchTurn(last.index));
    }
    let turns = search_turns(history);
    let current = turns.last().expect("last turn is a search turn");
    let tpl = &config.templates;
    let t = config.transformation;

    let reasoning_only = |cur: &SearchTurn<'_>| -> Result<(String, String), ComposeError> {
        need_reasoning(cur)?;
        Ok((
            tpl.get("retrieval/instruction_reasoning")?.to_string(),
            tpl.render(
                "retrieval/body_reasoning",
                &[("reasoning", cur.reasoning.trim()), ("query", cur.query)],
            )?,
        ))
    };

    let (instruction, body) = match t {
        Transformation::None => (
            tpl.get("retrieval/instruction_query")?.to_string(),
            current.query.to_string(),
        ),
        Transformation::CurrentReasoning => reasoning_only(current)?,
        Transformation::GlobalQuestion => {
            let q = config
                .global_question
                .as_deref()
                .ok_or(ComposeError::MissingGlobalQuestion)?;
            (
                tpl.get("retrieval/instruction_question")?.to_string(),
                tpl.render("retrieval/body_question", &[("question", q), ("query", current.query)])?,
            )
        }
        Transformation::PriorQueries => {
            let lines = turns[..turns.len() - 1]
                .iter()
                .enumerate()
                .map(|(i, st)| {
                    tpl.render(
                        "retrieval/turn_query",
                        &[("n", &(i + 1).to_string()), ("query", st.query)],
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            history_body(tpl, &lines, current.query)?
        }
        Transformation::PriorQueriesReasonings | Transformation::WindowK => {
            let window = if t == Transformation::WindowK {
                config.window_k.ok_or(ComposeError::MissingWindow)?
            } else {
                Window::All
            };
            let start = window.start(turns.len()) - 1;
            let included = &turns[start..];
            if included.len() == 1 {
                reasoning_only(current)?
            } else {
                let mut lines = Vec::with_capacity(included.len() - 1);
                for (i, st) in included[..included.len() - 1].iter().enumerate() {
                    need_reasoning(st)?;
                    lines.push(tpl.render(
                        "retrieval/turn_query_reasoning",
                        &[
                            ("n", &(i + 1).to_string()),
                            ("reasoning", st.reasoning.trim()),
                            ("query", st.query),
                        ],
                    )?);
                }
                history_body(tpl, &lines, current.query)?
            }
        }
        Transformation::PriorQueriesReasoningsDocs => {
            let prior = &turns[..turns.len() - 1];
            let mut blocks = Vec::with_capacity(prior.len());
            for st in prior {
                need_reasoning(st)?;
                let results = match st.observation {
                    Some(Observation::Results(r)) => r,
                    _ => return Err(ComposeError::MissingObservation(st.index)),
                };
                let joined = results
                    .iter()
                    .map(|r| r.snippet.as_str())
                    .collect::<Vec<_>>()
                    .join("\n\n");
                blocks.push((st.reasoning.trim(), st.query, results.len(), joined));
            }
            // drop whole oldest turns until the body fits the budget
            let mut skip = 0;
            loop {
                let lines = blocks[skip..]
                    .iter()
                    .enumerate()
                    .map(|(i, (r, q, n, joined))| {
                        tpl.render(
                            "retrieval/turn_docs",
                            &[
                                ("n", &(i + 1).to_string()),
                                ("reasoning", r),
                                ("query", q),
                                ("count", &n.to_string()),
                                ("results", joined),
                            ],
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let (instr, body) = history_body(tpl, &lines, current.query)?;
                if skip == blocks.len() || config.tokenizer.count(&body) <= config.history_token_budget {
                    break (instr, body);
                }
                skip += 1;
            }
        }
    };

    Ok(ComposedQuery {
        instruction,
        body,
        transformation: t,
        window_k: if t == Transformation::WindowK {
            config.window_k
        } else {
            None
        },
    })
}

fn history_body(tpl: &Templates, lines: &[String], current_query: &str) -> Result<(String, String), ComposeError> {
    let mut parts = Vec::with_capacity(lines.len() + 2);
    parts.push(tpl.get("retrieval/history_header")?.to_string());
    parts.extend(lines.iter().cloned());
    parts.push(tpl.render("retrieval/current_query", &[("query", current_query)])?);
    Ok((
        tpl.get("retrieval/instruction_history")?.to_string(),
        parts.join("\n\n"),
    ))
}

/// The full retriever input: instruction header followed by the composed body.
pub fn render_retrieval_prompt(composed: &ComposedQuery) -> String {
    render_with(&Templates::builtin(), composed)
}

pub fn render_with(templates: &Templates, composed: &ComposedQuery) -> String {
    templates
        .render(
            "retrieval/wrapper",
            &[("instruction", &composed.instruction), ("body", &composed.body)],
        )
        .unwrap_or_else(|_| format!("Instruction: {}\nQuery: {}", composed.instruction, composed.body))
}
