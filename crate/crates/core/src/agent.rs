//! The ReAct episode loop: ask the agent for an action, execute it against
//! the local corpus, feed the observation back, repeat until an answer or
//! the turn cap.

use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{AssistantMessage, ChatBackend, ChatRequest, Decoding, Message, ToolCall, ToolSchema};
use crate::composer::{compose, ComposeError, CompositionConfig};
use crate::index::{RetrievalError, Retriever};
use crate::model::{Action, Corpus, Observation, QaExample, RetrievalResult, Trajectory, Transformation, Turn};
use crate::templates::Templates;

/// Results shown to the agent per search call.
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_MAX_TURNS: usize = 60;
/// Visit observations are cut to this many characters.
pub const DEFAULT_VISIT_CHAR_CAP: usize = 40_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tools {
    pub search: bool,
    pub visit: bool,
}

impl Default for Tools {
    fn default() -> Self {
        Self {
            search: true,
            visit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_turns: usize,
    pub tools: Tools,
    pub visit_char_cap: usize,
    /// Take τ from a dedicated reasoning channel when the backend sends one.
    pub prefer_reasoning_channel: bool,
    pub decoding: Decoding,
    pub agent_tag: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            tools: Tools::default(),
            visit_char_cap: DEFAULT_VISIT_CHAR_CAP,
            prefer_reasoning_channel: false,
            decoding: Decoding::agent(),
            agent_tag: "agent".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionParseError {
    #[error("reply carries no tool call and no action tag")]
    UnparseableAction,
    #[error("tool call {name:?} is malformed: {reason}")]
    BadToolCall { name: String, reason: String },
}

fn tool_arg(call: &ToolCall, key: &str) -> Option<String> {
    match &call.arguments {
        serde_json::Value::Object(m) => m
            .get(key)
            .or_else(|| if m.len() == 1 { m.values().next() } else { None })
            .and_then(|v| v.as_str())
            .map(str::to_string),
        serde_json::Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn action_from(name: &str, arg: Option<String>) -> Result<Action, ActionParseError> {
    let bad = |reason: &str| ActionParseError::BadToolCall {
        name: name.to_string(),
        reason: reason.to_string(),
    };
    let arg = arg
        .map(|a| a.trim().to_string())
        .ok_or_else(|| bad("missing argument"))?;
    match name {
        "search" if arg.is_empty() => Err(bad("empty query")),
        "search" => Ok(Action::Search { query: arg }),
        "visit" if arg.is_empty() => Err(bad("empty doc_id")),
        "visit" => Ok(Action::Visit { doc_id: arg }),
        "answer" => Ok(Action::Answer { text: arg }),
        _ => Err(bad("unknown tool")),
    }
}

/// Splits an assistant reply into its reasoning trace and action.
///
/// Structured tool calls win; the reasoning is the message content. Without
/// tool calls, the first `<search>`, `<visit>` or `<answer>` block is the
/// action and the text before it is the reasoning.
pub fn parse_action(
    message: &AssistantMessage,
    prefer_reasoning_channel: bool,
) -> Result<(String, Action), ActionParseError> {
    let channel = message
        .reasoning
        .as_deref()
        .filter(|r| prefer_reasoning_channel && !r.trim().is_empty())
        .map(|r| r.trim().to_string());

    if let Some(call) = message.tool_calls.first() {
        let key = match call.name.as_str() {
            "search" => "query",
            "visit" => "doc_id",
            _ => "text",
        };
        let action = action_from(&call.name, tool_arg(call, key))?;
        return Ok((channel.unwrap_or_else(|| message.content.trim().to_string()), action));
    }

    let re = Regex::new(r"(?s)<(search|visit|answer)>(.*?)</(search|visit|answer)>").expect("static regex");
    let m = re
        .captures_iter(&message.content)
        .find(|c| c[1] == c[3])
        .ok_or(ActionParseError::UnparseableAction)?;
    let whole = m.get(0).expect("group 0");
    let action = action_from(&m[1], Some(m[2].to_string()))?;
    let before = message.content[..whole.start()].trim().to_string();
    Ok((channel.unwrap_or(before), action))
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{0}")]
    Other(String),
}

/// What executes the agent's search calls.
pub trait SearchTool: Send + Sync {
    /// Results for the last turn of `history`, which is a search turn.
    fn search(&self, qa: &QaExample, history: &[Turn]) -> Result<Vec<RetrievalResult>, ToolError>;
    fn corpus(&self) -> &Corpus;
    fn tag(&self) -> String;
}

/// A retriever bound to a composition rule.
pub struct RetrieverBinding {
    pub retriever: Arc<dyn Retriever>,
    pub composition: CompositionConfig,
    pub top_k: usize,
}

impl RetrieverBinding {
    pub fn new(retriever: Arc<dyn Retriever>, composition: CompositionConfig) -> Self {
        Self {
            retriever,
            composition,
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl SearchTool for RetrieverBinding {
    fn search(&self, qa: &QaExample, history: &[Turn]) -> Result<Vec<RetrievalResult>, ToolError> {
        let composed = if self.composition.transformation == Transformation::GlobalQuestion
            && self.composition.global_question.is_none()
        {
            compose(history, &self.composition.clone().with_question(qa.question.clone()))?
        } else {
            compose(history, &self.composition)?
        };
        Ok(self.retriever.search(&composed, self.top_k)?)
    }

    fn corpus(&self) -> &Corpus {
        self.retriever.corpus()
    }

    fn tag(&self) -> String {
        format!("{}+{}", self.retriever.tag(), self.composition.tag())
    }
}

/// How search results are shown to the agent.
pub fn render_results(results: &[RetrievalResult]) -> String {
    if results.is_empty() {
        return "No results found.".into();
    }
    results
        .iter()
        .enumerate()
        .map(|(i, r)| format!("[{}] {}: {}", i + 1, r.doc_id, r.snippet))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn system_prompt(templates: &Templates, tools: Tools) -> String {
    let mut lines = Vec::new();
    if tools.search {
        lines.push("- search(query): search the document collection; returns the top results with snippets.");
    }
    if tools.visit {
        lines.push("- visit(doc_id): open a document and read its full text.");
    }
    lines.push("- answer(text): submit the final answer.");
    templates
        .render("agent/system", &[("tools", &lines.join("\n"))])
        .unwrap_or_else(|_| lines.join("\n"))
}

const REPROMPT: &str = "Your reply did not contain an action. Call one of the tools, or end your reply with a <search>, <visit> or <answer> tag.";

fn truncate_chars(s: &str, cap: usize) -> &str {
    match s.char_indices().nth(cap) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Runs one episode. Never panics on backend trouble: failures end the
/// episode early with [`Trajectory::failure`] set.
pub fn run_episode(qa: &QaExample, agent: &dyn ChatBackend, tool: &dyn SearchTool, cfg: &AgentConfig) -> Trajectory {
    let mut traj = Trajectory::new(qa.id.clone(), cfg.agent_tag.clone(), tool.tag());
    let schema = ToolSchema {
        search: cfg.tools.search,
        visit: cfg.tools.visit,
        answer: true,
    };
    let mut messages = vec![
        Message::system(system_prompt(&Templates::builtin(), cfg.tools)),
        Message::user(qa.question.clone()),
    ];
    let mut reprompted = false;

    for _ in 0..cfg.max_turns.max(1) {
        let request = ChatRequest {
            messages: messages.clone(),
            decoding: cfg.decoding,
            tool_schema: Some(schema),
        };
        let reply = match agent.chat(&request) {
            Ok(r) => r,
            Err(e) => {
                traj.failure = Some(format!("backend failure: {e}"));
                break;
            }
        };
        let (reasoning, action) = match parse_action(&reply, cfg.prefer_reasoning_channel) {
            Ok(p) => {
                reprompted = false;
                p
            }
            Err(e) => {
                traj.unparseable_outputs += 1;
                if reprompted {
                    traj.failure = Some(format!("aborted: {e}"));
                    break;
                }
                reprompted = true;
                messages.push(Message::assistant(reply.content.clone()));
                messages.push(Message::user(REPROMPT));
                continue;
            }
        };

        let observation = match &action {
            Action::Answer { .. } => None,
            Action::Search { .. } if !cfg.tools.search => Some(Observation::Results(Vec::new())),
            Action::Search { .. } => {
                let mut pending = traj.turns.clone();
                pending.push(Turn {
                    index: traj.turns.len() + 1,
                    reasoning: reasoning.clone(),
                    action: action.clone(),
                    observation: None,
                });
                match tool.search(qa, &pending) {
                    Ok(results) => Some(Observation::Results(results)),
                    Err(e) => {
                        traj.push(reasoning, action, Some(Observation::Results(Vec::new())));
                        traj.failure = Some(format!("search failure: {e}"));
                        break;
                    }
                }
            }
            Action::Visit { doc_id } => {
                let text = if !cfg.tools.visit {
                    "Error: the visit tool is not available.".to_string()
                } else {
                    match tool.corpus().get(doc_id) {
                        Some(d) => truncate_chars(&d.text, cfg.visit_char_cap).to_string(),
                        None => format!("Error: no document with id {doc_id}."),
                    }
                };
                Some(Observation::Document(text))
            }
        };

        let turn = traj.push(reasoning, action, observation).clone();
        let Some(obs) = &turn.observation else { break };
        let obs_text = match obs {
            Observation::Results(r) => render_results(r),
            Observation::Document(d) => d.clone(),
        };
        if reply.tool_calls.is_empty() {
            messages.push(Message::assistant(reply.content.clone()));
            messages.push(Message::user(format!("<observation>\n{obs_text}\n</observation>")));
        } else {
            let call_id = format!("call_{}", turn.index);
            let mut call = reply.tool_calls[0].clone();
            call.id = call_id.clone();
            messages.push(Message {
                tool_calls: vec![call],
                ..Message::assistant(reply.content.clone())
            });
            messages.push(Message::tool(call_id, obs_text));
        }
    }
    traj
}

/// Runs episodes over `qas` on up to `workers` threads; output order follows input order.
pub fn run_all(
    qas: &[QaExample],
    agent: &dyn ChatBackend,
    tool: &dyn SearchTool,
    cfg: &AgentConfig,
    workers: usize,
) -> Vec<Trajectory> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| qas.par_iter().map(|qa| run_episode(qa, agent, tool, cfg)).collect())
}
