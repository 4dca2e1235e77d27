//! Deterministic offline backends.
//!
//! Every stub here is a pure function of its request, so episodes stay
//! reproducible under concurrency.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{AssistantMessage, BackendError, ChatBackend, ChatRequest, Embedder, EmbeddingVector, Role, ToolCall};

/// Hash-seeded pseudo-random unit vector. Equal arguments give bitwise-equal
/// vectors.
pub fn stub_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 2, "stub embeddings need dim >= 2");
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((dim as u64).to_le_bytes());
    h.update(text.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    loop {
        let values: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Ok(v) = EmbeddingVector::new(values).normalized() {
            return v;
        }
    }
}

/// Embeds each whole text with [`stub_embed`]; similar texts are unrelated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl Embedder for StubEmbedder {
    fn embed(&self, texts: &[String], instruction: Option<&str>) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("no texts to embed".into()));
        }
        Ok(texts
            .iter()
            .map(|t| stub_embed(&super::instructed(t, instruction), self.dim, self.seed))
            .collect())
    }

    fn name(&self) -> String {
        format!("stub-{}-{}", self.dim, self.seed)
    }
}

/// Bag-of-words embedder: the normalized sum of per-token stub vectors.
/// Texts sharing vocabulary land close together, which makes offline dense
/// retrieval behave plausibly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn one(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0.0; self.dim];
        let mut any = false;
        for tok in crate::index::bm25::tokenize(text) {
            any = true;
            let v = stub_embed(&tok, self.dim, self.seed);
            for (a, x) in acc.iter_mut().zip(&v.values) {
                *a += x;
            }
        }
        if !any {
            return stub_embed(text, self.dim, self.seed);
        }
        EmbeddingVector::new(acc)
            .normalized()
            .unwrap_or_else(|_| stub_embed(text, self.dim, self.seed))
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String], _instruction: Option<&str>) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("no texts to embed".into()));
        }
        Ok(texts.iter().map(|t| self.one(t)).collect())
    }

    fn name(&self) -> String {
        format!("hashing-{}-{}", self.dim, self.seed)
    }
}

/// First user message of a request: the question for agent conversations.
pub fn first_user_content(request: &ChatRequest) -> &str {
    request
        .messages
        .iter()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
        .unwrap_or_default()
}

fn assistant_turns(request: &ChatRequest) -> usize {
    request.messages.iter().filter(|m| m.role == Role::Assistant).count()
}

/// Replays fixed replies. The reply is chosen by the conversation key (the
/// first user message) and the number of assistant messages already in the
/// request, so the backend is stateless and safe to share.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChat {
    scripts: HashMap<String, Vec<AssistantMessage>>,
    fallback: Vec<AssistantMessage>,
    cycle: bool,
}

impl ScriptedChat {
    /// One script used for every conversation.
    pub fn new(script: Vec<AssistantMessage>) -> Self {
        Self {
            fallback: script,
            ..Default::default()
        }
    }

    /// Adds a script for conversations whose first user message contains `key`.
    pub fn with_script(mut self, key: impl Into<String>, script: Vec<AssistantMessage>) -> Self {
        self.scripts.insert(key.into(), script);
        self
    }

    /// Restart the script from the top once it runs out (otherwise the last
    /// reply repeats).
    pub fn cycling(mut self) -> Self {
        self.cycle = true;
        self
    }

    fn script_for(&self, request: &ChatRequest) -> &[AssistantMessage] {
        let user = first_user_content(request);
        if let Some(s) = self.scripts.get(user) {
            return s;
        }
        // longest matching key wins so that overlapping keys stay unambiguous
        self.scripts
            .iter()
            .filter(|(k, _)| user.contains(k.as_str()))
            .max_by_key(|(k, _)| k.len())
            .map(|(_, s)| s.as_slice())
            .unwrap_or(&self.fallback)
    }
}

impl ChatBackend for ScriptedChat {
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError> {
        let script = self.script_for(request);
        if script.is_empty() {
            return Err(BackendError::Stub("no script for this conversation".into()));
        }
        let n = assistant_turns(request);
        let i = if self.cycle {
            n % script.len()
        } else {
            n.min(script.len() - 1)
        };
        Ok(script[i].clone())
    }
}

pub fn tool_call(name: &str, arg: &str, value: &str) -> ToolCall {
    ToolCall {
        id: String::new(),
        name: name.into(),
        arguments: serde_json::json!({ arg: value }),
    }
}

/// Convenience constructors for scripted agent replies.
pub fn search_reply(reasoning: &str, query: &str) -> AssistantMessage {
    AssistantMessage {
        content: reasoning.into(),
        tool_calls: vec![tool_call("search", "query", query)],
        reasoning: None,
    }
}

pub fn answer_reply(reasoning: &str, answer: &str) -> AssistantMessage {
    AssistantMessage {
        content: reasoning.into(),
        tool_calls: vec![tool_call("answer", "text", answer)],
        reasoning: None,
    }
}

/// A rule-following offline agent. It searches for the question, then
/// follows the top result's opening sentence for `searches - 1` more hops,
/// and finally answers with the first `Answer: X` marker found in any
/// observation (or "unknown").
#[derive(Debug, Clone, Copy)]
pub struct HeuristicAgent {
    pub searches: usize,
}

impl HeuristicAgent {
    fn observations(request: &ChatRequest) -> Vec<&str> {
        request
            .messages
            .iter()
            .skip_while(|m| m.role != Role::Assistant)
            .filter(|m| m.role != Role::Assistant)
            .map(|m| m.content.as_str())
            .collect()
    }
}

fn first_sentence(text: &str) -> &str {
    let t = text.trim();
    match t.find(['.', '\n']) {
        Some(i) => t[..i].trim(),
        None => t,
    }
}

impl ChatBackend for HeuristicAgent {
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError> {
        let question = first_user_content(request).trim().to_string();
        let step = assistant_turns(request);
        let observations = Self::observations(request);
        if step < self.searches.max(1) {
            let query = if step == 0 {
                question.clone()
            } else {
                // observation lines look like "[1] doc-id: snippet"
                let last = observations.last().copied().unwrap_or_default();
                let top = last
                    .lines()
                    .filter(|l| l.starts_with('['))
                    .find_map(|l| l.split_once(": ").map(|(_, rest)| rest))
                    .unwrap_or(&question);
                first_sentence(top).to_string()
            };
            let query = if query.is_empty() { question.clone() } else { query };
            let reasoning = format!(
                "Step {}: I need more evidence to answer \"{question}\". Searching for: {query}.",
                step + 1
            );
            return Ok(search_reply(&reasoning, &query));
        }
        let marker = Regex::new(r"(?i)answer:\s*([^.\n]+)").expect("static regex");
        let answer = observations
            .iter()
            .rev()
            .find_map(|o| marker.captures(o).map(|c| c[1].trim().to_string()))
            .unwrap_or_else(|| "unknown".into());
        Ok(answer_reply(&format!("The evidence points to {answer}."), &answer))
    }
}

/// Order a listwise-rerank stub emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankOrder {
    Identity,
    Reverse,
}

/// Listwise reranker stub: counts the `[i]: ` passage lines in the prompt and
/// emits them in a fixed order.
#[derive(Debug, Clone, Copy)]
pub struct RankingStub {
    pub order: RankOrder,
}

impl RankingStub {
    pub fn identity() -> Self {
        Self {
            order: RankOrder::Identity,
        }
    }

    pub fn reverse() -> Self {
        Self {
            order: RankOrder::Reverse,
        }
    }
}

pub fn count_passages(prompt: &str) -> usize {
    let re = Regex::new(r"(?m)^\[(\d+)\]: ").expect("static regex");
    re.captures_iter(prompt)
        .filter_map(|c| c[1].parse::<usize>().ok())
        .max()
        .unwrap_or(0)
}

impl ChatBackend for RankingStub {
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError> {
        let prompt: String = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let n = count_passages(&prompt);
        let mut ids: Vec<usize> = (1..=n).collect();
        if self.order == RankOrder::Reverse {
            ids.reverse();
        }
        let text = ids.iter().map(|i| format!("[{i}]")).collect::<Vec<_>>().join(" > ");
        Ok(AssistantMessage::text(text))
    }
}

/// Offline annotator for the clue and claim prompts. It recognises each
/// prompt by its fixed wording and answers with simple lexical rules:
/// clues are the opening sentences of the reasonings, a clue is assigned to
/// a text when most of its words occur there, hop answers are the final
/// answer, and a claim is correct when it mentions any hop answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicAnnotator;

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let e = text[s..].find(end).map(|e| s + e).unwrap_or(text.len());
    Some(&text[s..e])
}

fn py_list(items: &[String]) -> String {
    let quoted: Vec<String> = items
        .iter()
        .map(|s| format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'")))
        .collect();
    format!("[{}]", quoted.join(", "))
}

fn words(text: &str) -> BTreeSet<String> {
    crate::index::bm25::tokenize(text).into_iter().collect()
}

fn sentences(text: &str) -> Vec<String> {
    text.split(['.', '\n', '!', '?'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

impl ChatBackend for HeuristicAnnotator {
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError> {
        let all: String = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        if all.starts_with("You are an expert text decomposer") {
            let trace = between(&all, "Reasoning Trace:\n\n", "\n\nOutput format:").unwrap_or_default();
            let mut clues: Vec<String> = Vec::new();
            for r in trace.split("\n---\n") {
                let c = first_sentence(r).to_string();
                if !c.is_empty() && !clues.contains(&c) {
                    clues.push(c);
                }
            }
            return Ok(AssistantMessage::text(py_list(&clues)));
        }
        if all.starts_with("I will give you a text paragraph") {
            let text = words(between(&all, "Text:\n", "\n\nClues List:").unwrap_or_default());
            let list = between(&all, "Clues List:\n", "\n\nOutput format:").unwrap_or_default();
            let mut hits = Vec::new();
            for line in list.lines() {
                let Some((num, clue)) = line.split_once(". ") else {
                    continue;
                };
                let Ok(num) = num.trim().parse::<usize>() else { continue };
                let cw = words(clue);
                if cw.is_empty() {
                    continue;
                }
                let shared = cw.iter().filter(|w| text.contains(*w)).count();
                if shared * 10 >= cw.len() * 6 {
                    hits.push(num.to_string());
                }
            }
            return Ok(AssistantMessage::text(format!("[{}]", hits.join(", "))));
        }
        if all.starts_with("You are an expert at decomposing complex multi-hop queries") {
            let answer = between(&all, "Final Ground Truth Answer: ", "\n")
                .unwrap_or_default()
                .trim();
            let v = serde_json::json!({ "multi_hop_answers": [answer] });
            return Ok(AssistantMessage::text(v.to_string()));
        }
        if all.starts_with("You are an expert evaluator") {
            let hops: Vec<String> = between(&all, "Ground Truth Answer List: ", "\n")
                .and_then(|s| serde_json::from_str(s).ok())
                .unwrap_or_default();
            let reasoning = between(&all, "Reasoning Step:\n", "\n\nOutput strictly").unwrap_or_default();
            let (mut correct, mut incorrect) = (Vec::new(), Vec::new());
            for s in sentences(reasoning) {
                let lower = s.to_lowercase();
                if hops.iter().any(|h| !h.is_empty() && lower.contains(&h.to_lowercase())) {
                    correct.push(s);
                } else {
                    incorrect.push(s);
                }
            }
            let v = serde_json::json!({ "correct_claims": correct, "incorrect_claims": incorrect });
            return Ok(AssistantMessage::text(v.to_string()));
        }
        Err(BackendError::Stub("annotator does not recognise this prompt".into()))
    }
}
