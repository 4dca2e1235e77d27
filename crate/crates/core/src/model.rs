//! Shared domain types: documents, QA examples, trajectories, composed
//! queries, training instances and evaluation reports.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// A retrievable unit of text. Identifiers are opaque strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: None,
            url: None,
            text: text.into(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    /// Title and body joined the way documents are embedded.
    pub fn indexable_text(&self) -> String {
        match self.title.as_deref() {
            Some(t) if !t.is_empty() => format!("{t}\n{}", self.text),
            _ => self.text.clone(),
        }
    }
}

/// An ordered document collection with id lookup.
///
/// Construction through [`Corpus::new`] accepts any input so that
/// [`validate_corpus`] can report every problem at once; lookups on a corpus
/// with duplicate ids resolve to the first occurrence.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        let mut by_id = HashMap::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            by_id.entry(d.id.clone()).or_insert(i);
        }
        Self { documents, by_id }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Hex SHA-256 over the canonical JSON-lines encoding of the corpus.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for d in &self.documents {
            // serialization of these plain structs cannot fail
            h.update(serde_json::to_vec(d).expect("document serializes"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId { position: usize },
    DuplicateId { id: String, positions: Vec<usize> },
    EmptyText { id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { position } => write!(f, "document at line {} has an empty id", position + 1),
            Violation::DuplicateId { id, positions } => {
                let lines: Vec<String> = positions.iter().map(|p| (p + 1).to_string()).collect();
                write!(f, "duplicate id {id:?} at lines {}", lines.join(", "))
            }
            Violation::EmptyText { id } => write!(f, "document {id:?} has empty text"),
        }
    }
}

/// Checks every corpus and document invariant. An empty list means the corpus is well formed.
pub fn validate_corpus(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, d) in corpus.documents.iter().enumerate() {
        if d.id.is_empty() {
            out.push(Violation::EmptyId { position: i });
        } else {
            seen.entry(d.id.as_str()).or_default().push(i);
        }
        if d.text.trim().is_empty() {
            out.push(Violation::EmptyText { id: d.id.clone() });
        }
    }
    let mut dups: Vec<_> = seen
        .into_iter()
        .filter(|(_, p)| p.len() > 1)
        .map(|(id, positions)| Violation::DuplicateId {
            id: id.to_string(),
            positions,
        })
        .collect();
    dups.sort_by_key(|v| match v {
        Violation::DuplicateId { positions, .. } => positions[0],
        _ => 0,
    });
    out.extend(dups);
    out
}

/// A (question, answer, evidence) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QaViolation {
    EmptyAnswer { qa_id: String },
    UnresolvedEvidence { qa_id: String, doc_id: String },
    DuplicateQaId { qa_id: String },
}

impl fmt::Display for QaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QaViolation::EmptyAnswer { qa_id } => write!(f, "qa {qa_id:?} has an empty answer"),
            QaViolation::UnresolvedEvidence { qa_id, doc_id } => {
                write!(f, "qa {qa_id:?} cites evidence {doc_id:?} missing from the corpus")
            }
            QaViolation::DuplicateQaId { qa_id } => write!(f, "duplicate qa id {qa_id:?}"),
        }
    }
}

pub fn validate_qa(examples: &[QaExample], corpus: &Corpus) -> Vec<QaViolation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for qa in examples {
        if !ids.insert(qa.id.as_str()) {
            out.push(QaViolation::DuplicateQaId { qa_id: qa.id.clone() });
        }
        if qa.answer.trim().is_empty() {
            out.push(QaViolation::EmptyAnswer { qa_id: qa.id.clone() });
        }
        for e in &qa.evidence {
            if !corpus.contains(e) {
                out.push(QaViolation::UnresolvedEvidence {
                    qa_id: qa.id.clone(),
                    doc_id: e.clone(),
                });
            }
        }
    }
    out
}

/// One agent action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Search { query: String },
    Visit { doc_id: String },
    Answer { text: String },
}

impl Action {
    pub fn is_search(&self) -> bool {
        matches!(self, Action::Search { .. })
    }

    pub fn query(&self) -> Option<&str> {
        match self {
            Action::Search { query } => Some(query),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub doc_id: String,
    pub score: f64,
    pub snippet: String,
}

/// What the environment returned for a tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Observation {
    Results(Vec<RetrievalResult>),
    Document(String),
}

impl Observation {
    pub fn results(&self) -> &[RetrievalResult] {
        match self {
            Observation::Results(r) => r,
            Observation::Document(_) => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based position within the trajectory.
    pub index: usize,
    pub reasoning: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub qa_id: String,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub final_answer: Option<String>,
    /// Unknown until a judge has looked at the final answer.
    #[serde(default)]
    pub success: Option<bool>,
    pub agent_tag: String,
    pub retriever_tag: String,
    /// Set when the episode ended early because of a backend or parse failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Agent outputs that carried no parseable action.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub unparseable_outputs: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl Trajectory {
    pub fn new(qa_id: impl Into<String>, agent_tag: impl Into<String>, retriever_tag: impl Into<String>) -> Self {
        Self {
            qa_id: qa_id.into(),
            turns: Vec::new(),
            final_answer: None,
            success: None,
            agent_tag: agent_tag.into(),
            retriever_tag: retriever_tag.into(),
            failure: None,
            unparseable_outputs: 0,
        }
    }

    pub fn search_calls(&self) -> usize {
        self.turns.iter().filter(|t| t.action.is_search()).count()
    }

    pub fn visit_calls(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| matches!(t.action, Action::Visit { .. }))
            .count()
    }

    /// Appends a turn with the next consecutive index.
    pub fn push(&mut self, reasoning: String, action: Action, observation: Option<Observation>) -> &Turn {
        let index = self.turns.len() + 1;
        if let Action::Answer { text } = &action {
            self.final_answer = Some(text.clone());
        }
        self.turns.push(Turn {
            index,
            reasoning,
            action,
            observation,
        });
        self.turns.last().expect("just pushed")
    }

    /// The prefix of this trajectory through turn `t` (1-based, inclusive).
    pub fn prefix(&self, t: usize) -> &[Turn] {
        &self.turns[..t.min(self.turns.len())]
    }

    /// Reports every structural invariant the trajectory breaks.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index != i + 1 {
                problems.push(format!("turn at position {} has index {}", i + 1, turn.index));
            }
            let needs_obs = !matches!(turn.action, Action::Answer { .. });
            if needs_obs != turn.observation.is_some() {
                problems.push(format!(
                    "turn {} observation presence does not match its action",
                    turn.index
                ));
            }
            if let Action::Search { query } = &turn.action {
                if query.trim().is_empty() {
                    problems.push(format!("turn {} has an empty search query", turn.index));
                }
            }
            if matches!(turn.action, Action::Answer { .. }) && i + 1 != self.turns.len() {
                problems.push(format!("answer at turn {} is not the last turn", turn.index));
            }
        }
        problems
    }
}

/// Which slice of the trajectory history forms the retrieval input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transformation {
    None,
    CurrentReasoning,
    GlobalQuestion,
    PriorQueries,
    PriorQueriesReasonings,
    PriorQueriesReasoningsDocs,
    WindowK,
}

impl Transformation {
    pub const ALL: [Transformation; 7] = [
        Transformation::None,
        Transformation::CurrentReasoning,
        Transformation::GlobalQuestion,
        Transformation::PriorQueries,
        Transformation::PriorQueriesReasonings,
        Transformation::PriorQueriesReasoningsDocs,
        Transformation::WindowK,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Transformation::None => "none",
            Transformation::CurrentReasoning => "current_reasoning",
            Transformation::GlobalQuestion => "global_question",
            Transformation::PriorQueries => "prior_queries",
            Transformation::PriorQueriesReasonings => "prior_queries_reasonings",
            Transformation::PriorQueriesReasoningsDocs => "prior_queries_reasonings_docs",
            Transformation::WindowK => "window_k",
        }
    }
}

impl std::str::FromStr for Transformation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Transformation::ALL
            .into_iter()
            .find(|t| t.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown transformation {s:?}"))
    }
}

/// History window size: a positive turn count or the whole history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    Turns(usize),
    All,
}

impl Window {
    /// First included turn (1-based) when the current turn is `t`.
    pub fn start(self, t: usize) -> usize {
        match self {
            Window::All => 1,
            Window::Turns(k) => (t + 1).saturating_sub(k).max(1),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Turns(k) => write!(f, "{k}"),
            Window::All => f.write_str("all"),
        }
    }
}

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Window::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Window::Turns(k)),
            _ => Err(format!("window must be a positive integer or \"all\", got {s:?}")),
        }
    }
}

impl Serialize for Window {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Window::Turns(k) => s.serialize_u64(*k as u64),
            Window::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("window must be positive")),
            Raw::Num(k) => Ok(Window::Turns(k as usize)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A retrieval input produced from a trajectory prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedQuery {
    pub instruction: String,
    pub body: String,
    pub transformation: Transformation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_k: Option<Window>,
}

/// One contrastive training example harvested from a search turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub reasoning: String,
    pub query: String,
    pub positive: Document,
    pub negatives: Vec<Document>,
    pub qa_id: String,
    pub turn_index: usize,
}

pub const NEGATIVES_PER_INSTANCE: usize = 7;

impl TrainingInstance {
    pub fn check(&self) -> Result<(), String> {
        if self.negatives.len() != NEGATIVES_PER_INSTANCE {
            return Err(format!(
                "instance {}#{} has {} negatives, expected {NEGATIVES_PER_INSTANCE}",
                self.qa_id,
                self.turn_index,
                self.negatives.len()
            ));
        }
        let mut ids = HashSet::new();
        ids.insert(self.positive.id.as_str());
        for n in &self.negatives {
            if !ids.insert(n.id.as_str()) {
                return Err(format!(
                    "instance {}#{} repeats document {:?}",
                    self.qa_id, self.turn_index, n.id
                ));
            }
        }
        Ok(())
    }
}

/// Per-example evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub qa_id: String,
    /// `None` when the judge could not rule.
    pub correct: Option<bool>,
    pub recall: f64,
    pub search_calls: usize,
    pub visit_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub recall: f64,
    pub mean_search_calls: f64,
    pub mean_visit_calls: f64,
    pub zero_recall_rate: f64,
    pub mean_search_calls_given_zero_recall: f64,
    pub judged: usize,
    pub unjudged: usize,
    /// Whether any episode used the visit tool; controls the "search + visit" column.
    pub visit_enabled: bool,
    pub per_example: Vec<EvalRow>,
}
