//! Chat-completion and embedding backends.
//!
//! Live backends speak the OpenAI-compatible HTTP surface
//! (`{base}/chat/completions`, `{base}/embeddings`). Deterministic stubs in
//! [`stub`] make every pipeline runnable offline.

pub mod cassette;
pub mod http;
pub mod stub;

use serde::{Deserialize, Serialize};

pub use cassette::{Cassette, CassetteMode, CassetteTransport};
pub use http::{EndpointConfig, HttpTransport, InFlightLimiter, OpenAiChat, OpenAiEmbedder, RetryPolicy, Transport};
pub use stub::{stub_embed, HashingEmbedder, ScriptedChat, StubEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    /// Tool calls issued by an assistant message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    /// For `Role::Tool`, the call this message answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Decoding {
    /// Sampling settings for agent policies.
    pub fn agent() -> Self {
        Self {
            temperature: 0.6,
            max_output_tokens: 4096,
            seed: None,
        }
    }

    /// Greedy settings for rerankers, judges and annotators.
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 2048,
            seed: None,
        }
    }
}

impl Default for Decoding {
    fn default() -> Self {
        Self::greedy()
    }
}

/// The three tools an agent may call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub search: bool,
    pub visit: bool,
    pub answer: bool,
}

impl ToolSchema {
    /// OpenAI `tools` array declaring the enabled tools.
    pub fn to_openai(&self) -> serde_json::Value {
        let mut tools = Vec::new();
        let mut push = |name: &str, desc: &str, arg: &str, arg_desc: &str| {
            tools.push(serde_json::json!({
                "type": "function",
                "function": {
                    "name": name,
                    "description": desc,
                    "parameters": {
                        "type": "object",
                        "properties": { arg: { "type": "string", "description": arg_desc } },
                        "required": [arg],
                    }
                }
            }));
        };
        if self.search {
            push(
                "search",
                "Search the document collection.",
                "query",
                "The search query.",
            );
        }
        if self.visit {
            push(
                "visit",
                "Open a document and read its full text.",
                "doc_id",
                "Identifier of the document to open.",
            );
        }
        if self.answer {
            push(
                "answer",
                "Submit the final answer to the question.",
                "text",
                "The final answer.",
            );
        }
        serde_json::Value::Array(tools)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub decoding: Decoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_schema: Option<ToolSchema>,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, decoding: Decoding) -> Self {
        Self {
            messages,
            decoding,
            tool_schema: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first() {
            None => Err(BackendError::InvalidRequest("request has no messages".into())),
            Some(m) if !matches!(m.role, Role::System | Role::User) => Err(BackendError::InvalidRequest(
                "first message must be a system or user message".into(),
            )),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(default)]
    pub id: String,
    pub name: String,
    /// Arguments as a JSON object.
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssistantMessage {
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    /// Separate reasoning channel, for servers that expose one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl AssistantMessage {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            ..Default::default()
        }
    }
}

/// A unit-length (after normalization) embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm. Fails on zero or non-finite vectors.
    pub fn normalized(mut self) -> Result<Self, BackendError> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::MalformedResponse(
                "embedding has non-finite values".into(),
            ));
        }
        let n = self.norm();
        if n == 0.0 {
            return Err(BackendError::MalformedResponse("embedding is the zero vector".into()));
        }
        for v in &mut self.values {
            *v /= n;
        }
        Ok(self)
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded response for request {0}")]
    CassetteMiss(String),
    #[error("stub backend: {0}")]
    Stub(String),
}

impl BackendError {
    /// Errors worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout(_) | BackendError::RateLimited { .. } => true,
            BackendError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError> {
        (**self).chat(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError> {
        (**self).chat(request)
    }
}

/// Any closure over the request is a backend; convenient for scripted tests.
pub struct FnChat<F>(pub F);

impl<F> ChatBackend for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<AssistantMessage, BackendError> + Send + Sync,
{
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError> {
        (self.0)(request)
    }
}

pub trait Embedder: Send + Sync {
    /// Embeds each text, optionally under a task instruction. Output vectors
    /// are unit-norm and in input order.
    fn embed(&self, texts: &[String], instruction: Option<&str>) -> Result<Vec<EmbeddingVector>, BackendError>;

    /// Short tag recorded in index manifests and trajectories.
    fn name(&self) -> String;
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn embed(&self, texts: &[String], instruction: Option<&str>) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(texts, instruction)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// Prefixes a text with an instruction using the common
/// `Instruct: ...\nQuery:` embedding convention.
pub fn instructed(text: &str, instruction: Option<&str>) -> String {
    match instruction {
        Some(i) if !i.is_empty() => format!("Instruct: {i}\nQuery:{text}"),
        _ => text.to_string(),
    }
}

/// Normalizes a batch and checks every vector has the same dimension.
pub(crate) fn normalize_batch(
    vectors: Vec<EmbeddingVector>,
    expected_dim: Option<usize>,
) -> Result<Vec<EmbeddingVector>, BackendError> {
    let mut dim = expected_dim;
    vectors
        .into_iter()
        .map(|v| {
            match dim {
                Some(d) if d != v.dim() => {
                    return Err(BackendError::DimensionMismatch {
                        expected: d,
                        got: v.dim(),
                    })
                }
                None => dim = Some(v.dim()),
                _ => {}
            }
            v.normalized()
        })
        .collect()
}
