//! OpenAI-compatible HTTP clients.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    normalize_batch, AssistantMessage, BackendError, ChatBackend, ChatRequest, Embedder, EmbeddingVector, Role,
    ToolCall,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << retry.min(20));
        let capped = exp.min(self.max_delay_ms);
        let ms = if self.jitter && capped > 0 {
            rand::thread_rng().gen_range(capped / 2..=capped)
        } else {
            capped
        };
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: String::new(),
            api_key: None,
            timeout_ms: 120_000,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
        }
    }
}

impl EndpointConfig {
    pub fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Moves one JSON POST over the wire. Swappable so tests can record/replay.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<HttpReply, BackendError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("cannot build http client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<HttpReply, BackendError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Timeout(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| BackendError::Timeout(format!("{url}: reading body: {e}")))?;
        Ok(HttpReply { status, body })
    }
}

/// Counting semaphore bounding concurrent requests to one endpoint.
#[derive(Debug)]
pub struct InFlightLimiter {
    limit: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut n = self.in_use.lock();
        while *n >= self.limit {
            self.freed.wait(&mut n);
        }
        *n += 1;
        InFlightPermit { limiter: self }
    }

    pub fn in_use(&self) -> usize {
        *self.in_use.lock()
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.limiter.in_use.lock() -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Shared request machinery: limiter, retries, status mapping.
struct Endpoint {
    cfg: EndpointConfig,
    transport: Arc<dyn Transport>,
    limiter: InFlightLimiter,
    retries: AtomicU64,
}

impl Endpoint {
    fn new(cfg: EndpointConfig, transport: Arc<dyn Transport>) -> Self {
        let limiter = InFlightLimiter::new(cfg.max_in_flight);
        Self {
            cfg,
            transport,
            limiter,
            retries: AtomicU64::new(0),
        }
    }

    /// Posts `body` to `path`, retrying transient failures. Returns the
    /// parsed JSON reply and the number of retries it took.
    fn post(&self, path: &str, body: &Value) -> Result<(Value, u32), BackendError> {
        let url = self.cfg.url(path);
        let attempts = self.cfg.retry.max_attempts.max(1);
        let mut last = BackendError::Timeout(url.clone());
        for attempt in 0..attempts {
            if attempt > 0 {
                self.retries.fetch_add(1, Ordering::Relaxed);
                std::thread::sleep(self.cfg.retry.delay(attempt - 1));
            }
            let reply = {
                let _permit = self.limiter.acquire();
                self.transport.post_json(&url, self.cfg.api_key.as_deref(), body)
            };
            let err = match reply {
                Ok(r) if (200..300).contains(&r.status) => {
                    let v: Value = serde_json::from_str(&r.body)
                        .map_err(|e| BackendError::MalformedResponse(format!("{url}: {e}")))?;
                    return Ok((v, attempt));
                }
                Ok(r) if r.status == 429 => BackendError::RateLimited { attempts: attempt + 1 },
                Ok(r) => BackendError::Http {
                    status: r.status,
                    body: r.body.chars().take(500).collect(),
                },
                Err(e) => e,
            };
            if !err.is_transient() {
                return Err(err);
            }
            log::debug!("transient failure on {url} (attempt {}): {err}", attempt + 1);
            last = err;
        }
        Err(last)
    }
}

/// Chat client for `{base}/chat/completions`.
pub struct OpenAiChat {
    endpoint: Endpoint,
}

impl OpenAiChat {
    pub fn new(cfg: EndpointConfig) -> Result<Self, BackendError> {
        let transport = Arc::new(HttpTransport::new(Duration::from_millis(cfg.timeout_ms))?);
        Ok(Self::with_transport(cfg, transport))
    }

    pub fn with_transport(cfg: EndpointConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            endpoint: Endpoint::new(cfg, transport),
        }
    }

    /// Total retries issued by this client so far.
    pub fn retry_count(&self) -> u64 {
        self.endpoint.retries.load(Ordering::Relaxed)
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                    Role::Tool => "tool",
                };
                let mut v = json!({ "role": role, "content": m.content });
                if !m.tool_calls.is_empty() {
                    v["tool_calls"] = m
                        .tool_calls
                        .iter()
                        .map(|c| {
                            json!({
                                "id": c.id,
                                "type": "function",
                                "function": { "name": c.name, "arguments": c.arguments.to_string() },
                            })
                        })
                        .collect();
                }
                if let Some(id) = &m.tool_call_id {
                    v["tool_call_id"] = json!(id);
                }
                v
            })
            .collect();
        let mut body = json!({
            "model": self.endpoint.cfg.model,
            "messages": messages,
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_output_tokens,
        });
        if let Some(seed) = request.decoding.seed {
            body["seed"] = json!(seed);
        }
        if let Some(schema) = &request.tool_schema {
            body["tools"] = schema.to_openai();
        }
        body
    }

    /// Like [`ChatBackend::chat`] but also reports the retries this call took.
    pub fn chat_counted(&self, request: &ChatRequest) -> Result<(AssistantMessage, u32), BackendError> {
        request.validate()?;
        let (v, retries) = self.endpoint.post("chat/completions", &self.request_body(request))?;
        Ok((parse_chat_response(&v)?, retries))
    }
}

impl ChatBackend for OpenAiChat {
    fn chat(&self, request: &ChatRequest) -> Result<AssistantMessage, BackendError> {
        self.chat_counted(request).map(|(m, _)| m)
    }
}

pub fn parse_chat_response(v: &Value) -> Result<AssistantMessage, BackendError> {
    let msg = v
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message".into()))?;
    let content = msg
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let reasoning = msg
        .get("reasoning_content")
        .or_else(|| msg.get("reasoning"))
        .and_then(Value::as_str)
        .map(str::to_string);
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for c in calls {
            let f = c
                .get("function")
                .ok_or_else(|| BackendError::MalformedResponse("tool call without function".into()))?;
            let name = f
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::MalformedResponse("tool call without name".into()))?;
            let arguments = match f.get("arguments") {
                Some(Value::String(s)) => serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone())),
                Some(other) => other.clone(),
                None => Value::Object(Default::default()),
            };
            tool_calls.push(ToolCall {
                id: c.get("id").and_then(Value::as_str).unwrap_or_default().to_string(),
                name: name.to_string(),
                arguments,
            });
        }
    }
    Ok(AssistantMessage {
        content,
        tool_calls,
        reasoning,
    })
}

/// Embedding client for `{base}/embeddings`. Vectors are L2-normalized here.
pub struct OpenAiEmbedder {
    endpoint: Endpoint,
    batch_size: usize,
    dim: Mutex<Option<usize>>,
}

impl OpenAiEmbedder {
    pub fn new(cfg: EndpointConfig) -> Result<Self, BackendError> {
        let transport = Arc::new(HttpTransport::new(Duration::from_millis(cfg.timeout_ms))?);
        Ok(Self::with_transport(cfg, transport))
    }

    pub fn with_transport(cfg: EndpointConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            endpoint: Endpoint::new(cfg, transport),
            batch_size: 64,
            dim: Mutex::new(None),
        }
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }
}

impl Embedder for OpenAiEmbedder {
    fn embed(&self, texts: &[String], instruction: Option<&str>) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidRequest("no texts to embed".into()));
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let input: Vec<String> = chunk.iter().map(|t| super::instructed(t, instruction)).collect();
            let body = json!({ "model": self.endpoint.cfg.model, "input": input });
            let (v, _) = self.endpoint.post("embeddings", &body)?;
            let data = v
                .get("data")
                .and_then(Value::as_array)
                .ok_or_else(|| BackendError::MalformedResponse("missing data array".into()))?;
            if data.len() != chunk.len() {
                return Err(BackendError::MalformedResponse(format!(
                    "asked for {} embeddings, got {}",
                    chunk.len(),
                    data.len()
                )));
            }
            let mut rows: Vec<(usize, EmbeddingVector)> = Vec::with_capacity(data.len());
            for (pos, item) in data.iter().enumerate() {
                let index = item
                    .get("index")
                    .and_then(Value::as_u64)
                    .map(|i| i as usize)
                    .unwrap_or(pos);
                let values: Vec<f64> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| BackendError::MalformedResponse("missing embedding".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| BackendError::MalformedResponse("non-numeric embedding".into()))
                    })
                    .collect::<Result<_, _>>()?;
                rows.push((index, EmbeddingVector::new(values)));
            }
            rows.sort_by_key(|(i, _)| *i);
            let mut dim = self.dim.lock();
            let batch = normalize_batch(rows.into_iter().map(|(_, v)| v).collect(), *dim)?;
            *dim = batch.first().map(EmbeddingVector::dim);
            out.extend(batch);
        }
        Ok(out)
    }

    fn name(&self) -> String {
        format!("openai:{}", self.endpoint.cfg.model)
    }
}
