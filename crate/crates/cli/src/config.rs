//! Run configuration: defaults, then a TOML or JSON file, then environment,
//! then command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use deepretrieve::backends::http::HttpReply;
use deepretrieve::backends::stub::{
    answer_reply, search_reply, HeuristicAgent, HeuristicAnnotator, RankOrder, RankingStub,
};
use deepretrieve::backends::{
    AssistantMessage, BackendError, CassetteTransport, ChatBackend, Embedder, EndpointConfig, HashingEmbedder,
    HttpTransport, OpenAiChat, OpenAiEmbedder, ScriptedChat, StubEmbedder, Transport,
};
use deepretrieve::index::Bm25Params;
use deepretrieve::model::{Transformation, Window};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub workers: Option<usize>,
    pub deterministic: bool,
    pub backends: Backends,
    pub retriever: RetrieverConfig,
    pub composer: ComposerConfig,
    pub agent: AgentSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub agent: ChatSpec,
    pub oracle: ChatSpec,
    pub reranker: ChatSpec,
    /// Only used when `eval.judge = "llm"`.
    pub judge: Option<ChatSpec>,
    pub annotator: ChatSpec,
    pub embedder: EmbedderSpec,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            agent: ChatSpec::Heuristic { searches: 2 },
            oracle: ChatSpec::RankingStub { order: Order::Identity },
            reranker: ChatSpec::RankingStub { order: Order::Identity },
            judge: None,
            annotator: ChatSpec::Annotator,
            embedder: EmbedderSpec::Hashing { dim: 256 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Identity,
    Reverse,
}

/// Where recorded HTTP exchanges live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteSpec {
    pub path: PathBuf,
    /// `replay` (offline) or `record` (live, then saved).
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatSpec {
    /// Rule-based offline agent.
    Heuristic {
        searches: usize,
    },
    /// Fixed replies read from a JSON file.
    Scripted {
        file: PathBuf,
    },
    RankingStub {
        order: Order,
    },
    Annotator,
    Openai {
        #[serde(flatten)]
        endpoint: EndpointConfig,
        /// Environment variable holding the API key.
        api_key_env: Option<String>,
        cassette: Option<CassetteSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Stub {
        dim: usize,
    },
    Hashing {
        dim: usize,
    },
    Openai {
        #[serde(flatten)]
        endpoint: EndpointConfig,
        api_key_env: Option<String>,
        cassette: Option<CassetteSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Bm25,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverConfig {
    pub kind: RetrieverKind,
    pub bm25: Bm25Params,
    pub top_k: usize,
    pub snippet_tokens: usize,
    /// A `tokenizer.json` for token counting; whitespace tokens otherwise.
    pub tokenizer_file: Option<PathBuf>,
    pub document_instruction: Option<String>,
    /// Rerank this many results with the listwise reranker backend.
    pub listwise_top_n: Option<usize>,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            kind: RetrieverKind::Bm25,
            bm25: Bm25Params::default(),
            top_k: deepretrieve::agent::DEFAULT_TOP_K,
            snippet_tokens: deepretrieve::tokenize::DEFAULT_SNIPPET_TOKENS,
            tokenizer_file: None,
            document_instruction: None,
            listwise_top_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposerConfig {
    pub transformation: Transformation,
    pub window: Option<Window>,
    pub history_token_budget: usize,
    /// Directory of template overrides.
    pub templates_dir: Option<PathBuf>,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            transformation: Transformation::CurrentReasoning,
            window: None,
            history_token_budget: deepretrieve::composer::DEFAULT_HISTORY_TOKEN_BUDGET,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub max_turns: usize,
    pub visit_tool: bool,
    pub visit_char_cap: usize,
    pub prefer_reasoning_channel: bool,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            max_turns: deepretrieve::agent::DEFAULT_MAX_TURNS,
            visit_tool: false,
            visit_char_cap: deepretrieve::agent::DEFAULT_VISIT_CHAR_CAP,
            prefer_reasoning_channel: false,
            temperature: 0.6,
            max_output_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Skip rejection sampling and keep every rollout.
    pub keep_all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    Exact,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub judge: JudgeMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            judge: JudgeMode::Exact,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        if is_json {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }

    pub fn effective_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.unwrap_or(4).max(1)
        }
    }
}

/// Replies for the scripted agent: a default script plus per-question scripts
/// keyed by a substring of the question.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    default: Vec<ScriptStep>,
    #[serde(default)]
    scripts: std::collections::BTreeMap<String, Vec<ScriptStep>>,
    #[serde(default)]
    cycle: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScriptStep {
    Search { reasoning: String, search: String },
    Answer { reasoning: String, answer: String },
    Text { text: String },
}

impl From<ScriptStep> for AssistantMessage {
    fn from(s: ScriptStep) -> Self {
        match s {
            ScriptStep::Search { reasoning, search } => search_reply(&reasoning, &search),
            ScriptStep::Answer { reasoning, answer } => answer_reply(&reasoning, &answer),
            ScriptStep::Text { text } => AssistantMessage::text(text),
        }
    }
}

fn scripted(path: &Path) -> Result<ScriptedChat> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?;
    let file: ScriptFile = serde_json::from_str(&text).with_context(|| format!("parsing script {}", path.display()))?;
    let mut chat = ScriptedChat::new(file.default.into_iter().map(Into::into).collect());
    for (k, steps) in file.scripts {
        chat = chat.with_script(k, steps.into_iter().map(Into::into).collect());
    }
    Ok(if file.cycle { chat.cycling() } else { chat })
}

/// Cassette recorders that must be saved when the command finishes.
#[derive(Default)]
pub struct Recorders(pub Vec<Arc<CassetteTransport>>);

impl Recorders {
    pub fn save(&self) -> Result<()> {
        for r in &self.0 {
            r.save().context("saving cassette")?;
        }
        Ok(())
    }
}

/// Forwards to a shared cassette transport.
struct Shared(Arc<CassetteTransport>);

impl Transport for Shared {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &serde_json::Value) -> Result<HttpReply, BackendError> {
        self.0.post_json(url, api_key, body)
    }
}

fn endpoint_with_key(endpoint: &EndpointConfig, api_key_env: &Option<String>) -> EndpointConfig {
    let mut e = endpoint.clone();
    if let Some(var) = api_key_env {
        e.api_key = std::env::var(var).ok();
    }
    e
}

fn transport(
    endpoint: &EndpointConfig,
    cassette: &Option<CassetteSpec>,
    recorders: &mut Recorders,
) -> Result<Arc<dyn Transport>> {
    let live = || -> Result<Arc<dyn Transport>> {
        Ok(Arc::new(HttpTransport::new(std::time::Duration::from_millis(
            endpoint.timeout_ms,
        ))?))
    };
    match cassette {
        None => live(),
        Some(c) if c.mode == "replay" => Ok(Arc::new(
            CassetteTransport::replay_file(&c.path)
                .with_context(|| format!("loading cassette {}", c.path.display()))?,
        )),
        Some(c) if c.mode == "record" => {
            let rec = Arc::new(CassetteTransport::record(live()?, Some(c.path.clone())));
            recorders.0.push(rec.clone());
            Ok(Arc::new(Shared(rec)))
        }
        Some(c) => bail!("cassette mode must be replay or record, not {:?}", c.mode),
    }
}

pub fn build_chat(spec: &ChatSpec, recorders: &mut Recorders) -> Result<Arc<dyn ChatBackend>> {
    Ok(match spec {
        ChatSpec::Heuristic { searches } => Arc::new(HeuristicAgent { searches: *searches }),
        ChatSpec::Scripted { file } => Arc::new(scripted(file)?),
        ChatSpec::RankingStub { order } => Arc::new(RankingStub {
            order: match order {
                Order::Identity => RankOrder::Identity,
                Order::Reverse => RankOrder::Reverse,
            },
        }),
        ChatSpec::Annotator => Arc::new(HeuristicAnnotator),
        ChatSpec::Openai {
            endpoint,
            api_key_env,
            cassette,
        } => {
            let e = endpoint_with_key(endpoint, api_key_env);
            let t = transport(&e, cassette, recorders)?;
            Arc::new(OpenAiChat::with_transport(e, t))
        }
    })
}

pub fn build_embedder(spec: &EmbedderSpec, seed: u64, recorders: &mut Recorders) -> Result<Arc<dyn Embedder>> {
    Ok(match spec {
        EmbedderSpec::Stub { dim } => Arc::new(StubEmbedder::new(*dim, seed)),
        EmbedderSpec::Hashing { dim } => Arc::new(HashingEmbedder::new(*dim, seed)),
        EmbedderSpec::Openai {
            endpoint,
            api_key_env,
            cassette,
        } => {
            let e = endpoint_with_key(endpoint, api_key_env);
            let t = transport(&e, cassette, recorders)?;
            Arc::new(OpenAiEmbedder::with_transport(e, t))
        }
    })
}
