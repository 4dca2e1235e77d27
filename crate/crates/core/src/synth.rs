//! Training-data synthesis: oracle reranking coupled to agent rollouts,
//! positive/negative harvesting, rejection sampling and dataset export.
//!
//! Every search turn of a synthesis rollout builds a candidate pool (the
//! example's evidence documents, then the query-only top 50), asks an oracle
//! that knows the gold answer to rank it, keeps rank 1 as the positive and
//! the bottom seven as negatives, and hands the reranked top 5 back to the
//! agent as the observation.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, AgentConfig, SearchTool, ToolError};
use crate::backends::{BackendError, ChatBackend, ChatRequest, Decoding, Message};
use crate::eval::{Judge, JudgeError};
use crate::index::{RetrievalError, Retriever, SnippetConfig};
use crate::io::IoError;
use crate::model::{
    Action, ComposedQuery, Corpus, Document, QaExample, RetrievalResult, TrainingInstance, Trajectory, Transformation,
    Turn, NEGATIVES_PER_INSTANCE,
};
use crate::templates::{TemplateError, Templates};

pub const POOL_RETRIEVAL_DEPTH: usize = 50;
pub const OBSERVATION_TOP_K: usize = 5;
pub const DEFAULT_LISTWISE_TOP_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankingWarning {
    /// Some ids were missing, repeated or out of range and were repaired.
    Repaired,
    /// No usable id at all; identity order returned.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    /// A permutation of `1..=n`, best first.
    pub order: Vec<usize>,
    pub warning: Option<RankingWarning>,
}

/// Reads a `[i] > [j] > …` ranking. Bracketed integers are taken left to
/// right; out-of-range ids and repeats are dropped and any missing ids are
/// appended in ascending order, so the result is always a permutation.
pub fn parse_ranking(text: &str, n: usize) -> Ranking {
    let re = Regex::new(r"\[\s*(\d+)\s*\]").expect("static regex");
    let mut seen = vec![false; n + 1];
    let mut order = Vec::with_capacity(n);
    let mut dirty = false;
    for c in re.captures_iter(text) {
        match c[1].parse::<usize>() {
            Ok(i) if (1..=n).contains(&i) && !seen[i] => {
                seen[i] = true;
                order.push(i);
            }
            _ => dirty = true,
        }
    }
    if order.is_empty() {
        return Ranking {
            order: (1..=n).collect(),
            warning: (n > 0).then_some(RankingWarning::Fallback),
        };
    }
    if order.len() < n {
        dirty = true;
        order.extend((1..=n).filter(|&i| !seen[i]));
    }
    Ranking {
        order,
        warning: dirty.then_some(RankingWarning::Repaired),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("invalid training instance: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Prompt settings shared by the oracle and the plain listwise reranker.
#[derive(Debug, Clone)]
pub struct RerankConfig {
    pub templates: Arc<Templates>,
    pub snippets: SnippetConfig,
    pub decoding: Decoding,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            templates: Templates::builtin(),
            snippets: SnippetConfig::default(),
            decoding: Decoding::greedy(),
        }
    }
}

fn passages(templates: &Templates, texts: &[String]) -> Result<String, TemplateError> {
    let mut lines = Vec::with_capacity(texts.len());
    for (i, t) in texts.iter().enumerate() {
        lines.push(templates.render("rerank/passage", &[("n", &(i + 1).to_string()), ("text", t)])?);
    }
    Ok(lines.join("\n"))
}

/// System and user messages for the oracle reranker.
pub fn oracle_prompt(
    texts: &[String],
    query: &str,
    question: &str,
    answer: &str,
    templates: &Templates,
) -> Result<Vec<Message>, TemplateError> {
    let num = texts.len().to_string();
    let block = passages(templates, texts)?;
    Ok(vec![
        Message::system(templates.render("rerank/oracle_system", &[])?),
        Message::user(templates.render(
            "rerank/oracle_user",
            &[
                ("question", question),
                ("correct_answer", answer),
                ("query", query),
                ("num", &num),
                ("passages", &block),
            ],
        )?),
    ])
}

/// System and user messages for the plain listwise reranker (no question or answer).
pub fn listwise_prompt(texts: &[String], query: &str, templates: &Templates) -> Result<Vec<Message>, TemplateError> {
    let num = texts.len().to_string();
    let block = passages(templates, texts)?;
    Ok(vec![
        Message::system(templates.render("rerank/listwise_system", &[])?),
        Message::user(templates.render(
            "rerank/listwise_user",
            &[("query", query), ("num", &num), ("passages", &block)],
        )?),
    ])
}

fn ask(llm: &dyn ChatBackend, messages: Vec<Message>, n: usize, decoding: Decoding) -> Result<Ranking, SynthError> {
    let reply = llm.chat(&ChatRequest::new(messages, decoding))?;
    let ranking = parse_ranking(&reply.content, n);
    if let Some(w) = ranking.warning {
        log::warn!("reranker output needed repair ({w:?}): {:?}", reply.content);
    }
    Ok(ranking)
}

/// Ranks `candidates` for `query` with knowledge of the question and its answer.
pub fn oracle_rerank(
    candidates: &[Document],
    query: &str,
    question: &str,
    answer: &str,
    llm: &dyn ChatBackend,
    cfg: &RerankConfig,
) -> Result<Ranking, SynthError> {
    if candidates.is_empty() {
        return Err(SynthError::NoCandidates);
    }
    let texts: Vec<String> = candidates.iter().map(|d| cfg.snippets.snippet(d)).collect();
    let messages = oracle_prompt(&texts, query, question, answer, &cfg.templates)?;
    ask(llm, messages, candidates.len(), cfg.decoding)
}

/// Reorders the first `top_n` results by a listwise LLM ranking; the tail is kept as is.
pub fn listwise_rerank(
    results: Vec<RetrievalResult>,
    query: &str,
    llm: &dyn ChatBackend,
    top_n: usize,
    cfg: &RerankConfig,
) -> Result<Vec<RetrievalResult>, SynthError> {
    let n = top_n.min(results.len());
    if n <= 1 {
        return Ok(results);
    }
    let texts: Vec<String> = results[..n].iter().map(|r| r.snippet.clone()).collect();
    let ranking = ask(llm, listwise_prompt(&texts, query, &cfg.templates)?, n, cfg.decoding)?;
    let mut head: Vec<Option<RetrievalResult>> = results.iter().take(n).cloned().map(Some).collect();
    let mut out: Vec<RetrievalResult> = ranking
        .order
        .iter()
        .map(|&i| head[i - 1].take().expect("permutation"))
        .collect();
    out.extend(results.into_iter().skip(n));
    Ok(out)
}

/// A retriever whose top results are reordered by a listwise LLM reranker.
pub struct ListwiseRetriever {
    pub inner: Arc<dyn Retriever>,
    pub llm: Arc<dyn ChatBackend>,
    pub top_n: usize,
    pub config: RerankConfig,
}

impl Retriever for ListwiseRetriever {
    fn search(&self, query: &ComposedQuery, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        let results = self.inner.search(query, k.max(self.top_n))?;
        let mut out = match listwise_rerank(results, &query.body, self.llm.as_ref(), self.top_n, &self.config) {
            Ok(r) => r,
            Err(SynthError::Backend(e)) => return Err(e.into()),
            Err(e) => return Err(RetrievalError::Format(e.to_string())),
        };
        out.truncate(k);
        Ok(out)
    }

    fn corpus(&self) -> &Arc<Corpus> {
        self.inner.corpus()
    }

    fn tag(&self) -> String {
        format!("{}+listwise{}", self.inner.tag(), self.top_n)
    }
}

/// Evidence documents in file order, then retrieved ids, without repeats.
pub fn candidate_pool(evidence: &[String], retrieved: &[RetrievalResult], corpus: &Corpus) -> Vec<Document> {
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    for id in evidence
        .iter()
        .map(String::as_str)
        .chain(retrieved.iter().map(|r| r.doc_id.as_str()))
    {
        if let Some(d) = corpus.get(id) {
            if seen.insert(id.to_string()) {
                pool.push(d.clone());
            }
        }
    }
    pool
}

fn plain(d: &Document) -> Document {
    Document::new(d.id.clone(), d.text.clone())
}

/// Positive is the oracle's first choice; negatives are its last seven.
pub fn label(pool: &[Document], ranking: &Ranking) -> Option<(Document, Vec<Document>)> {
    if pool.len() < NEGATIVES_PER_INSTANCE + 1 {
        return None;
    }
    let pos = plain(&pool[ranking.order[0] - 1]);
    let negs = ranking.order[ranking.order.len() - NEGATIVES_PER_INSTANCE..]
        .iter()
        .map(|&i| plain(&pool[i - 1]))
        .collect();
    Some((pos, negs))
}

#[derive(Debug, Clone, Default)]
pub struct SynthConfig {
    pub agent: AgentConfig,
    pub rerank: RerankConfig,
}

/// Search tool used during synthesis rollouts.
struct OracleTool<'a> {
    retriever: &'a dyn Retriever,
    oracle: &'a dyn ChatBackend,
    rerank: &'a RerankConfig,
    harvested: Mutex<Vec<TrainingInstance>>,
    warnings: Mutex<Vec<String>>,
}

impl SearchTool for OracleTool<'_> {
    fn search(&self, qa: &QaExample, history: &[Turn]) -> Result<Vec<RetrievalResult>, ToolError> {
        let turn = history.last().ok_or_else(|| ToolError::Other("empty history".into()))?;
        let Action::Search { query } = &turn.action else {
            return Err(ToolError::Other("last turn is not a search".into()));
        };
        let composed = ComposedQuery {
            instruction: String::new(),
            body: query.clone(),
            transformation: Transformation::None,
            window_k: None,
        };
        let retrieved = self.retriever.search(&composed, POOL_RETRIEVAL_DEPTH)?;
        let corpus = self.retriever.corpus();
        let pool = candidate_pool(&qa.evidence, &retrieved, corpus);
        if pool.is_empty() {
            return Ok(Vec::new());
        }
        let ranking =
            oracle_rerank(&pool, query, &qa.question, &qa.answer, self.oracle, self.rerank).map_err(|e| match e {
                SynthError::Backend(b) => ToolError::Retrieval(b.into()),
                other => ToolError::Other(other.to_string()),
            })?;
        match label(&pool, &ranking) {
            Some((positive, negatives)) => self.harvested.lock().push(TrainingInstance {
                reasoning: turn.reasoning.clone(),
                query: query.clone(),
                positive,
                negatives,
                qa_id: qa.id.clone(),
                turn_index: turn.index,
            }),
            None => {
                let msg = format!(
                    "{} turn {}: pool of {} is too small, no instance",
                    qa.id,
                    turn.index,
                    pool.len()
                );
                log::warn!("{msg}");
                self.warnings.lock().push(msg);
            }
        }
        Ok(ranking
            .order
            .iter()
            .take(OBSERVATION_TOP_K)
            .map(|&i| {
                let d = &pool[i - 1];
                RetrievalResult {
                    doc_id: d.id.clone(),
                    score: retrieved.iter().find(|r| r.doc_id == d.id).map_or(0.0, |r| r.score),
                    snippet: self.rerank.snippets.snippet(d),
                }
            })
            .collect())
    }

    fn corpus(&self) -> &Corpus {
        self.retriever.corpus()
    }

    fn tag(&self) -> String {
        format!("{}+oracle", self.retriever.tag())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub trajectory: Trajectory,
    pub instances: Vec<TrainingInstance>,
    pub warnings: Vec<String>,
}

/// One synthesis rollout. `retriever` should be query-only; the composed
/// query handed to it is always the bare search string.
pub fn synthesize(
    qa: &QaExample,
    agent: &dyn ChatBackend,
    retriever: &dyn Retriever,
    oracle: &dyn ChatBackend,
    cfg: &SynthConfig,
) -> SynthOutcome {
    let tool = OracleTool {
        retriever,
        oracle,
        rerank: &cfg.rerank,
        harvested: Mutex::new(Vec::new()),
        warnings: Mutex::new(Vec::new()),
    };
    let trajectory = run_episode(qa, agent, &tool, &cfg.agent);
    SynthOutcome {
        trajectory,
        instances: tool.harvested.into_inner(),
        warnings: tool.warnings.into_inner(),
    }
}

/// Synthesis over many examples on `workers` threads, in input order.
pub fn synthesize_all(
    qas: &[QaExample],
    agent: &dyn ChatBackend,
    retriever: &dyn Retriever,
    oracle: &dyn ChatBackend,
    cfg: &SynthConfig,
    workers: usize,
) -> Vec<SynthOutcome> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        qas.par_iter()
            .map(|qa| synthesize(qa, agent, retriever, oracle, cfg))
            .collect()
    })
}

/// Keeps the outcomes whose final answer the judge accepts. Unjudged and
/// unanswered rollouts are dropped along with their instances.
pub fn rejection_filter(outcomes: Vec<SynthOutcome>, qas: &[QaExample], judge: &dyn Judge) -> Vec<SynthOutcome> {
    outcomes
        .into_iter()
        .filter(|o| {
            let Some(qa) = qas.iter().find(|q| q.id == o.trajectory.qa_id) else {
                log::warn!("no QA example for trajectory {}", o.trajectory.qa_id);
                return false;
            };
            if o.trajectory.final_answer.is_none() {
                return false;
            }
            match judge.judge(o.trajectory.final_answer.as_deref(), qa) {
                Ok(ok) => ok,
                Err(JudgeError::Unavailable(e)) => {
                    log::warn!("{}: unjudged ({e}); dropped", qa.id);
                    false
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    pub text: String,
}

/// One line of the training dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub reasoning: String,
    pub query: String,
    pub positive: DocRecord,
    pub negatives: Vec<DocRecord>,
    pub qa_id: String,
    pub turn_index: usize,
}

impl From<&TrainingInstance> for InstanceRecord {
    fn from(i: &TrainingInstance) -> Self {
        let rec = |d: &Document| DocRecord {
            id: d.id.clone(),
            text: d.text.clone(),
        };
        Self {
            reasoning: i.reasoning.clone(),
            query: i.query.clone(),
            positive: rec(&i.positive),
            negatives: i.negatives.iter().map(rec).collect(),
            qa_id: i.qa_id.clone(),
            turn_index: i.turn_index,
        }
    }
}

impl From<InstanceRecord> for TrainingInstance {
    fn from(r: InstanceRecord) -> Self {
        Self {
            reasoning: r.reasoning,
            query: r.query,
            positive: Document::new(r.positive.id, r.positive.text),
            negatives: r.negatives.into_iter().map(|d| Document::new(d.id, d.text)).collect(),
            qa_id: r.qa_id,
            turn_index: r.turn_index,
        }
    }
}

/// Writes the dataset as JSON lines. Nothing is written if any instance is invalid.
pub fn export_dataset(instances: &[TrainingInstance], path: &Path) -> Result<usize, SynthError> {
    for i in instances {
        i.check().map_err(SynthError::Invalid)?;
    }
    let records: Vec<InstanceRecord> = instances.iter().map(InstanceRecord::from).collect();
    crate::io::write_jsonl(path, &records, None)?;
    Ok(records.len())
}

pub fn import_dataset(path: &Path) -> Result<Vec<TrainingInstance>, SynthError> {
    let records: Vec<InstanceRecord> = crate::io::read_jsonl(path)?;
    let instances: Vec<TrainingInstance> = records.into_iter().map(TrainingInstance::from).collect();
    for i in &instances {
        i.check().map_err(SynthError::Invalid)?;
    }
    Ok(instances)
}

/// Sidecar written next to the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub trajectories_run: usize,
    pub kept: usize,
    pub instances: usize,
    pub mean_instances_per_trajectory: f64,
}

impl SynthStats {
    pub fn new(trajectories_run: usize, kept: &[SynthOutcome]) -> Self {
        let instances: usize = kept.iter().map(|o| o.instances.len()).sum();
        Self {
            trajectories_run,
            kept: kept.len(),
            instances,
            mean_instances_per_trajectory: if kept.is_empty() {
                0.0
            } else {
                instances as f64 / kept.len() as f64
            },
        }
    }
}
