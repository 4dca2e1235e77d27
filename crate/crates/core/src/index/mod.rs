//! Sparse and dense retrieval over a [`Corpus`], plus the snippet rule used
//! for every result shown to an agent.

pub mod bm25;
pub mod dense;
pub mod persist;

use std::cmp::Ordering;
use std::sync::Arc;

pub use bm25::{build_bm25, search_bm25, Bm25Index, Bm25Params};
pub use dense::{build_dense, search_dense, DenseIndex};

use crate::backends::{BackendError, Embedder};
use crate::model::{ComposedQuery, Corpus, Document, RetrievalResult};
use crate::tokenize::{Tokenizer, DEFAULT_SNIPPET_TOKENS};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("index was built for corpus {expected}, but the supplied corpus hashes to {actual}")]
    CorpusMismatch { expected: String, actual: String },
    #[error("index format: {0}")]
    Format(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
}

/// A scored corpus ordinal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub ordinal: usize,
    pub score: f64,
}

/// Sorts by score descending then doc id ascending, and keeps the top `k`.
pub(crate) fn rank_hits(corpus: &Corpus, mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    let docs = corpus.documents();
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| docs[a.ordinal].id.cmp(&docs[b.ordinal].id))
    });
    hits.truncate(k);
    hits
}

/// First `token_budget` tokens of the document text.
pub fn snippet(doc: &Document, token_budget: usize, tokenizer: &Tokenizer) -> String {
    tokenizer.truncate(&doc.text, token_budget.max(1)).to_string()
}

#[derive(Debug, Clone)]
pub struct SnippetConfig {
    pub token_budget: usize,
    pub tokenizer: Tokenizer,
}

impl Default for SnippetConfig {
    fn default() -> Self {
        Self {
            token_budget: DEFAULT_SNIPPET_TOKENS,
            tokenizer: Tokenizer::Whitespace,
        }
    }
}

impl SnippetConfig {
    pub fn snippet(&self, doc: &Document) -> String {
        snippet(doc, self.token_budget, &self.tokenizer)
    }

    pub(crate) fn result(&self, corpus: &Corpus, hit: Hit) -> RetrievalResult {
        let doc = &corpus.documents()[hit.ordinal];
        RetrievalResult {
            doc_id: doc.id.clone(),
            score: hit.score,
            snippet: self.snippet(doc),
        }
    }
}

/// A searchable backend the agent loop can bind to.
pub trait Retriever: Send + Sync {
    fn search(&self, query: &ComposedQuery, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError>;
    fn corpus(&self) -> &Arc<Corpus>;
    fn tag(&self) -> String;
}

impl Retriever for Bm25Index {
    /// BM25 scores the composed body; the instruction is not lexical evidence.
    fn search(&self, query: &ComposedQuery, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        Ok(search_bm25(self, &query.body, k))
    }

    fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    fn tag(&self) -> String {
        "bm25".into()
    }
}

/// A dense index paired with the embedder that encodes its queries.
pub struct DenseRetriever {
    pub index: Arc<DenseIndex>,
    pub embedder: Arc<dyn Embedder>,
}

impl Retriever for DenseRetriever {
    fn search(&self, query: &ComposedQuery, k: usize) -> Result<Vec<RetrievalResult>, RetrievalError> {
        search_dense(&self.index, query, self.embedder.as_ref(), k)
    }

    fn corpus(&self) -> &Arc<Corpus> {
        self.index.corpus()
    }

    fn tag(&self) -> String {
        format!("dense:{}", self.embedder.name())
    }
}
