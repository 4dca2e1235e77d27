//! Exact (flat) cosine search over unit-normalized document vectors.

use std::sync::Arc;

use super::{rank_hits, Hit, RetrievalError, SnippetConfig};
use crate::backends::{BackendError, Embedder};
use crate::composer::render_retrieval_prompt;
use crate::model::{ComposedQuery, Corpus, RetrievalResult};

const EMBED_BATCH: usize = 256;

#[derive(Debug, Clone)]
pub struct DenseIndex {
    pub(crate) corpus: Arc<Corpus>,
    /// Row-major, one unit-norm row per corpus ordinal.
    pub(crate) matrix: Vec<f32>,
    pub(crate) dim: usize,
    pub(crate) embedder: String,
    pub(crate) document_instruction: Option<String>,
    pub(crate) snippets: SnippetConfig,
}

impl DenseIndex {
    pub fn with_snippets(mut self, snippets: SnippetConfig) -> Self {
        self.snippets = snippets;
        self
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.matrix.len() / self.dim
    }

    pub fn row(&self, ordinal: usize) -> &[f32] {
        &self.matrix[ordinal * self.dim..(ordinal + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn embedder_name(&self) -> &str {
        &self.embedder
    }

    /// Cosine scores of `query` (unit-norm) against every row, best first.
    pub fn score_vector(&self, query: &[f64], k: usize) -> Result<Vec<Hit>, RetrievalError> {
        if query.len() != self.dim {
            return Err(BackendError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            }
            .into());
        }
        let hits = (0..self.rows())
            .map(|ord| Hit {
                ordinal: ord,
                score: self.row(ord).iter().zip(query).map(|(&a, &b)| a as f64 * b).sum(),
            })
            .collect();
        Ok(rank_hits(&self.corpus, hits, k))
    }
}

/// Embeds title + text of every document into a flat unit-norm matrix.
pub fn build_dense(
    corpus: Arc<Corpus>,
    embedder: &dyn Embedder,
    document_instruction: Option<&str>,
) -> Result<DenseIndex, RetrievalError> {
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let texts: Vec<String> = corpus.documents().iter().map(|d| d.indexable_text()).collect();
    let mut matrix = Vec::new();
    let mut dim = 0;
    for chunk in texts.chunks(EMBED_BATCH) {
        for v in embedder.embed(chunk, document_instruction)? {
            if dim == 0 {
                dim = v.dim();
            } else if v.dim() != dim {
                return Err(BackendError::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                }
                .into());
            }
            // backends hand back unit vectors; renormalize after the f32 cast
            let n = v.norm();
            matrix.extend(v.values.iter().map(|x| (x / n) as f32));
        }
    }
    Ok(DenseIndex {
        corpus,
        matrix,
        dim,
        embedder: embedder.name(),
        document_instruction: document_instruction.map(str::to_string),
        snippets: SnippetConfig::default(),
    })
}

/// Embeds the rendered prompt of `composed` and returns the top `k` documents by cosine.
pub fn search_dense(
    index: &DenseIndex,
    composed: &ComposedQuery,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<RetrievalResult>, RetrievalError> {
    let prompt = render_retrieval_prompt(composed);
    let q = embedder
        .embed(&[prompt], None)?
        .pop()
        .ok_or_else(|| BackendError::MalformedResponse("embedder returned no vector".into()))?;
    Ok(index
        .score_vector(&q.values, k.max(1))?
        .into_iter()
        .map(|h| index.snippets.result(&index.corpus, h))
        .collect())
}
