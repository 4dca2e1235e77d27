//! Okapi BM25 over an in-memory inverted index.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{rank_hits, Hit, RetrievalError, SnippetConfig};
use crate::model::{Corpus, RetrievalResult};

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    pub(crate) corpus: Arc<Corpus>,
    pub(crate) params: Bm25Params,
    pub(crate) postings: BTreeMap<String, Vec<Posting>>,
    pub(crate) doc_lens: Vec<u32>,
    pub(crate) avg_len: f64,
    pub(crate) snippets: SnippetConfig,
}

impl PartialEq for Bm25Index {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.postings == other.postings
            && self.doc_lens == other.doc_lens
            && self.avg_len == other.avg_len
    }
}

pub fn build_bm25(corpus: Arc<Corpus>, params: Bm25Params) -> Result<Bm25Index, RetrievalError> {
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lens = Vec::with_capacity(corpus.len());
    for (ord, doc) in corpus.documents().iter().enumerate() {
        let toks = tokenize(&doc.indexable_text());
        doc_lens.push(toks.len() as u32);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in toks {
            *tf.entry(t).or_default() += 1;
        }
        for (term, n) in tf {
            postings
                .entry(term)
                .or_default()
                .push(Posting { doc: ord as u32, tf: n });
        }
    }
    let avg_len = doc_lens.iter().map(|&l| l as f64).sum::<f64>() / doc_lens.len() as f64;
    Ok(Bm25Index {
        corpus,
        params,
        postings,
        doc_lens,
        avg_len,
        snippets: SnippetConfig::default(),
    })
}

impl Bm25Index {
    pub fn with_snippets(mut self, snippets: SnippetConfig) -> Self {
        self.snippets = snippets;
        self
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_lens(&self) -> &[u32] {
        &self.doc_lens
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_lens.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scored documents matching at least one query term, best first.
    pub fn score(&self, query: &str, k: usize) -> Vec<Hit> {
        let mut scores = vec![0.0f64; self.doc_lens.len()];
        let mut touched = vec![false; self.doc_lens.len()];
        let Bm25Params { k1, b } = self.params;
        for term in tokenize(query) {
            let list = self.postings(&term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(list.len());
            for p in list {
                let d = p.doc as usize;
                let tf = p.tf as f64;
                let norm = k1 * (1.0 - b + b * self.doc_lens[d] as f64 / self.avg_len);
                scores[d] += idf * tf * (k1 + 1.0) / (tf + norm);
                touched[d] = true;
            }
        }
        let hits = touched
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(|(d, _)| Hit {
                ordinal: d,
                score: scores[d],
            })
            .collect();
        rank_hits(&self.corpus, hits, k)
    }
}

/// Top-`k` BM25 results with snippets; empty when no query term is indexed.
pub fn search_bm25(index: &Bm25Index, query: &str, k: usize) -> Vec<RetrievalResult> {
    index
        .score(query, k.max(1))
        .into_iter()
        .map(|h| index.snippets.result(&index.corpus, h))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Document;

    fn corpus(texts: &[&str]) -> Arc<Corpus> {
        Arc::new(Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document::new(format!("d{i}"), *t))
                .collect(),
        ))
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("Otto-Knows, SWEDEN!"), ["otto", "knows", "sweden"]);
    }

    #[test]
    fn single_doc_postings_have_each_token_once() {
        let idx = build_bm25(corpus(&["a b a c"]), Bm25Params::default()).unwrap();
        assert_eq!(idx.vocabulary_size(), 3);
        assert_eq!(idx.postings("a"), &[Posting { doc: 0, tf: 2 }]);
    }

    #[test]
    fn doc_length_table_and_average() {
        let idx = build_bm25(corpus(&["a b", "c", "d e f"]), Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_lens(), &[2, 1, 3]);
        assert!((idx.avg_len() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rebuild_is_identical() {
        let c = corpus(&["x y z", "y z", "z"]);
        assert_eq!(
            build_bm25(c.clone(), Bm25Params::default()).unwrap(),
            build_bm25(c, Bm25Params::default()).unwrap()
        );
    }

    #[test]
    fn unique_term_ranks_its_doc_first() {
        let idx = build_bm25(
            corpus(&["common words here", "common rare words", "common"]),
            Bm25Params::default(),
        )
        .unwrap();
        let r = search_bm25(&idx, "rare", 3);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].doc_id, "d1");
    }

    #[test]
    fn unknown_terms_give_no_results() {
        let idx = build_bm25(corpus(&["alpha", "beta"]), Bm25Params::default()).unwrap();
        assert!(search_bm25(&idx, "gamma delta", 5).is_empty());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            build_bm25(Arc::new(Corpus::default()), Bm25Params::default()),
            Err(RetrievalError::EmptyCorpus)
        ));
    }

    #[test]
    fn ties_break_by_doc_id() {
        let c = Arc::new(Corpus::new(vec![
            Document::new("zeta", "same text"),
            Document::new("alpha", "same text"),
        ]));
        let idx = build_bm25(c, Bm25Params::default()).unwrap();
        let r = search_bm25(&idx, "same", 2);
        assert_eq!(r[0].doc_id, "alpha");
        assert_eq!(r[0].score, r[1].score);
    }
}
