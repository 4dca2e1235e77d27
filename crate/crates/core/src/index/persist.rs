//! On-disk index layout.
//!
//! ```text
//! <dir>/manifest.json   corpus hash, document count, per-index parameters
//! <dir>/postings.json   BM25 postings and document lengths
//! <dir>/vectors.bin     dense matrix, little-endian f32, row-major
//! ```
//!
//! Loading always re-hashes the supplied corpus and refuses a mismatch.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::bm25::{Bm25Index, Bm25Params, Posting};
use super::dense::DenseIndex;
use super::{RetrievalError, SnippetConfig};
use crate::model::Corpus;

pub const MANIFEST: &str = "manifest.json";
pub const POSTINGS: &str = "postings.json";
pub const VECTORS: &str = "vectors.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub corpus_hash: String,
    pub num_docs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bm25: Option<Bm25Params>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<DenseManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseManifest {
    pub dim: usize,
    pub embedder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_instruction: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PostingsFile {
    doc_lens: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

fn format_err(e: impl std::fmt::Display) -> RetrievalError {
    RetrievalError::Format(e.to_string())
}

/// Writes whichever indexes are given into `dir`, with one shared manifest.
pub fn save(
    dir: &Path,
    corpus: &Corpus,
    bm25: Option<&Bm25Index>,
    dense: Option<&DenseIndex>,
) -> Result<Manifest, RetrievalError> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        corpus_hash: corpus.content_hash(),
        num_docs: corpus.len(),
        bm25: bm25.map(|b| b.params),
        dense: dense.map(|d| DenseManifest {
            dim: d.dim,
            embedder: d.embedder.clone(),
            document_instruction: d.document_instruction.clone(),
        }),
    };
    if let Some(b) = bm25 {
        let file = PostingsFile {
            doc_lens: b.doc_lens.clone(),
            postings: b
                .postings
                .iter()
                .map(|(t, ps)| (t.clone(), ps.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        };
        std::fs::write(dir.join(POSTINGS), serde_json::to_vec(&file).map_err(format_err)?)?;
    }
    if let Some(d) = dense {
        let mut bytes = Vec::with_capacity(d.matrix.len() * 4);
        for x in &d.matrix {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::write(dir.join(VECTORS), bytes)?;
    }
    std::fs::write(
        dir.join(MANIFEST),
        serde_json::to_vec_pretty(&manifest).map_err(format_err)?,
    )?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path, corpus: &Corpus) -> Result<Manifest, RetrievalError> {
    let m: Manifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST))?).map_err(format_err)?;
    if m.format_version != FORMAT_VERSION {
        return Err(RetrievalError::Format(format!(
            "unsupported format version {}",
            m.format_version
        )));
    }
    let actual = corpus.content_hash();
    if m.corpus_hash != actual {
        return Err(RetrievalError::CorpusMismatch {
            expected: m.corpus_hash,
            actual,
        });
    }
    Ok(m)
}

pub fn load_bm25(dir: &Path, corpus: Arc<Corpus>) -> Result<Bm25Index, RetrievalError> {
    let m = load_manifest(dir, &corpus)?;
    let params = m.bm25.ok_or_else(|| format_err("manifest has no bm25 section"))?;
    let file: PostingsFile = serde_json::from_slice(&std::fs::read(dir.join(POSTINGS))?).map_err(format_err)?;
    if file.doc_lens.len() != corpus.len() {
        return Err(format_err("postings cover a different number of documents"));
    }
    let avg_len = file.doc_lens.iter().map(|&l| l as f64).sum::<f64>() / file.doc_lens.len().max(1) as f64;
    Ok(Bm25Index {
        corpus,
        params,
        postings: file
            .postings
            .into_iter()
            .map(|(t, ps)| (t, ps.into_iter().map(|(doc, tf)| Posting { doc, tf }).collect()))
            .collect(),
        doc_lens: file.doc_lens,
        avg_len,
        snippets: SnippetConfig::default(),
    })
}

pub fn load_dense(dir: &Path, corpus: Arc<Corpus>) -> Result<DenseIndex, RetrievalError> {
    let m = load_manifest(dir, &corpus)?;
    let dm = m.dense.ok_or_else(|| format_err("manifest has no dense section"))?;
    let bytes = std::fs::read(dir.join(VECTORS))?;
    if bytes.len() != corpus.len() * dm.dim * 4 {
        return Err(format_err(format!(
            "vectors.bin holds {} bytes, expected {} docs x {} dims x 4",
            bytes.len(),
            corpus.len(),
            dm.dim
        )));
    }
    let matrix = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(DenseIndex {
        corpus,
        matrix,
        dim: dm.dim,
        embedder: dm.embedder,
        document_instruction: dm.document_instruction,
        snippets: SnippetConfig::default(),
    })
}
