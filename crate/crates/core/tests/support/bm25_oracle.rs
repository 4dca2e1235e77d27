use std::sync::Arc;
use std::time::{Duration, Instant};

use deepretrieve::backends::{Embedder, HashingEmbedder};
use deepretrieve::fixtures::synthetic;
use deepretrieve::index::{build_bm25, build_dense, search_bm25, search_dense, Bm25Params};
use deepretrieve::model::{ComposedQuery, Corpus, Transformation};
use deepretrieve::render_retrieval_prompt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure, Check};

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn doc_text(corpus: &Corpus, i: usize) -> String {
    let d = &corpus.documents()[i];
    match &d.title {
        Some(t) => format!("{t}\n{}", d.text),
        None => d.text.clone(),
    }
}

/// Scores every document against every query term from scratch.
pub fn brute_bm25(corpus: &Corpus, query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
    let docs: Vec<Vec<String>> = (0..corpus.len()).map(|i| words(&doc_text(corpus, i))).collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut scored = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let mut s = 0.0;
        let mut hit = false;
        for term in words(query) {
            let df = docs.iter().filter(|x| x.contains(&term)).count() as f64;
            let tf = d.iter().filter(|w| **w == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            hit = true;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg));
        }
        if hit && s > 0.0 {
            scored.push((corpus.documents()[i].id.clone(), s));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

fn random_query(rng: &mut ChaCha8Rng, vocab: &[String]) -> String {
    let n = rng.gen_range(1..=4);
    let mut terms: Vec<String> = (0..n).map(|_| vocab.choose(rng).expect("non-empty").clone()).collect();
    if rng.gen_bool(0.2) {
        terms.push("zzyzx".into());
    }
    if rng.gen_bool(0.3) {
        terms[0] = terms[0].to_uppercase();
    }
    terms.join(if rng.gen_bool(0.5) { " " } else { ", " })
}

fn vocabulary(corpus: &Corpus) -> Vec<String> {
    let mut v: Vec<String> = (0..corpus.len()).flat_map(|i| words(&doc_text(corpus, i))).collect();
    v.sort();
    v.dedup();
    v
}

pub fn bm25_matches_brute_force() -> Check {
    let (corpus, _) = synthetic(100, 10, 42);
    let corpus = Arc::new(corpus);
    let index = build_bm25(corpus.clone(), Bm25Params::default()).map_err(|e| e.to_string())?;
    let vocab = vocabulary(&corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for qn in 0..50 {
        let query = random_query(&mut rng, &vocab);
        let want = brute_bm25(&corpus, &query, 1.2, 0.75);
        let got = search_bm25(&index, &query, corpus.len());
        let got_ids: Vec<&str> = got.iter().map(|r| r.doc_id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
        ensure!(
            got_ids == want_ids,
            "query {qn} {query:?}: ranking {got_ids:?} != {want_ids:?}"
        );
        for (r, (_, s)) in got.iter().zip(&want) {
            ensure!(
                (r.score - s).abs() <= 1e-9 * s.abs().max(1.0),
                "query {query:?}: score {} != {s}",
                r.score
            );
        }
        let top10 = search_bm25(&index, &query, 10);
        ensure!(
            top10.len() == want.len().min(10),
            "query {query:?}: top-10 length {}",
            top10.len()
        );
    }
    Ok(())
}

pub fn dense_matches_exhaustive_cosine() -> Check {
    let (corpus, _) = synthetic(100, 10, 42);
    let corpus = Arc::new(corpus);
    let embedder = HashingEmbedder::new(64, 5);
    let index = build_dense(corpus.clone(), &embedder, None).map_err(|e| e.to_string())?;
    let texts: Vec<String> = (0..corpus.len()).map(|i| doc_text(&corpus, i)).collect();
    let doc_vecs = embedder.embed(&texts, None).map_err(|e| e.to_string())?;
    let vocab = vocabulary(&corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let k = 10;
    for qn in 0..50 {
        let composed = ComposedQuery {
            instruction: "Given a web search query, retrieve relevant passages that answer the query".into(),
            body: random_query(&mut rng, &vocab),
            transformation: Transformation::None,
            window_k: None,
        };
        let qv = embedder
            .embed(&[render_retrieval_prompt(&composed)], None)
            .map_err(|e| e.to_string())?
            .remove(0);
        let mut cos: Vec<(String, f64)> = doc_vecs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let dot: f64 = d.values.iter().zip(&qv.values).map(|(a, b)| a * b).sum();
                let nd = d.values.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nq = qv.values.iter().map(|x| x * x).sum::<f64>().sqrt();
                (corpus.documents()[i].id.clone(), dot / (nd * nq))
            })
            .collect();
        cos.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let got = search_dense(&index, &composed, &embedder, k).map_err(|e| e.to_string())?;
        let got_ids: Vec<&str> = got.iter().map(|r| r.doc_id.as_str()).collect();
        let want_ids: Vec<&str> = cos[..k].iter().map(|(id, _)| id.as_str()).collect();
        if got_ids != want_ids {
            // f32 storage may swap neighbours whose cosines agree to ~1e-6
            let near_tie = got_ids.iter().zip(&want_ids).zip(&cos).all(|((g, w), (_, s))| {
                g == w
                    || cos
                        .iter()
                        .find(|(id, _)| id == g)
                        .is_some_and(|(_, gs)| (gs - s).abs() < 1e-6)
            });
            ensure!(near_tie, "query {qn}: dense top-{k} {got_ids:?} != {want_ids:?}");
        }
        for (r, (_, s)) in got.iter().zip(&cos) {
            ensure!(
                (r.score - s).abs() < 1e-5,
                "query {qn}: score {} vs cosine {s}",
                r.score
            );
        }
    }
    Ok(())
}

pub fn all() -> Check {
    let start = Instant::now();
    bm25_matches_brute_force()?;
    dense_matches_exhaustive_cosine()?;
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(30), "took {took:?}");
    Ok(())
}
