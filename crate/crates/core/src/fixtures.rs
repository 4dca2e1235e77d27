//! Seeded synthetic corpora with two-hop questions, for offline runs.
//!
//! Example `i` has a bridge document naming a person and the organisation
//! they founded, and an answer document giving the organisation's home town.
//! The question names only the person. The remaining documents are filler
//! prose over a shared vocabulary.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Corpus, Document, QaExample};

const ONSETS: &[&str] = &[
    "br", "k", "l", "m", "v", "t", "d", "s", "gr", "p", "th", "r", "n", "f", "h",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ae", "ou"];
const CODAS: &[&str] = &["n", "r", "l", "s", "th", "x", "m", "nd", "rk"];
const FILLER: &[&str] = &[
    "river",
    "market",
    "season",
    "harbor",
    "council",
    "festival",
    "railway",
    "museum",
    "archive",
    "valley",
    "bridge",
    "library",
    "orchestra",
    "garden",
    "tower",
    "canal",
    "quarry",
    "mill",
    "school",
    "theater",
    "observatory",
    "forest",
    "coast",
    "island",
    "vineyard",
    "workshop",
    "parish",
    "district",
    "province",
    "chapel",
    "square",
    "tunnel",
];
const ORG_KINDS: &[&str] = &[
    "Works", "Studios", "Foundry", "Records", "Press", "Labs", "Guild", "Company",
];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    w.push_str(CODAS.choose(rng).expect("non-empty"));
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => w,
    }
}

fn unique(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>, syllables: usize) -> String {
    loop {
        let w = word(rng, syllables);
        if used.insert(w.to_lowercase()) {
            return w;
        }
    }
}

fn filler(rng: &mut ChaCha8Rng, sentences: usize) -> String {
    let mut out = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let n = rng.gen_range(6..12);
        let words: Vec<&str> = (0..n).map(|_| *FILLER.choose(rng).expect("non-empty")).collect();
        let mut s = words.join(" ");
        s[..1].make_ascii_uppercase();
        out.push(s + ".");
    }
    out.join(" ")
}

/// A corpus of `num_docs` documents (at least `2 * num_qa`) and `num_qa` two-hop questions.
pub fn synthetic(num_docs: usize, num_qa: usize, seed: u64) -> (Corpus, Vec<QaExample>) {
    assert!(num_docs >= 2 * num_qa, "need two documents per question");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used: BTreeSet<String> = FILLER.iter().map(|w| w.to_string()).collect();
    let mut docs = Vec::with_capacity(num_docs);
    let mut qas = Vec::with_capacity(num_qa);
    for i in 0..num_qa {
        let person = format!("{} {}", unique(&mut rng, &mut used, 2), unique(&mut rng, &mut used, 2));
        let org = format!(
            "{} {}",
            unique(&mut rng, &mut used, 2),
            ORG_KINDS.choose(&mut rng).expect("non-empty")
        );
        let town = unique(&mut rng, &mut used, 3);
        let bridge_id = format!("doc-{:04}", 2 * i);
        let answer_id = format!("doc-{:04}", 2 * i + 1);
        docs.push(
            Document::new(
                bridge_id.clone(),
                format!(
                    "{org} headquarters. {person} founded {org} after years in the {}. {}",
                    FILLER[i % FILLER.len()],
                    filler(&mut rng, 3)
                ),
            )
            .with_title(person.clone()),
        );
        docs.push(
            Document::new(
                answer_id.clone(),
                format!(
                    "{org} is headquartered in {town}. Answer: {town}. {}",
                    filler(&mut rng, 3)
                ),
            )
            .with_title(org.clone()),
        );
        qas.push(QaExample {
            id: format!("qa-{i:03}"),
            question: format!("In which town is the organisation founded by {person} headquartered?"),
            answer: town,
            evidence: vec![bridge_id, answer_id],
        });
    }
    for j in 2 * num_qa..num_docs {
        docs.push(Document::new(format!("doc-{j:04}"), filler(&mut rng, 4)));
    }
    (Corpus::new(docs), qas)
}
