//! Shared inputs for the criterion benches.

use deepretrieve::model::{Action, Observation, RetrievalResult, Trajectory};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded random unit vectors of dimension `dim`.
pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// A search-only trajectory with `turns` turns and five results per observation.
pub fn trajectory(turns: usize) -> Trajectory {
    let mut t = Trajectory::new("qa-bench", "bench", "bm25");
    for i in 1..=turns {
        let results = (0..5)
            .map(|r| RetrievalResult {
                doc_id: format!("doc-{i}-{r}"),
                score: 1.0 / (r + 1) as f64,
                snippet: format!("snippet for turn {i} result {r} with a few more words of filler"),
            })
            .collect();
        t.push(
            format!("Turn {i}: the previous results mention a founder, so I should look for the headquarters next."),
            Action::Search {
                query: format!("founder headquarters {i}"),
            },
            Some(Observation::Results(results)),
        );
    }
    t
}
