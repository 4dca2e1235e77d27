mod support;

use support::goldens;

#[test]
fn main_prompt() {
    goldens::main_prompt().unwrap();
}

#[test]
fn oracle_rerank_prompt() {
    goldens::oracle_rerank().unwrap();
}

#[test]
fn prior_queries_prompt() {
    goldens::prior_queries().unwrap();
}

#[test]
fn queries_reasonings_prompt() {
    goldens::queries_reasonings().unwrap();
}

#[test]
fn queries_reasonings_docs_prompt() {
    goldens::all_history().unwrap();
}

#[test]
fn atomic_clue_prompts() {
    goldens::atomic_clues().unwrap();
}

#[test]
fn noise_prompts() {
    goldens::noise_steps().unwrap();
}
