use deepretrieve::model::{Action, Observation, RetrievalResult, Trajectory, Transformation, Window};
use deepretrieve::tokenize::Tokenizer;
use deepretrieve::{compose, render_retrieval_prompt, CompositionConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use super::Check;

fn text() -> impl Strategy<Value = String> {
    "[a-z]{1,8}( [a-z]{1,8}){0,12}"
}

fn turn() -> impl Strategy<Value = (bool, String, String, Vec<String>)> {
    (
        prop::bool::weighted(0.9),
        text(),
        "[a-z]{1,8}( [a-z]{1,8}){0,4}",
        prop::collection::vec(text(), 0..6),
    )
}

/// Trajectories of 1..=24 turns ending in a search, with occasional visits.
pub fn trajectory() -> impl Strategy<Value = Trajectory> {
    (prop::collection::vec(turn(), 0..24), text(), "[a-z]{1,8}").prop_map(|(turns, last_r, last_q)| {
        let mut t = Trajectory::new("qa", "agent", "bm25");
        let push_search = |t: &mut Trajectory, r: String, q: String, snippets: Vec<String>| {
            let results = snippets
                .into_iter()
                .enumerate()
                .map(|(i, s)| RetrievalResult {
                    doc_id: format!("d{i}"),
                    score: 1.0,
                    snippet: s,
                })
                .collect();
            t.push(r, Action::Search { query: q }, Some(Observation::Results(results)));
        };
        for (search, r, q, snippets) in turns {
            if search {
                push_search(&mut t, r, q, snippets);
            } else {
                t.push(r, Action::Visit { doc_id: "d0".into() }, Some(Observation::Document(q)));
            }
        }
        push_search(&mut t, last_r, last_q, Vec::new());
        t
    })
}

fn rendered(t: &Trajectory, cfg: &CompositionConfig) -> Result<String, TestCaseError> {
    compose(&t.turns, cfg)
        .map(|c| render_retrieval_prompt(&c))
        .map_err(|e| TestCaseError::fail(e.to_string()))
}

pub fn window_one_is_current_reasoning(t: &Trajectory) -> Result<(), TestCaseError> {
    let a = rendered(t, &CompositionConfig::window(Window::Turns(1)))?;
    let b = rendered(t, &CompositionConfig::new(Transformation::CurrentReasoning))?;
    prop_assert_eq!(a, b);
    Ok(())
}

pub fn wide_window_is_full_history(t: &Trajectory, extra: usize) -> Result<(), TestCaseError> {
    let searches = t.search_calls();
    let full = rendered(t, &CompositionConfig::new(Transformation::PriorQueriesReasonings))?;
    prop_assert_eq!(
        &rendered(t, &CompositionConfig::window(Window::Turns(searches + extra)))?,
        &full
    );
    prop_assert_eq!(&rendered(t, &CompositionConfig::window(Window::All))?, &full);
    Ok(())
}

pub fn docs_variant_fits_budget(t: &Trajectory, slack: usize) -> Result<(), TestCaseError> {
    let tok = Tokenizer::Whitespace;
    let last = t.turns.last().and_then(|x| x.action.query()).unwrap_or_default();
    // the smallest body the variant can produce: header and current query only
    let floor = tok.count(&format!("Browsing History:\n\nCurrent Query: {last}"));
    let budget = floor + slack;
    let c = compose(
        &t.turns,
        &CompositionConfig::new(Transformation::PriorQueriesReasoningsDocs).with_budget(budget),
    )
    .map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(
        tok.count(&c.body) <= budget,
        "body of {} tokens over budget {}",
        tok.count(&c.body),
        budget
    );
    Ok(())
}

pub fn all() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(trajectory(), 0usize..10, 0usize..400), |(t, extra, slack)| {
            window_one_is_current_reasoning(&t)?;
            wide_window_is_full_history(&t, extra)?;
            docs_variant_fits_budget(&t, slack)
        })
        .map_err(|e| e.to_string())
}
