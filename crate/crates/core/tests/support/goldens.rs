use std::path::PathBuf;

use deepretrieve::analysis::{assign_prompt, claims_prompt, decompose_prompt, hops_prompt};
use deepretrieve::backends::{Message, Role};
use deepretrieve::model::{Action, Observation, QaExample, RetrievalResult, Trajectory, Transformation};
use deepretrieve::synth::oracle_prompt;
use deepretrieve::templates::Templates;
use deepretrieve::{compose, render_retrieval_prompt, CompositionConfig};

use super::{ensure, Check, NamedCheck};

fn fixture(name: &str) -> String {
    let path: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "core",
        "tests",
        "fixtures",
        "prompts",
        name,
    ]
    .iter()
    .collect();
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.strip_suffix('\n').unwrap_or(&text).to_string()
}

fn same(name: &str, got: &str) -> Check {
    let want = fixture(name);
    if got == want {
        return Ok(());
    }
    let at = got.bytes().zip(want.bytes()).take_while(|(a, b)| a == b).count();
    Err(format!(
        "{name}: differs at byte {at}: got {:?}, want {:?}",
        &got[at.saturating_sub(20)..(at + 40).min(got.len())],
        &want[at.saturating_sub(20)..(at + 40).min(want.len())]
    ))
}

fn pair(prefix: &str, messages: &[Message]) -> Check {
    ensure!(messages.len() == 2, "{prefix}: {} messages", messages.len());
    ensure!(
        messages[0].role == Role::System && messages[1].role == Role::User,
        "{prefix}: roles"
    );
    same(&format!("{prefix}.system.txt"), &messages[0].content)?;
    same(&format!("{prefix}.user.txt"), &messages[1].content)
}

fn single(name: &str, messages: &[Message]) -> Check {
    ensure!(
        messages.len() == 1 && messages[0].role == Role::User,
        "{name}: expected one user message"
    );
    same(name, &messages[0].content)
}

fn results(snippets: &[&str]) -> Observation {
    Observation::Results(
        snippets
            .iter()
            .enumerate()
            .map(|(i, s)| RetrievalResult {
                doc_id: format!("d{i}"),
                score: 1.0,
                snippet: s.to_string(),
            })
            .collect(),
    )
}

fn three_turns() -> Trajectory {
    let mut t = Trajectory::new("qa", "agent", "bm25");
    t.push(
        "First I look for the award.".into(),
        Action::Search {
            query: "grammy winning composer".into(),
        },
        Some(results(&["Grammy awards list.", "Composer biography."])),
    );
    t.push(
        "The country may be Sweden.".into(),
        Action::Search {
            query: "eu member since 1995 dj".into(),
        },
        Some(results(&["Swedish house music."])),
    );
    t.push(
        "Now the studio.".into(),
        Action::Search {
            query: "backroom studio early 2010s euphoric".into(),
        },
        Some(results(&[])),
    );
    t
}

fn composed(t: Transformation) -> Result<String, String> {
    let c = compose(&three_turns().turns, &CompositionConfig::new(t)).map_err(|e| e.to_string())?;
    Ok(render_retrieval_prompt(&c))
}

pub fn main_prompt() -> Check {
    let mut t = Trajectory::new("qa", "agent", "bm25");
    t.push(
        "The award is the Grammy, so the composer worked in a small studio.".into(),
        Action::Search {
            query: "backroom studio early 2010s euphoric".into(),
        },
        Some(results(&[])),
    );
    let c = compose(&t.turns, &CompositionConfig::new(Transformation::CurrentReasoning)).map_err(|e| e.to_string())?;
    same("main.txt", &render_retrieval_prompt(&c))
}

pub fn oracle_rerank() -> Check {
    let texts = vec!["First passage text.".to_string(), "Second passage text.".to_string()];
    let m = oracle_prompt(
        &texts,
        "backroom studio early 2010s euphoric",
        "Which composer recorded in a backroom studio",
        "Otto Knows",
        &Templates::builtin(),
    )
    .map_err(|e| e.to_string())?;
    pair("oracle_rerank", &m)
}

pub fn prior_queries() -> Check {
    same("prior_queries.txt", &composed(Transformation::PriorQueries)?)
}

pub fn queries_reasonings() -> Check {
    same(
        "queries_reasonings.txt",
        &composed(Transformation::PriorQueriesReasonings)?,
    )
}

pub fn all_history() -> Check {
    same("all.txt", &composed(Transformation::PriorQueriesReasoningsDocs)?)
}

pub fn atomic_clues() -> Check {
    let tpl = Templates::builtin();
    let reasonings = vec![
        "The award is the Grammy.".to_string(),
        "The country is Sweden.".to_string(),
    ];
    single(
        "atomic_clues.txt",
        &decompose_prompt(&tpl, &reasonings).map_err(|e| e.to_string())?,
    )?;
    let clues = vec![
        "The award is the Grammy".to_string(),
        "The country is Sweden".to_string(),
    ];
    single(
        "atomic_clues_assignment.txt",
        &assign_prompt(&tpl, "The artist is Otto Knows from Sweden.", &clues).map_err(|e| e.to_string())?,
    )
}

fn noise_qa() -> QaExample {
    QaExample {
        id: "qa".into(),
        question: "Who founded the label?".into(),
        answer: "Otto Knows".into(),
        evidence: vec!["e1".into(), "e2".into()],
    }
}

pub fn noise_steps() -> Check {
    let tpl = Templates::builtin();
    let evidence = vec!["Evidence one.".to_string(), "Evidence two.".to_string()];
    pair(
        "noise_step1",
        &hops_prompt(&tpl, &noise_qa(), &evidence).map_err(|e| e.to_string())?,
    )?;
    let hops = vec!["The label is Backroom".to_string(), "Otto Knows".to_string()];
    pair(
        "noise_step2",
        &claims_prompt(&tpl, &noise_qa(), &hops, "Maybe it was Jesper Kyd.").map_err(|e| e.to_string())?,
    )
}

pub const ALL: &[NamedCheck] = &[
    ("main", main_prompt),
    ("oracle_rerank", oracle_rerank),
    ("prior_queries", prior_queries),
    ("queries_reasonings", queries_reasonings),
    ("all", all_history),
    ("atomic_clues", atomic_clues),
    ("noise_step1_2", noise_steps),
];

pub fn all() -> Check {
    for (name, f) in ALL {
        f().map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(())
}
