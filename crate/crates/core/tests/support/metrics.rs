use std::collections::HashMap;

use deepretrieve::agent::{run_all, AgentConfig, SearchTool, ToolError};
use deepretrieve::backends::stub::{answer_reply, search_reply};
use deepretrieve::backends::ScriptedChat;
use deepretrieve::eval::{aggregate, recall, zero_recall_stats, ExactMatchJudge};
use deepretrieve::model::{Action, Corpus, Document, QaExample, RetrievalResult, Turn};

use super::{ensure, Check};

/// Fixed results per query string.
struct TableTool {
    corpus: Corpus,
    table: HashMap<String, Vec<String>>,
}

impl SearchTool for TableTool {
    fn search(&self, _qa: &QaExample, history: &[Turn]) -> Result<Vec<RetrievalResult>, ToolError> {
        let q = history.last().and_then(|t| t.action.query()).unwrap_or_default();
        Ok(self
            .table
            .get(q)
            .map(|ids| {
                ids.iter()
                    .map(|id| RetrievalResult {
                        doc_id: id.clone(),
                        score: 1.0,
                        snippet: id.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default())
    }

    fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    fn tag(&self) -> String {
        "table".into()
    }
}

/// Example `i`: the result lists of its searches (evidence is `e{i}a`,
/// `e{i}b`) and its final answer. `None` means the gold answer.
fn plan(i: usize) -> (Vec<Vec<&'static str>>, Option<&'static str>) {
    match i {
        0 => (vec![vec!["a", "x"], vec!["b"]], None),
        1 => (vec![vec!["a"]], None),
        2 => (vec![vec!["x"], vec![], vec!["y"]], Some("wrong")),
        3 => (vec![vec!["b", "a"]], Some("  GOLD   three ")),
        4 => (vec![vec![], vec!["x"], vec!["b"], vec![]], Some("wrong")),
        5 => (vec![vec!["x"], vec!["y"]], Some("wrong")),
        6 => (vec![], None),
        7 => (vec![vec!["a"], vec!["b", "a"]], None),
        8 => (vec![vec!["a"]], Some("gold eight and more")),
        9 => (vec![vec!["a"], vec!["a"], vec!["x"], vec![], vec!["a"]], None),
        _ => unreachable!(),
    }
}

fn gold(i: usize) -> String {
    [
        "gold zero",
        "gold one",
        "gold two",
        "gold three",
        "gold four",
        "gold five",
        "gold six",
        "gold seven",
        "gold eight",
        "gold nine",
    ][i]
        .into()
}

pub fn scripted_run() -> Check {
    let mut docs = vec![Document::new("x", "x"), Document::new("y", "y")];
    let mut table = HashMap::new();
    let mut agent = ScriptedChat::default();
    let mut qas = Vec::new();
    for i in 0..10 {
        docs.push(Document::new(format!("e{i}a"), "a"));
        docs.push(Document::new(format!("e{i}b"), "b"));
        let question = format!("Question number {i}?");
        let (searches, answer) = plan(i);
        let mut replies = Vec::new();
        for (j, ids) in searches.iter().enumerate() {
            let q = format!("q{i}-{j}");
            let resolved = ids
                .iter()
                .map(|s| {
                    if s.len() == 1 && "ab".contains(*s) {
                        format!("e{i}{s}")
                    } else {
                        s.to_string()
                    }
                })
                .collect();
            table.insert(q.clone(), resolved);
            replies.push(search_reply("Looking.", &q));
        }
        replies.push(answer_reply(
            "Done.",
            answer.map(str::to_string).unwrap_or_else(|| gold(i)).as_str(),
        ));
        agent = agent.with_script(question.clone(), replies);
        qas.push(QaExample {
            id: format!("qa-{i}"),
            question,
            answer: gold(i),
            evidence: vec![format!("e{i}a"), format!("e{i}b")],
        });
    }
    let tool = TableTool {
        corpus: Corpus::new(docs),
        table,
    };
    let trajectories = run_all(&qas, &agent, &tool, &AgentConfig::default(), 3);
    let report = aggregate(&trajectories, &qas, &ExactMatchJudge).map_err(|e| e.to_string())?;

    // correct: 0, 1, 3, 6, 7, 9
    ensure!(report.accuracy == 0.6, "accuracy {}", report.accuracy);
    // recall: 1, .5, 0, 1, .5, 0, 0, 1, .5, .5 -> 5 / 10
    ensure!(report.recall == 0.5, "recall {}", report.recall);
    // searches: 2 + 1 + 3 + 1 + 4 + 2 + 0 + 2 + 1 + 5 = 21
    ensure!(
        report.mean_search_calls == 2.1,
        "search calls {}",
        report.mean_search_calls
    );
    // zero recall: examples 2, 5, 6 with 3, 2 and 0 searches
    ensure!(
        report.zero_recall_rate == 0.3,
        "zero-recall rate {}",
        report.zero_recall_rate
    );
    ensure!(
        report.mean_search_calls_given_zero_recall == 5.0 / 3.0,
        "searches given zero recall {}",
        report.mean_search_calls_given_zero_recall
    );
    ensure!(
        report.judged == 10 && report.unjudged == 0,
        "judged {} unjudged {}",
        report.judged,
        report.unjudged
    );
    let per: Vec<f64> = report.per_example.iter().map(|r| r.recall).collect();
    ensure!(
        per == [1.0, 0.5, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0, 0.5, 0.5],
        "per-example recall {per:?}"
    );
    let zr = zero_recall_stats(&report.per_example);
    ensure!(zr.rate == 0.3, "zero_recall_stats rate {}", zr.rate);
    Ok(())
}

/// Recall never drops when a turn is inserted anywhere in the trajectory.
pub fn recall_is_monotone(
    traj: &deepretrieve::model::Trajectory,
    insert_at: usize,
    turn: Turn,
    evidence: &[String],
) -> Check {
    let before = recall(traj, evidence).map_err(|e| e.to_string())?;
    let mut longer = traj.clone();
    let at = insert_at.min(longer.turns.len());
    longer.turns.insert(at, turn);
    for (i, t) in longer.turns.iter_mut().enumerate() {
        t.index = i + 1;
    }
    let after = recall(&longer, evidence).map_err(|e| e.to_string())?;
    ensure!(after >= before, "recall fell from {before} to {after}");
    Ok(())
}

pub fn search_turn(ids: &[String]) -> Turn {
    Turn {
        index: 0,
        reasoning: "r".into(),
        action: Action::Search { query: "q".into() },
        observation: Some(deepretrieve::model::Observation::Results(
            ids.iter()
                .map(|id| RetrievalResult {
                    doc_id: id.clone(),
                    score: 0.0,
                    snippet: String::new(),
                })
                .collect(),
        )),
    }
}
