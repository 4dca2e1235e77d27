//! Run metrics: evidence recall over search observations, judged accuracy,
//! tool-call counts and the zero-recall diagnostics.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{ChatBackend, ChatRequest, Decoding, Message};
use crate::model::{EvalReport, EvalRow, Observation, QaExample, Trajectory};
use crate::templates::Templates;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("example {0} has no evidence documents")]
    EmptyEvidence(String),
    #[error("no trajectories to evaluate")]
    EmptyRun,
    #[error("trajectory refers to unknown example {0}")]
    UnknownExample(String),
}

/// Fraction of `evidence` that appeared in any search observation.
pub fn recall(trajectory: &Trajectory, evidence: &[String]) -> Result<f64, EvalError> {
    let gold: BTreeSet<&str> = evidence.iter().map(String::as_str).collect();
    if gold.is_empty() {
        return Err(EvalError::EmptyEvidence(trajectory.qa_id.clone()));
    }
    let found: BTreeSet<&str> = trajectory
        .turns
        .iter()
        .filter(|t| t.action.is_search())
        .filter_map(|t| match &t.observation {
            Some(Observation::Results(r)) => Some(r),
            _ => None,
        })
        .flatten()
        .map(|r| r.doc_id.as_str())
        .filter(|id| gold.contains(id))
        .collect();
    Ok(found.len() as f64 / gold.len() as f64)
}

/// Trim, casefold and collapse internal whitespace.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgeError {
    #[error("judge unavailable: {0}")]
    Unavailable(String),
}

pub trait Judge: Send + Sync {
    /// Whether `prediction` answers `qa`. A missing prediction is wrong.
    fn judge(&self, prediction: Option<&str>, qa: &QaExample) -> Result<bool, JudgeError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl Judge for ExactMatchJudge {
    fn judge(&self, prediction: Option<&str>, qa: &QaExample) -> Result<bool, JudgeError> {
        Ok(prediction.is_some_and(|p| normalize_answer(p) == normalize_answer(&qa.answer)))
    }
}

/// Renders the judge prompt and reads a CORRECT/INCORRECT verdict.
pub struct LlmJudge {
    pub backend: Arc<dyn ChatBackend>,
    pub templates: Arc<Templates>,
}

impl LlmJudge {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            templates: Templates::builtin(),
        }
    }

    pub fn with_templates(mut self, templates: Arc<Templates>) -> Self {
        self.templates = templates;
        self
    }

    pub fn prompt(&self, prediction: &str, qa: &QaExample) -> Result<String, crate::templates::TemplateError> {
        self.templates.render(
            "analysis/judge",
            &[
                ("question", &qa.question),
                ("response", prediction),
                ("correct_answer", &qa.answer),
            ],
        )
    }
}

/// First CORRECT or INCORRECT token in `text`.
pub fn parse_verdict(text: &str) -> Option<bool> {
    let re = Regex::new(r"\b(INCORRECT|CORRECT)\b").expect("static regex");
    re.captures(text).map(|c| &c[1] == "CORRECT")
}

impl Judge for LlmJudge {
    fn judge(&self, prediction: Option<&str>, qa: &QaExample) -> Result<bool, JudgeError> {
        let Some(p) = prediction else { return Ok(false) };
        let prompt = self.prompt(p, qa).map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        let reply = self
            .backend
            .chat(&ChatRequest::new(vec![Message::user(prompt)], Decoding::greedy()))
            .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        parse_verdict(&reply.content)
            .ok_or_else(|| JudgeError::Unavailable(format!("no verdict in {:?}", reply.content)))
    }
}

pub fn judge_accuracy(final_answer: Option<&str>, qa: &QaExample, judge: &dyn Judge) -> Result<bool, JudgeError> {
    judge.judge(final_answer, qa)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroRecallStats {
    pub rate: f64,
    pub mean_searches_given_zero: f64,
}

pub fn zero_recall_stats(rows: &[EvalRow]) -> ZeroRecallStats {
    let zero: Vec<&EvalRow> = rows.iter().filter(|r| r.recall == 0.0).collect();
    ZeroRecallStats {
        rate: if rows.is_empty() {
            0.0
        } else {
            zero.len() as f64 / rows.len() as f64
        },
        mean_searches_given_zero: mean(zero.iter().map(|r| r.search_calls as f64)),
    }
}

/// Scores every trajectory. Unjudged rows count everywhere except the
/// accuracy denominator.
pub fn aggregate(trajectories: &[Trajectory], qas: &[QaExample], judge: &dyn Judge) -> Result<EvalReport, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let by_id: HashMap<&str, &QaExample> = qas.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut rows = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let qa = by_id
            .get(t.qa_id.as_str())
            .ok_or_else(|| EvalError::UnknownExample(t.qa_id.clone()))?;
        let correct = match judge.judge(t.final_answer.as_deref(), qa) {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("{}: {e}", qa.id);
                None
            }
        };
        rows.push(EvalRow {
            qa_id: t.qa_id.clone(),
            correct,
            recall: recall(t, &qa.evidence)?,
            search_calls: t.search_calls(),
            visit_calls: t.visit_calls(),
        });
    }
    Ok(report_from_rows(rows))
}

pub fn report_from_rows(rows: Vec<EvalRow>) -> EvalReport {
    let judged: Vec<bool> = rows.iter().filter_map(|r| r.correct).collect();
    let zr = zero_recall_stats(&rows);
    EvalReport {
        accuracy: mean(judged.iter().map(|&c| if c { 1.0 } else { 0.0 })),
        recall: mean(rows.iter().map(|r| r.recall)),
        mean_search_calls: mean(rows.iter().map(|r| r.search_calls as f64)),
        mean_visit_calls: mean(rows.iter().map(|r| r.visit_calls as f64)),
        zero_recall_rate: zr.rate,
        mean_search_calls_given_zero_recall: zr.mean_searches_given_zero,
        judged: judged.len(),
        unjudged: rows.len() - judged.len(),
        visit_enabled: rows.iter().any(|r| r.visit_calls > 0),
        per_example: rows,
    }
}

/// Aligned text table. Accuracy and recall are percentages.
pub fn render_table(reports: &[(String, EvalReport)]) -> String {
    let any_visit = reports.iter().any(|(_, r)| r.visit_enabled);
    let header = [
        "Configuration",
        "Accuracy",
        "Recall",
        if any_visit {
            "Search (+Visit) Calls"
        } else {
            "Search Calls"
        },
    ];
    let mut rows: Vec<[String; 4]> = vec![header.map(str::to_string)];
    for (name, r) in reports {
        let calls = if r.visit_enabled {
            format!("{:.2} + {:.2}", r.mean_search_calls, r.mean_visit_calls)
        } else {
            format!("{:.2}", r.mean_search_calls)
        };
        rows.push([
            name.clone(),
            format!("{:.2}", r.accuracy * 100.0),
            format!("{:.2}", r.recall * 100.0),
            calls,
        ]);
    }
    let widths: Vec<usize> = (0..4)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    out
}
