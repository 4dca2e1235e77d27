//! Trajectory analyses: how much of the clue content of a history the most
//! recent `k` reasonings already cover, and how many correct versus
//! incorrect claims those reasonings carry.
//!
//! Both analyses annotate the reasoning of each search turn with an LLM.
//! Results can be cached in a JSONL file so long runs resume.

use std::collections::{BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backends::{BackendError, ChatBackend, ChatRequest, Decoding, Message};
use crate::model::{QaExample, Trajectory, Window};
use crate::templates::{TemplateError, Templates};

/// History sizes reported by the analyses.
pub const WINDOWS: [Window; 6] = [
    Window::Turns(1),
    Window::Turns(2),
    Window::Turns(5),
    Window::Turns(9),
    Window::Turns(17),
    Window::All,
];

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("could not read a list from {0:?}")]
    UnparseableList(String),
    #[error("could not read the expected JSON object from {0:?}")]
    UnparseableJson(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{0}")]
    Precondition(String),
    #[error("annotation cache: {0}")]
    Cache(#[from] std::io::Error),
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

fn outer(text: &str, open: char, close: char) -> Option<&str> {
    let s = text.find(open)?;
    let e = text.rfind(close)?;
    (e > s).then(|| &text[s..=e])
}

/// Reads a Python-style literal list: single- or double-quoted strings and
/// bare numbers separated by commas.
fn python_list(src: &str) -> Option<Vec<Value>> {
    let inner = src.trim().strip_prefix('[')?.strip_suffix(']')?;
    let mut out = Vec::new();
    let mut chars = inner.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let Some(&c) = chars.peek() else { break };
        if c == '\'' || c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next()? {
                    '\\' => match chars.next()? {
                        'n' => s.push('\n'),
                        't' => s.push('\t'),
                        other => s.push(other),
                    },
                    ch if ch == c => break,
                    ch => s.push(ch),
                }
            }
            out.push(Value::String(s));
        } else {
            let mut tok = String::new();
            while chars.peek().is_some_and(|&ch| ch != ',') {
                tok.push(chars.next()?);
            }
            out.push(serde_json::from_str(tok.trim()).ok()?);
        }
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        match chars.next() {
            Some(',') | None => {}
            Some(_) => return None,
        }
    }
    Some(out)
}

fn list_values(text: &str) -> Result<Vec<Value>, AnalysisError> {
    let body = strip_fences(text);
    let bad = || AnalysisError::UnparseableList(text.to_string());
    let src = outer(body, '[', ']').ok_or_else(bad)?;
    if let Ok(Value::Array(v)) = serde_json::from_str::<Value>(src) {
        return Ok(v);
    }
    python_list(src).ok_or_else(bad)
}

/// A list of strings from model output, tolerating code fences and either quote style.
pub fn parse_string_list(text: &str) -> Result<Vec<String>, AnalysisError> {
    list_values(text)?
        .into_iter()
        .map(|v| match v {
            Value::String(s) => Ok(s),
            _ => Err(AnalysisError::UnparseableList(text.to_string())),
        })
        .collect()
}

/// A list of integers from model output.
pub fn parse_int_list(text: &str) -> Result<Vec<i64>, AnalysisError> {
    list_values(text)?
        .into_iter()
        .map(|v| match &v {
            Value::Number(n) => n.as_i64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        })
        .map(|o| o.ok_or_else(|| AnalysisError::UnparseableList(text.to_string())))
        .collect()
}

/// The outermost JSON object in model output.
pub fn parse_json_object(text: &str) -> Result<serde_json::Map<String, Value>, AnalysisError> {
    let body = strip_fences(text);
    let bad = || AnalysisError::UnparseableJson(text.to_string());
    match serde_json::from_str::<Value>(outer(body, '{', '}').ok_or_else(bad)?) {
        Ok(Value::Object(m)) => Ok(m),
        _ => Err(bad()),
    }
}

fn string_array(m: &serde_json::Map<String, Value>, key: &str, raw: &str) -> Result<Vec<String>, AnalysisError> {
    let bad = || AnalysisError::UnparseableJson(raw.to_string());
    m.get(key)
        .and_then(Value::as_array)
        .ok_or_else(bad)?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(bad))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueSet {
    pub clues: Vec<String>,
    /// Clue ordinals (1-based) mentioned by each search turn, in turn order.
    pub per_turn_assignments: Vec<BTreeSet<usize>>,
}

impl ClueSet {
    pub fn check(&self) -> Result<(), String> {
        for (t, a) in self.per_turn_assignments.iter().enumerate() {
            if let Some(bad) = a.iter().find(|&&c| c == 0 || c > self.clues.len()) {
                return Err(format!("turn {} references clue {bad} of {}", t + 1, self.clues.len()));
            }
        }
        Ok(())
    }

    /// Share of the clues seen in turns `1..=t` that the last `k` of them cover.
    pub fn coverage_ratio(&self, k: Window, t: usize) -> f64 {
        let t = t.min(self.per_turn_assignments.len());
        if t == 0 {
            return 1.0;
        }
        let union = |from: usize| -> BTreeSet<usize> {
            self.per_turn_assignments[from - 1..t]
                .iter()
                .flatten()
                .copied()
                .collect()
        };
        let all = union(1);
        if all.is_empty() {
            return 1.0;
        }
        union(k.start(t)).len() as f64 / all.len() as f64
    }

    /// Coverage averaged over every turn of the trajectory.
    pub fn mean_coverage(&self, k: Window) -> f64 {
        let n = self.per_turn_assignments.len();
        if n == 0 {
            return 1.0;
        }
        (1..=n).map(|t| self.coverage_ratio(k, t)).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimAnnotation {
    pub turn: usize,
    pub correct_claims: Vec<String>,
    pub incorrect_claims: Vec<String>,
}

/// Correct and incorrect claim totals over the last `k` of turns `1..=t`.
/// `annotations` are in turn order, one per search turn.
pub fn claim_counts(annotations: &[ClaimAnnotation], k: Window, t: usize) -> (usize, usize) {
    let t = t.min(annotations.len());
    if t == 0 {
        return (0, 0);
    }
    annotations[k.start(t) - 1..t].iter().fold((0, 0), |(c, i), a| {
        (c + a.correct_claims.len(), i + a.incorrect_claims.len())
    })
}

/// Claim totals averaged over every turn of the trajectory.
pub fn mean_claim_counts(annotations: &[ClaimAnnotation], k: Window) -> (f64, f64) {
    let n = annotations.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let (c, i) = (1..=n).fold((0, 0), |(c, i), t| {
        let (a, b) = claim_counts(annotations, k, t);
        (c + a, i + b)
    });
    (c as f64 / n as f64, i as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    value: Value,
}

/// Append-only JSONL store of annotation responses keyed by
/// `<trajectory>/<step>`.
#[derive(Debug)]
pub struct AnnotationCache {
    path: PathBuf,
    entries: HashMap<String, Value>,
}

impl AnnotationCache {
    pub fn open(path: &Path) -> Result<Self, AnalysisError> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in std::fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(e) => {
                        entries.insert(e.key, e.value);
                    }
                    Err(e) => log::warn!("skipping corrupt cache line in {}: {e}", path.display()),
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn put(&mut self, key: String, value: Value) -> Result<(), AnalysisError> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let line = serde_json::to_string(&CacheEntry {
            key: key.clone(),
            value: value.clone(),
        })
        .expect("cache entries serialize");
        writeln!(f, "{line}")?;
        self.entries.insert(key, value);
        Ok(())
    }
}

/// Renders the analysis prompts and parses the replies.
pub struct Annotator {
    pub llm: Arc<dyn ChatBackend>,
    pub templates: Arc<Templates>,
    pub decoding: Decoding,
    pub cache: Option<Mutex<AnnotationCache>>,
}

pub fn clues_list(clues: &[String]) -> String {
    clues
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn decompose_prompt(templates: &Templates, reasonings: &[String]) -> Result<Vec<Message>, TemplateError> {
    Ok(vec![Message::user(templates.render(
        "analysis/clues_decompose",
        &[("all_reasonings", &reasonings.join("\n---\n"))],
    )?)])
}

pub fn assign_prompt(templates: &Templates, reasoning: &str, clues: &[String]) -> Result<Vec<Message>, TemplateError> {
    Ok(vec![Message::user(templates.render(
        "analysis/clues_assign",
        &[("reasoning", reasoning), ("clues_list", &clues_list(clues))],
    )?)])
}

pub fn hops_prompt(templates: &Templates, qa: &QaExample, evidence: &[String]) -> Result<Vec<Message>, TemplateError> {
    Ok(vec![
        Message::system(templates.render("analysis/hops_system", &[])?),
        Message::user(templates.render(
            "analysis/hops_user",
            &[
                ("query", &qa.question),
                ("answer", &qa.answer),
                ("evidence", &evidence.join("\n\n")),
            ],
        )?),
    ])
}

pub fn claims_prompt(
    templates: &Templates,
    qa: &QaExample,
    hop_answers: &[String],
    reasoning: &str,
) -> Result<Vec<Message>, TemplateError> {
    let hops = serde_json::to_string(hop_answers).expect("strings serialize");
    Ok(vec![
        Message::system(templates.render("analysis/claims_system", &[])?),
        Message::user(templates.render(
            "analysis/claims_user",
            &[
                ("query", &qa.question),
                ("hops_answer_list", &hops),
                ("reasoning_text", reasoning),
            ],
        )?),
    ])
}

impl Annotator {
    pub fn new(llm: Arc<dyn ChatBackend>) -> Self {
        Self {
            llm,
            templates: Templates::builtin(),
            decoding: Decoding::greedy(),
            cache: None,
        }
    }

    pub fn with_templates(mut self, templates: Arc<Templates>) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_cache(mut self, cache: AnnotationCache) -> Self {
        self.cache = Some(Mutex::new(cache));
        self
    }

    fn call(&self, key: Option<String>, messages: Vec<Message>) -> Result<String, AnalysisError> {
        if let (Some(k), Some(c)) = (&key, &self.cache) {
            if let Some(Value::String(s)) = c.lock().get(k) {
                return Ok(s.clone());
            }
        }
        let reply = self.llm.chat(&ChatRequest::new(messages, self.decoding))?.content;
        if let (Some(k), Some(c)) = (key, &self.cache) {
            c.lock().put(k, Value::String(reply.clone()))?;
        }
        Ok(reply)
    }

    pub fn decompose_clues(&self, reasonings: &[String], key: Option<String>) -> Result<Vec<String>, AnalysisError> {
        if reasonings.is_empty() {
            return Err(AnalysisError::Precondition("no reasonings to decompose".into()));
        }
        parse_string_list(&self.call(key, decompose_prompt(&self.templates, reasonings)?)?)
    }

    /// Clue ordinals found in `reasoning`; out-of-range ordinals are dropped with a warning.
    pub fn assign_clues(
        &self,
        reasoning: &str,
        clues: &[String],
        key: Option<String>,
    ) -> Result<BTreeSet<usize>, AnalysisError> {
        if clues.is_empty() {
            return Err(AnalysisError::Precondition("no clues to assign".into()));
        }
        let raw = parse_int_list(&self.call(key, assign_prompt(&self.templates, reasoning, clues)?)?)?;
        let mut out = BTreeSet::new();
        for n in raw {
            if n >= 1 && (n as usize) <= clues.len() {
                out.insert(n as usize);
            } else {
                log::warn!("clue ordinal {n} outside 1..={}; dropped", clues.len());
            }
        }
        Ok(out)
    }

    pub fn extract_hop_answers(
        &self,
        qa: &QaExample,
        evidence: &[String],
        key: Option<String>,
    ) -> Result<Vec<String>, AnalysisError> {
        if evidence.is_empty() {
            return Err(AnalysisError::Precondition(format!("{} has no evidence text", qa.id)));
        }
        let reply = self.call(key, hops_prompt(&self.templates, qa, evidence)?)?;
        string_array(&parse_json_object(&reply)?, "multi_hop_answers", &reply)
    }

    pub fn classify_claims(
        &self,
        turn: usize,
        reasoning: &str,
        qa: &QaExample,
        hop_answers: &[String],
        key: Option<String>,
    ) -> Result<ClaimAnnotation, AnalysisError> {
        if hop_answers.is_empty() {
            return Err(AnalysisError::Precondition("no hop answers".into()));
        }
        let reply = self.call(key, claims_prompt(&self.templates, qa, hop_answers, reasoning)?)?;
        let obj = parse_json_object(&reply)?;
        let correct = string_array(&obj, "correct_claims", &reply)?;
        let incorrect = string_array(&obj, "incorrect_claims", &reply)?
            .into_iter()
            .filter(|c| !correct.contains(c))
            .collect();
        Ok(ClaimAnnotation {
            turn,
            correct_claims: correct,
            incorrect_claims: incorrect,
        })
    }

    /// Decomposes a trajectory's search reasonings and assigns clues per turn.
    pub fn clue_set(&self, trajectory: &Trajectory) -> Result<ClueSet, AnalysisError> {
        let id = trajectory_key(trajectory);
        let reasonings = search_reasonings(trajectory);
        let clues = self.decompose_clues(&reasonings, Some(format!("{id}/clues")))?;
        let per_turn = if clues.is_empty() {
            vec![BTreeSet::new(); reasonings.len()]
        } else {
            reasonings
                .iter()
                .enumerate()
                .map(|(i, r)| self.assign_clues(r, &clues, Some(format!("{id}/assign/{}", i + 1))))
                .collect::<Result<_, _>>()?
        };
        Ok(ClueSet {
            clues,
            per_turn_assignments: per_turn,
        })
    }

    /// Claim annotations for every search turn, in order.
    pub fn claim_annotations(
        &self,
        trajectory: &Trajectory,
        qa: &QaExample,
        evidence: &[String],
    ) -> Result<Vec<ClaimAnnotation>, AnalysisError> {
        let id = trajectory_key(trajectory);
        let hops = self.extract_hop_answers(qa, evidence, Some(format!("{id}/hops")))?;
        if hops.is_empty() {
            return Err(AnalysisError::UnparseableJson("empty multi_hop_answers".into()));
        }
        search_reasonings(trajectory)
            .iter()
            .enumerate()
            .map(|(i, r)| self.classify_claims(i + 1, r, qa, &hops, Some(format!("{id}/claims/{}", i + 1))))
            .collect()
    }
}

fn trajectory_key(t: &Trajectory) -> String {
    format!("{}|{}|{}", t.qa_id, t.agent_tag, t.retriever_tag)
}

/// Reasonings of the search turns, in order.
pub fn search_reasonings(t: &Trajectory) -> Vec<String> {
    t.turns
        .iter()
        .filter(|t| t.action.is_search())
        .map(|t| t.reasoning.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub k: Window,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimPoint {
    pub k: Window,
    pub correct: f64,
    pub incorrect: f64,
}

/// Mean coverage per window size, averaged over trajectories.
pub fn coverage_series(sets: &[ClueSet]) -> Vec<SeriesPoint> {
    let used: Vec<&ClueSet> = sets.iter().filter(|s| !s.per_turn_assignments.is_empty()).collect();
    WINDOWS
        .iter()
        .map(|&k| SeriesPoint {
            k,
            value: if used.is_empty() {
                0.0
            } else {
                used.iter().map(|s| s.mean_coverage(k)).sum::<f64>() / used.len() as f64
            },
        })
        .collect()
}

/// Mean claim totals per window size, averaged over trajectories.
pub fn claims_series(per_trajectory: &[Vec<ClaimAnnotation>]) -> Vec<ClaimPoint> {
    let used: Vec<&Vec<ClaimAnnotation>> = per_trajectory.iter().filter(|a| !a.is_empty()).collect();
    let n = used.len().max(1) as f64;
    WINDOWS
        .iter()
        .map(|&k| {
            let (c, i) = used.iter().fold((0.0, 0.0), |(c, i), a| {
                let (x, y) = mean_claim_counts(a, k);
                (c + x, i + y)
            });
            ClaimPoint {
                k,
                correct: c / n,
                incorrect: i / n,
            }
        })
        .collect()
}
