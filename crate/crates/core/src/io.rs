//! Newline-delimited JSON readers and writers for corpus, QA and trajectory
//! files.
//!
//! Output files may start with a provenance header line of the form
//! `{"_provenance": {...}}`; readers skip it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::model::{Corpus, Document, QaExample, Trajectory};

pub const PROVENANCE_KEY: &str = "_provenance";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_provenance(line: &str) -> bool {
    line.trim_start().starts_with("{\"_provenance\"")
}

/// Reads every non-blank, non-header line of `path` as a `T`.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() || is_provenance(&line) {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|source| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Writes one JSON object per line, preceded by an optional provenance header.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    items: &[T],
    provenance: Option<&serde_json::Value>,
) -> Result<usize, IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    if let Some(p) = provenance {
        let header = serde_json::json!({ PROVENANCE_KEY: p });
        writeln!(w, "{header}").map_err(io_err(path))?;
    }
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| IoError::Parse {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(items.len())
}

pub fn read_corpus(path: &Path) -> Result<Corpus, IoError> {
    read_jsonl::<Document>(path).map(Corpus::new)
}

pub fn read_qa(path: &Path) -> Result<Vec<QaExample>, IoError> {
    read_jsonl(path)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, IoError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, Observation, RetrievalResult};

    #[test]
    fn trajectory_file_round_trips_and_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut t = Trajectory::new("q1", "stub", "bm25");
        t.push(
            "think".into(),
            Action::Search { query: "x y".into() },
            Some(Observation::Results(vec![RetrievalResult {
                doc_id: "d1".into(),
                score: 1.5,
                snippet: "x".into(),
            }])),
        );
        t.push("done".into(), Action::Answer { text: "a".into() }, None);
        let header = serde_json::json!({"seed": 1});
        write_jsonl(&path, &[t.clone()], Some(&header)).unwrap();
        let back = read_trajectories(&path).unwrap();
        assert_eq!(back, vec![t]);
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n").unwrap();
        match read_corpus(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
