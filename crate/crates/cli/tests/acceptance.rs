//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use serde_json::Value;
use support::{ensure, Check, NamedCheck};

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deepretrieve"))
        .args(args)
        .env_remove("DEEPRETRIEVE_CONFIG")
        .output()
        .map_err(|e| format!("cannot run deepretrieve: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "deepretrieve {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn data_lines(path: &Path) -> Result<Vec<Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<Value>(l).map_err(|e| format!("{}: {e}", path.display())))
        .filter(|v| !matches!(v, Ok(v) if v.get("_provenance").is_some()))
        .collect()
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (corpus, qa, index) = (p("corpus.jsonl"), p("qa.jsonl"), p("index"));
    cli(&[
        "--deterministic",
        "fixtures",
        "--out",
        &p(""),
        "--docs",
        "200",
        "--qa",
        "10",
    ])?;
    cli(&["ingest", "--corpus", &corpus, "--qa", &qa])?;
    cli(&["index", "--corpus", &corpus, "--out", &index])?;
    cli(&[
        "--deterministic",
        "rollout",
        "--corpus",
        &corpus,
        "--qa",
        &qa,
        "--index",
        &index,
        "--out",
        &p("rollout.jsonl"),
    ])?;
    cli(&[
        "--deterministic",
        "synth",
        "--corpus",
        &corpus,
        "--qa",
        &qa,
        "--index",
        &index,
        "--out",
        &p("train.jsonl"),
        "--trajectories",
        &p("synth_rollouts.jsonl"),
    ])?;
    let table = cli(&[
        "eval",
        "--trajectories",
        &p("rollout.jsonl"),
        "--qa",
        &qa,
        "--out",
        &p("eval.json"),
    ])?;
    cli(&[
        "--deterministic",
        "analyze",
        "--trajectories",
        &p("rollout.jsonl"),
        "--qa",
        &qa,
        "--corpus",
        &corpus,
        "--out",
        &p("analysis.json"),
    ])?;

    let rollouts = data_lines(Path::new(&p("rollout.jsonl")))?;
    ensure!(rollouts.len() == 10, "{} trajectories", rollouts.len());
    ensure!(
        table.contains("Accuracy") && table.contains("Recall"),
        "eval table: {table}"
    );
    let report: Value = serde_json::from_str(&std::fs::read_to_string(p("eval.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let recall = report
        .pointer("/report/recall")
        .or_else(|| report.get("recall"))
        .and_then(Value::as_f64);
    ensure!(
        recall.is_some_and(|r| (0.0..=1.0).contains(&r)),
        "eval report recall {recall:?}"
    );
    let dataset = data_lines(Path::new(&p("train.jsonl")))?;
    ensure!(!dataset.is_empty(), "no training instances");
    for row in &dataset {
        ensure!(
            row["negatives"].as_array().is_some_and(|n| n.len() == 7),
            "instance without 7 negatives: {row}"
        );
    }
    ensure!(
        Path::new(&format!("{}.stats.json", p("train.jsonl"))).is_file(),
        "missing stats sidecar"
    );
    ensure!(Path::new(&p("analysis.json")).is_file(), "missing analysis output");
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(300), "took {took:?}");
    Ok(())
}

fn main() {
    let criteria: &[NamedCheck] = &[
        ("contrastive math", support::loss::all),
        ("index oracle equivalence", support::bm25_oracle::all),
        ("prompt golden suite", support::goldens::all),
        (
            "DR-Synth pipeline determinism",
            support::synth_trace::pipeline_is_deterministic,
        ),
        ("composer algebra", support::composer_algebra::all),
        ("metrics", metrics),
        ("parse_ranking", support::ranking::all),
        ("end-to-end offline smoke", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS {name} ({ms} ms)"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms): {e}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn metrics() -> Check {
    use deepretrieve::model::Trajectory;
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestCaseError, TestRunner};

    support::metrics::scripted_run()?;
    let ids = || prop::collection::vec("(e[0-4]|x[0-9])", 0..5);
    let mut runner = TestRunner::new(Config {
        cases: 256,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(
            &(prop::collection::vec(ids(), 0..8), ids(), 0usize..10),
            |(turns, inserted, at)| {
                let evidence: Vec<String> = (0..5).map(|i| format!("e{i}")).collect();
                let mut t = Trajectory::new("qa", "a", "r");
                t.turns = turns.iter().map(|f| support::metrics::search_turn(f)).collect();
                support::metrics::recall_is_monotone(&t, at, support::metrics::search_turn(&inserted), &evidence)
                    .map_err(TestCaseError::fail)
            },
        )
        .map_err(|e| e.to_string())
}
