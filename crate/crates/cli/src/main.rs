mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use deepretrieve::agent::{run_all, AgentConfig, RetrieverBinding, Tools};
use deepretrieve::analysis::{claims_series, coverage_series, AnnotationCache, Annotator};
use deepretrieve::backends::{BackendError, Decoding};
use deepretrieve::composer::{compose, render_with};
use deepretrieve::contrastive::{check_parity, generate_parity, read_parity, write_parity};
use deepretrieve::eval::{aggregate, render_table, ExactMatchJudge, Judge, LlmJudge};
use deepretrieve::index::persist;
use deepretrieve::index::{build_bm25, build_dense, DenseRetriever, Retriever, SnippetConfig};
use deepretrieve::io::{read_corpus, read_qa, read_trajectories, write_jsonl};
use deepretrieve::model::{validate_corpus, validate_qa, Corpus, EvalReport, Transformation, Window};
use deepretrieve::synth::{
    export_dataset, rejection_filter, synthesize_all, ListwiseRetriever, RerankConfig, SynthConfig, SynthStats,
};
use deepretrieve::templates::Templates;
use deepretrieve::tokenize::Tokenizer;
use deepretrieve::CompositionConfig;
use serde_json::{json, Value};

use config::{build_chat, build_embedder, Config, JudgeMode, Recorders, RetrieverKind};

const EXIT_VALIDATION: u8 = 1;
const EXIT_BACKEND: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "deepretrieve", version, about = "Retrieval harness for deep research agents")]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true, env = "DEEPRETRIEVE_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for stub embedders and sampling.
    #[arg(long, global = true, env = "DEEPRETRIEVE_SEED")]
    seed: Option<u64>,
    /// Episode and annotation parallelism.
    #[arg(long, global = true, env = "DEEPRETRIEVE_WORKERS")]
    workers: Option<usize>,
    /// One worker, seeded decoding.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IndexKind {
    Bm25,
    Dense,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus and two-hop question set.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        docs: usize,
        #[arg(long, default_value_t = 10)]
        qa: usize,
    },
    /// Validate a corpus and optionally a question file.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        qa: Option<PathBuf>,
    },
    /// Build and save BM25 and/or dense indexes.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = IndexKind::Both)]
        kind: IndexKind,
    },
    /// Run agent episodes and write trajectories.
    Rollout {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_turns: Option<usize>,
        #[arg(long)]
        transformation: Option<Transformation>,
        #[arg(long)]
        window: Option<Window>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Synthesize contrastive training data with the oracle reranker.
    Synth {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Dataset path; statistics go to `<out>.stats.json`.
        #[arg(long)]
        out: PathBuf,
        /// Also write every synthesis rollout here.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score trajectories.
    Eval {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Clue coverage and claim counts over history windows.
    Analyze {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Print the retrieval prompt for one turn of a stored trajectory.
    Compose {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        qa_id: String,
        /// 1-based turn index; defaults to the last search turn.
        #[arg(long)]
        turn: Option<usize>,
        #[arg(long)]
        transformation: Option<Transformation>,
        #[arg(long)]
        window: Option<Window>,
        /// Question file, needed for the global-question variant.
        #[arg(long)]
        qa: Option<PathBuf>,
    },
    /// Recompute the losses in a parity file.
    LossCheck {
        #[arg(long)]
        parity: PathBuf,
        /// Write a fresh file with this many rows first.
        #[arg(long)]
        generate: Option<usize>,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Print a table from saved eval reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    match &cli.command {
        Some(Command::Rollout {
            max_turns,
            transformation,
            window,
            ..
        }) => {
            if let Some(m) = max_turns {
                cfg.agent.max_turns = *m;
            }
            if let Some(t) = transformation {
                cfg.composer.transformation = *t;
            }
            if let Some(w) = window {
                cfg.composer.window = Some(*w);
                if transformation.is_none() {
                    cfg.composer.transformation = Transformation::WindowK;
                }
            }
        }
        Some(Command::Compose {
            transformation, window, ..
        }) => {
            if let Some(t) = transformation {
                cfg.composer.transformation = *t;
            }
            if let Some(w) = window {
                cfg.composer.window = Some(*w);
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn provenance(cfg: &Config, cli_args: &[String]) -> Value {
    json!({
        "tool": "deepretrieve",
        "version": env!("CARGO_PKG_VERSION"),
        "argv": cli_args,
        "config": cfg,
    })
}

fn load_corpus(path: &Path) -> Result<Arc<Corpus>> {
    let corpus = read_corpus(path)?;
    let violations = validate_corpus(&corpus);
    if !violations.is_empty() {
        bail!(ValidationFailure(
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n")
        ));
    }
    Ok(Arc::new(corpus))
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug)]
struct ValidationFailure(String);

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "validation failed:\n{}", self.0)
    }
}

impl std::error::Error for ValidationFailure {}

fn tokenizer(cfg: &Config) -> Result<Tokenizer> {
    Ok(match &cfg.retriever.tokenizer_file {
        Some(p) => Tokenizer::from_vocabulary_file(p)?,
        None => Tokenizer::Whitespace,
    })
}

fn templates(cfg: &Config) -> Result<Arc<Templates>> {
    Ok(match &cfg.composer.templates_dir {
        Some(d) => Arc::new(Templates::with_overrides(d)?),
        None => Templates::builtin(),
    })
}

fn composition(cfg: &Config) -> Result<CompositionConfig> {
    let mut c = CompositionConfig::new(cfg.composer.transformation);
    c.window_k = cfg.composer.window;
    c.history_token_budget = cfg.composer.history_token_budget;
    c.tokenizer = tokenizer(cfg)?;
    c.templates = templates(cfg)?;
    Ok(c)
}

fn retriever(
    cfg: &Config,
    corpus: Arc<Corpus>,
    index: Option<&Path>,
    recorders: &mut Recorders,
) -> Result<Arc<dyn Retriever>> {
    let snippets = SnippetConfig {
        token_budget: cfg.retriever.snippet_tokens,
        tokenizer: tokenizer(cfg)?,
    };
    let base: Arc<dyn Retriever> = match cfg.retriever.kind {
        RetrieverKind::Bm25 => {
            let idx = match index {
                Some(dir) => persist::load_bm25(dir, corpus)?,
                None => build_bm25(corpus, cfg.retriever.bm25)?,
            };
            Arc::new(idx.with_snippets(snippets))
        }
        RetrieverKind::Dense => {
            let embedder = build_embedder(&cfg.backends.embedder, cfg.seed, recorders)?;
            let idx = match index {
                Some(dir) => {
                    let idx = persist::load_dense(dir, corpus)?;
                    if idx.embedder_name() != embedder.name() {
                        bail!(
                            "index at {} was built with embedder {}, configured embedder is {}",
                            dir.display(),
                            idx.embedder_name(),
                            embedder.name()
                        );
                    }
                    idx
                }
                None => build_dense(corpus, embedder.as_ref(), cfg.retriever.document_instruction.as_deref())?,
            };
            Arc::new(DenseRetriever {
                index: Arc::new(idx.with_snippets(snippets)),
                embedder,
            })
        }
    };
    Ok(match cfg.retriever.listwise_top_n {
        Some(n) => Arc::new(ListwiseRetriever {
            inner: base,
            llm: build_chat(&cfg.backends.reranker, recorders)?,
            top_n: n,
            config: RerankConfig {
                templates: templates(cfg)?,
                ..RerankConfig::default()
            },
        }),
        None => base,
    })
}

fn agent_config(cfg: &Config) -> AgentConfig {
    AgentConfig {
        max_turns: cfg.agent.max_turns,
        tools: Tools {
            search: true,
            visit: cfg.agent.visit_tool,
        },
        visit_char_cap: cfg.agent.visit_char_cap,
        prefer_reasoning_channel: cfg.agent.prefer_reasoning_channel,
        decoding: Decoding {
            temperature: cfg.agent.temperature,
            max_output_tokens: cfg
                .agent
                .max_output_tokens
                .unwrap_or(Decoding::agent().max_output_tokens),
            seed: cfg.deterministic.then_some(cfg.seed),
        },
        agent_tag: match &cfg.backends.agent {
            config::ChatSpec::Openai { endpoint, .. } => endpoint.model.clone(),
            other => format!("{other:?}")
                .split_whitespace()
                .next()
                .unwrap_or("agent")
                .to_lowercase(),
        },
    }
}

fn judge(cfg: &Config, recorders: &mut Recorders) -> Result<Box<dyn Judge>> {
    Ok(match cfg.eval.judge {
        JudgeMode::Exact => Box::new(ExactMatchJudge),
        JudgeMode::Llm => {
            let spec = cfg
                .backends
                .judge
                .as_ref()
                .context("eval.judge = \"llm\" needs a [backends.judge] section")?;
            Box::new(LlmJudge::new(build_chat(spec, recorders)?).with_templates(templates(cfg)?))
        }
    })
}

fn limited<T: Clone>(items: Vec<T>, limit: Option<usize>) -> Vec<T> {
    match limit {
        Some(n) => items.into_iter().take(n).collect(),
        None => items,
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Stdout writes that surface a closed pipe as an error instead of a panic.
macro_rules! out {
    ($($arg:tt)*) => {
        write!(std::io::stdout().lock(), $($arg)*)?
    };
}

macro_rules! outln {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)?
    };
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<std::io::Error>()
        .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let cfg = resolve(&cli)?;
    if cli.print_config {
        outln!("{}", toml::to_string_pretty(&cfg).context("rendering config")?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!(Usage("a subcommand is required; see --help".into()));
    };
    let prov = provenance(&cfg, argv);
    let workers = cfg.effective_workers();
    let mut recorders = Recorders::default();

    match command {
        Command::Fixtures { out, docs, qa } => {
            let (corpus, qas) = deepretrieve::fixtures::synthetic(docs, qa, cfg.seed);
            write_jsonl(&out.join("corpus.jsonl"), corpus.documents(), None)?;
            write_jsonl(&out.join("qa.jsonl"), &qas, None)?;
            outln!(
                "wrote {} documents and {} questions to {}",
                corpus.len(),
                qas.len(),
                out.display()
            );
        }
        Command::Ingest { corpus, qa } => {
            let c = read_corpus(&corpus)?;
            let mut problems: Vec<String> = validate_corpus(&c).iter().map(|v| format!("corpus: {v}")).collect();
            let mut n_qa = 0;
            if let Some(q) = qa {
                let qas = read_qa(&q)?;
                n_qa = qas.len();
                problems.extend(validate_qa(&qas, &c).iter().map(|v| format!("qa: {v}")));
            }
            if !problems.is_empty() {
                bail!(ValidationFailure(problems.join("\n")));
            }
            outln!(
                "ok: {} documents, {} questions, corpus hash {}",
                c.len(),
                n_qa,
                c.content_hash()
            );
        }
        Command::Index { corpus, out, kind } => {
            let c = load_corpus(&corpus)?;
            let bm25 = match kind {
                IndexKind::Bm25 | IndexKind::Both => Some(build_bm25(c.clone(), cfg.retriever.bm25)?),
                IndexKind::Dense => None,
            };
            let dense = match kind {
                IndexKind::Dense | IndexKind::Both => {
                    let e = build_embedder(&cfg.backends.embedder, cfg.seed, &mut recorders)?;
                    Some(build_dense(
                        c.clone(),
                        e.as_ref(),
                        cfg.retriever.document_instruction.as_deref(),
                    )?)
                }
                IndexKind::Bm25 => None,
            };
            let m = persist::save(&out, &c, bm25.as_ref(), dense.as_ref())?;
            outln!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Rollout {
            corpus,
            qa,
            index,
            out,
            limit,
            ..
        } => {
            let c = load_corpus(&corpus)?;
            let qas = limited(read_qa(&qa)?, limit);
            let r = retriever(&cfg, c, index.as_deref(), &mut recorders)?;
            let binding = RetrieverBinding {
                retriever: r,
                composition: composition(&cfg)?,
                top_k: cfg.retriever.top_k,
            };
            let agent = build_chat(&cfg.backends.agent, &mut recorders)?;
            let trajectories = run_all(&qas, agent.as_ref(), &binding, &agent_config(&cfg), workers);
            write_jsonl(&out, &trajectories, Some(&prov))?;
            recorders.save()?;
            let failed: Vec<&str> = trajectories
                .iter()
                .filter(|t| t.failure.as_deref().is_some_and(|f| f.starts_with("backend failure")))
                .map(|t| t.qa_id.as_str())
                .collect();
            outln!("wrote {} trajectories to {}", trajectories.len(), out.display());
            if !failed.is_empty() {
                return Err(BackendError::Stub(format!("backend failures in {}", failed.join(", "))).into());
            }
        }
        Command::Synth {
            corpus,
            qa,
            index,
            out,
            trajectories,
            limit,
        } => {
            let c = load_corpus(&corpus)?;
            let qas = limited(read_qa(&qa)?, limit);
            let mut query_only = cfg.clone();
            query_only.retriever.listwise_top_n = None;
            let r = retriever(&query_only, c, index.as_deref(), &mut recorders)?;
            let agent = build_chat(&cfg.backends.agent, &mut recorders)?;
            let oracle = build_chat(&cfg.backends.oracle, &mut recorders)?;
            let scfg = SynthConfig {
                agent: agent_config(&cfg),
                rerank: RerankConfig {
                    templates: templates(&cfg)?,
                    snippets: SnippetConfig {
                        token_budget: cfg.retriever.snippet_tokens,
                        tokenizer: tokenizer(&cfg)?,
                    },
                    ..RerankConfig::default()
                },
            };
            let outcomes = synthesize_all(&qas, agent.as_ref(), r.as_ref(), oracle.as_ref(), &scfg, workers);
            if let Some(p) = &trajectories {
                let ts: Vec<_> = outcomes.iter().map(|o| o.trajectory.clone()).collect();
                write_jsonl(p, &ts, Some(&prov))?;
            }
            let run = outcomes.len();
            let kept = if cfg.synth.keep_all {
                outcomes
            } else {
                rejection_filter(outcomes, &qas, judge(&cfg, &mut recorders)?.as_ref())
            };
            let instances: Vec<_> = kept.iter().flat_map(|o| o.instances.iter().cloned()).collect();
            export_dataset(&instances, &out)?;
            let stats = SynthStats::new(run, &kept);
            let mut sidecar = serde_json::to_value(&stats)?;
            sidecar["_provenance"] = prov.clone();
            write_json(&PathBuf::from(format!("{}.stats.json", out.display())), &sidecar)?;
            recorders.save()?;
            outln!("{}", serde_json::to_string(&stats)?);
        }
        Command::Eval {
            trajectories,
            qa,
            out,
            label,
        } => {
            let ts = read_trajectories(&trajectories)?;
            let qas = read_qa(&qa)?;
            let report = aggregate(&ts, &qas, judge(&cfg, &mut recorders)?.as_ref())?;
            let name = label.unwrap_or_else(|| ts.first().map(|t| t.retriever_tag.clone()).unwrap_or_default());
            out!("{}", render_table(&[(name.clone(), report.clone())]));
            outln!(
                "zero-recall rate {:.2}%, mean search calls when zero recall {:.2}, unjudged {}",
                report.zero_recall_rate * 100.0,
                report.mean_search_calls_given_zero_recall,
                report.unjudged
            );
            if let Some(p) = out {
                let mut v = serde_json::to_value(&report)?;
                v["label"] = json!(name);
                v["_provenance"] = prov.clone();
                write_json(&p, &v)?;
            }
            recorders.save()?;
        }
        Command::Analyze {
            trajectories,
            qa,
            corpus,
            out,
            cache,
            limit,
        } => {
            let c = load_corpus(&corpus)?;
            let ts = limited(read_trajectories(&trajectories)?, limit);
            let qas = read_qa(&qa)?;
            let mut annotator =
                Annotator::new(build_chat(&cfg.backends.annotator, &mut recorders)?).with_templates(templates(&cfg)?);
            if let Some(p) = &cache {
                annotator = annotator.with_cache(AnnotationCache::open(p)?);
            }
            let jobs: Vec<_> = ts.iter().filter(|t| t.search_calls() > 0).collect();
            let results = analyze_all(&annotator, &jobs, &qas, &c, workers);
            let mut clue_sets = Vec::new();
            let mut claims = Vec::new();
            let mut per = Vec::new();
            for (t, r) in jobs.iter().zip(results) {
                let (cs, ann) = r.with_context(|| format!("annotating {}", t.qa_id))?;
                per.push(
                    json!({"qa_id": t.qa_id, "clues": cs.clues, "assignments": cs.per_turn_assignments, "claims": ann}),
                );
                clue_sets.push(cs);
                claims.push(ann);
            }
            let v = json!({
                "_provenance": prov,
                "trajectories": per.len(),
                "coverage": coverage_series(&clue_sets),
                "claims": claims_series(&claims),
                "per_trajectory": per,
            });
            write_json(&out, &v)?;
            recorders.save()?;
            outln!("analyzed {} trajectories into {}", clue_sets.len(), out.display());
        }
        Command::Compose {
            trajectories,
            qa_id,
            turn,
            qa,
            ..
        } => {
            let ts = read_trajectories(&trajectories)?;
            let t = ts
                .iter()
                .find(|t| t.qa_id == qa_id)
                .with_context(|| format!("no trajectory for {qa_id}"))?;
            let turn = match turn {
                Some(n) => n,
                None => t
                    .turns
                    .iter()
                    .rev()
                    .find(|x| x.action.is_search())
                    .map(|x| x.index)
                    .context("trajectory has no search turn")?,
            };
            if turn == 0 || turn > t.turns.len() {
                bail!(ValidationFailure(format!("turn {turn} outside 1..={}", t.turns.len())));
            }
            let mut comp = composition(&cfg)?;
            if let Some(q) = qa {
                if let Some(ex) = read_qa(&q)?.into_iter().find(|e| e.id == qa_id) {
                    comp = comp.with_question(ex.question);
                }
            }
            let composed = compose(t.prefix(turn), &comp)?;
            outln!("{}", render_with(&comp.templates, &composed));
        }
        Command::LossCheck {
            parity,
            generate,
            dim,
            tolerance,
        } => {
            if let Some(n) = generate {
                write_parity(&parity, &generate_parity(n, dim, cfg.seed))?;
            }
            let rows = read_parity(&parity)?;
            let check = check_parity(&rows)?;
            outln!("{} rows, max |delta loss| = {:e}", check.rows, check.max_abs_diff);
            if check.max_abs_diff >= tolerance {
                bail!(ValidationFailure(format!(
                    "parity deviation {:e} exceeds {tolerance:e}",
                    check.max_abs_diff
                )));
            }
        }
        Command::Report { reports } => {
            let mut rows = Vec::new();
            for p in reports {
                let v: Value = serde_json::from_str(
                    &std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                )?;
                let label = v["label"]
                    .as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| p.display().to_string());
                let r: EvalReport = serde_json::from_value(v).with_context(|| format!("parsing {}", p.display()))?;
                rows.push((label, r));
            }
            out!("{}", render_table(&rows));
        }
    }
    Ok(())
}

type Annotated = Result<(
    deepretrieve::analysis::ClueSet,
    Vec<deepretrieve::analysis::ClaimAnnotation>,
)>;

fn analyze_all(
    annotator: &Annotator,
    jobs: &[&deepretrieve::model::Trajectory],
    qas: &[deepretrieve::model::QaExample],
    corpus: &Corpus,
    workers: usize,
) -> Vec<Annotated> {
    let one = |t: &deepretrieve::model::Trajectory| -> Annotated {
        let qa = qas
            .iter()
            .find(|q| q.id == t.qa_id)
            .with_context(|| format!("no question {}", t.qa_id))?;
        let evidence: Vec<String> = qa
            .evidence
            .iter()
            .filter_map(|id| corpus.get(id))
            .map(|d| d.text.clone())
            .collect();
        let cs = annotator.clue_set(t)?;
        let ann = annotator.claim_annotations(t, qa, &evidence)?;
        Ok((cs, ann))
    };
    let chunk = jobs.len().div_ceil(workers.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|t| one(t)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("annotation worker panicked"))
            .collect()
    })
}

fn is_backend(e: &(dyn std::error::Error + 'static)) -> bool {
    use deepretrieve::analysis::AnalysisError;
    use deepretrieve::index::RetrievalError;
    use deepretrieve::synth::SynthError;
    e.downcast_ref::<BackendError>().is_some()
        || matches!(e.downcast_ref::<RetrievalError>(), Some(RetrievalError::Backend(_)))
        || matches!(e.downcast_ref::<AnalysisError>(), Some(AnalysisError::Backend(_)))
        || matches!(e.downcast_ref::<SynthError>(), Some(SynthError::Backend(_)))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        EXIT_USAGE
    } else if err.chain().any(is_backend) {
        EXIT_BACKEND
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    }))
    .init();
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
