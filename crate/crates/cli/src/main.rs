//! `crossrag`: knowledge-base management, ad-hoc questions, evaluation runs
//! and report rendering.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 pipeline failure.

mod config;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use config::CliConfig;
use crossrag_core::harness::{
    aggregate, read_records, render_report, RecordWriter, ReportFormat, Runner, Scenario, DEFAULT_REPETITIONS,
};
use crossrag_core::kb::{
    parse_manifest, render_manifest, KbKind, KnowledgeBase, KnowledgeBaseDescriptor, ManifestEntry, Registry,
};
use crossrag_core::llm::{LlmClient, Provider, RecordingClient};
use crossrag_core::metrics::MetricConfig;
use crossrag_core::synth::{answer, AnswerOptions, ContextPayload};

#[derive(Parser)]
#[command(
    name = "crossrag",
    version,
    about = "Cross-format retrieval-augmented answering over text and CSV sources"
)]
struct Cli {
    /// Configuration file (TOML). Defaults to ./crossrag.toml when present.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Knowledge-base manifest, overriding the config file.
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manage registered knowledge bases.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Answer one question.
    Ask(AskArgs),
    /// Run an evaluation scenario and write JSON Lines records.
    Eval(EvalArgs),
    /// Aggregate records files into a report.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum KbCommand {
    /// Register a text (.txt, pages split by form feed) or table (.csv) source.
    Add {
        #[arg(long)]
        id: String,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, value_name = "PATH")]
        path: PathBuf,
        #[arg(long)]
        summary: String,
    },
    /// Print the manifest entries as JSON.
    List,
    /// Print the knowledge-base summary given to the router.
    Summary,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Text,
    Table,
}

/// Per-invocation overrides of configured retrieval and metric settings.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Tokens per text chunk.
    #[arg(long)]
    chunk_tokens: Option<usize>,
    /// Tokens shared by consecutive chunks.
    #[arg(long)]
    overlap_tokens: Option<usize>,
    /// Chunks retrieved per text subquery.
    #[arg(long)]
    top_k: Option<usize>,
    /// BM25 term-frequency saturation.
    #[arg(long)]
    bm25_k1: Option<f64>,
    /// BM25 length normalization.
    #[arg(long)]
    bm25_b: Option<f64>,
    /// Highest BLEU n-gram order.
    #[arg(long)]
    max_n: Option<usize>,
    /// METEOR synonym table (JSON).
    #[arg(long, value_name = "PATH")]
    synonyms: Option<PathBuf>,
    /// Sampling temperature sent with every request.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Retrieve subqueries in parallel.
    #[arg(long)]
    concurrent: bool,
}

#[derive(Args)]
struct AskArgs {
    query: String,
    /// Model id as configured under [models].
    #[arg(long)]
    model: String,
    /// Also print the routing plan, context summaries and stage timings as JSON.
    #[arg(long)]
    trace: bool,
    /// Append every LLM exchange to this replay file.
    #[arg(long, value_name = "PATH")]
    record: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
    repetitions: usize,
    /// Records output; existing records for this model and scenario are kept
    /// and their (task, repetition) pairs skipped.
    #[arg(long, value_name = "PATH")]
    records: Option<PathBuf>,
    /// Truncate the records file instead of resuming.
    #[arg(long)]
    fresh: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Md,
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// One or more records files.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "md")]
    format: FormatArg,
    /// Write to this file instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(anyhow::Error),
    Pipeline(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = CliConfig::load(cli.config.as_deref())?;
    if let Some(m) = cli.manifest {
        config.manifest = m;
    }
    match cli.command {
        Command::Kb { command } => kb(&config, command)?,
        Command::Ask(args) => ask(&config, args)?,
        Command::Eval(args) => eval(&config, args)?,
        Command::Report(args) => report(args)?,
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(parse_manifest(&text)?)
}

fn load_registry(config: &CliConfig) -> Result<Registry> {
    if !config.manifest.exists() {
        bail!(
            "manifest {} does not exist; register sources with `kb add`",
            config.manifest.display()
        );
    }
    Ok(Registry::load_manifest(&config.manifest)?)
}

/// Path as stored in the manifest: relative to the manifest's directory
/// when the source lives beneath it.
fn manifest_relative(path: &Path, manifest: &Path) -> Result<PathBuf> {
    let cwd = std::env::current_dir()?;
    let abs = cwd.join(path);
    let dir = cwd.join(manifest.parent().unwrap_or(Path::new("")));
    Ok(abs.strip_prefix(&dir).map(Path::to_owned).unwrap_or(abs))
}

fn kb(config: &CliConfig, command: KbCommand) -> Result<()> {
    match command {
        KbCommand::Add {
            id,
            kind,
            path,
            summary,
        } => {
            let mut entries = read_manifest(&config.manifest)?;
            if entries.iter().any(|e| e.id == id) {
                bail!("duplicate id {id:?}");
            }
            let kind = match kind {
                KindArg::Text => KbKind::Text,
                KindArg::Table => KbKind::Table,
            };
            // load once so malformed sources are rejected before registering
            KnowledgeBase::load(KnowledgeBaseDescriptor::new(
                id.clone(),
                kind,
                path.clone(),
                summary.clone(),
            ))?;
            entries.push(ManifestEntry {
                id: id.clone(),
                kind,
                path: manifest_relative(&path, &config.manifest)?,
                summary,
            });
            if let Some(dir) = config.manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&config.manifest, render_manifest(&entries))
                .with_context(|| format!("cannot write {}", config.manifest.display()))?;
            println!("registered {id} ({kind})");
        }
        KbCommand::List => print!("{}", render_manifest(&read_manifest(&config.manifest)?)),
        KbCommand::Summary => println!("{}", load_registry(config)?.build_summary()?.to_json()),
    }
    Ok(())
}

fn client(config: &CliConfig, model: &str) -> Result<Provider> {
    let provider = config
        .provider(model)
        .ok_or_else(|| anyhow!("model {model:?} is not configured; add it under [models] in the config file"))?;
    Provider::from_config(provider).with_context(|| format!("model {model}"))
}

fn answer_options(config: &CliConfig, model: &str, o: &Overrides) -> Result<AnswerOptions> {
    let mut opts = AnswerOptions::new(model);
    let r = &mut opts.retrieval;
    *r = config.retrieval;
    r.chunk_tokens = o.chunk_tokens.unwrap_or(r.chunk_tokens);
    r.overlap_tokens = o.overlap_tokens.unwrap_or(r.overlap_tokens);
    r.k = o.top_k.unwrap_or(r.k);
    r.k1 = o.bm25_k1.unwrap_or(r.k1);
    r.b = o.bm25_b.unwrap_or(r.b);
    r.validate()?;
    if !(0.0..=2.0).contains(&o.temperature) {
        bail!("temperature must be within [0, 2]");
    }
    opts.temperature = o.temperature;
    opts.concurrent_retrieval = o.concurrent;
    Ok(opts)
}

fn metric_config(config: &CliConfig, o: &Overrides) -> Result<MetricConfig> {
    let mut m = config.metrics.clone();
    m.max_n = o.max_n.unwrap_or(m.max_n);
    if let Some(p) = &o.synonyms {
        m.synonyms_path = Some(p.clone());
    }
    Ok(MetricConfig::from_options(&m)?)
}

fn ask(config: &CliConfig, args: AskArgs) -> Result<(), Failure> {
    let registry = load_registry(config)?;
    let provider = client(config, &args.model)?;
    let opts = answer_options(config, &args.model, &args.overrides)?;
    let recorder;
    let llm: &dyn LlmClient = match &args.record {
        Some(path) => {
            recorder = RecordingClient::new(&provider, path).map_err(anyhow::Error::from)?;
            &recorder
        }
        None => &provider,
    };
    let a = answer(&args.query, &registry, llm, &opts).map_err(|e| Failure::Pipeline(e.to_string()))?;
    println!("{}", a.text);
    if args.trace {
        let context: Vec<_> = a
            .context
            .entries
            .iter()
            .map(|e| match &e.payload {
                ContextPayload::Text { chunks } => json!({
                    "kb": e.kb_id,
                    "subquery": e.subquery,
                    "kind": "text",
                    "chunks": chunks.iter().map(|c| json!({
                        "page": c.chunk.page,
                        "span": [c.chunk.char_span.0, c.chunk.char_span.1],
                        "score": c.score,
                    })).collect::<Vec<_>>(),
                }),
                ContextPayload::Table { sql, result } => json!({
                    "kb": e.kb_id,
                    "subquery": e.subquery,
                    "kind": "table",
                    "sql": sql,
                    "row_count": result.row_count,
                }),
            })
            .collect();
        let trace = json!({
            "plan": a.plan,
            "context": context,
            "stage_timings": a.stage_timings,
        });
        println!("{}", serde_json::to_string_pretty(&trace).expect("trace serializes"));
    }
    Ok(())
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn eval(config: &CliConfig, args: EvalArgs) -> Result<()> {
    if args.repetitions == 0 {
        bail!("--repetitions must be at least 1");
    }
    let registry = load_registry(config)?;
    let scenario = Scenario::load(&args.scenario, &registry)?;
    let provider = client(config, &args.model)?;
    let mut runner = Runner::new(&registry, &provider, &args.model);
    runner.answer = answer_options(config, &args.model, &args.overrides)?;
    runner.metrics = metric_config(config, &args.overrides)?;

    let path = match args.records {
        Some(p) => p,
        None => {
            std::fs::create_dir_all(&config.output_dir)?;
            config
                .output_dir
                .join(format!("{}-{}.jsonl", file_safe(&scenario.id), file_safe(&args.model)))
        }
    };
    if args.fresh && path.exists() {
        std::fs::remove_file(&path)?;
    }
    let done: HashSet<(usize, usize)> = if path.exists() {
        read_records(&path)?
            .into_iter()
            .filter(|r| r.model_id == args.model && r.scenario_id == scenario.id && r.repetition <= args.repetitions)
            .map(|r| (r.task_index, r.repetition))
            .collect()
    } else {
        HashSet::new()
    };
    let mut writer = RecordWriter::append(&path)?;
    runner.run_scenario_with(&scenario, args.repetitions, &done, |r| writer.write(&r))?;

    let mine: Vec<_> = read_records(&path)?
        .into_iter()
        .filter(|r| r.model_id == args.model && r.scenario_id == scenario.id)
        .collect();
    let row = &aggregate(&mine)?.rows[0];
    println!(
        "{} scenario {}: {} records, {:.2}s mean, success {}% -> {}",
        args.model,
        scenario.id,
        row.records,
        row.mean_latency_s,
        row.success_percent,
        path.display()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &args.records {
        records.extend(read_records(p)?);
    }
    let format = match args.format {
        FormatArg::Md => ReportFormat::Markdown,
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let text = render_report(&aggregate(&records)?, format);
    match args.out {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
