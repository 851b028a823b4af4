//! End-to-end answering: route, retrieve per subquery, synthesize.
//!
//! Stage timings use a virtual clock: wall time plus, for every LLM call,
//! any reported latency in excess of the time the call actually took. Live
//! backends add nothing; replayed responses contribute their recorded
//! latency, so replay runs report the same times as the recorded session
//! plus local overhead.

use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::kb::{KbContent, Registry};
use crate::llm::{ChatRequest, ChatResponse, LlmClient, LlmError};
use crate::retrieve_table::{
    execute_sql, generate_sql, print_sql, QueryResult, SqlGenerationError, SqlGenerationOptions,
};
use crate::retrieve_text::{retrieve_text, tokenize, RetrievalConfig, ScoredChunk};
use crate::router::{route, RouterError, RoutingOptions, RoutingPlan, Subquery};

pub const NO_ROWS_MARKER: &str = "(no matching rows)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextPayload {
    Text { chunks: Vec<ScoredChunk> },
    Table { sql: String, result: QueryResult },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub kb_id: String,
    pub subquery: String,
    pub payload: ContextPayload,
}

/// One entry per plan subquery, in plan order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub entries: Vec<ContextEntry>,
}

fn ms<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

fn from_ms<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
    let v = f64::deserialize(d)?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(serde::de::Error::custom("duration must be a non-negative number of ms"));
    }
    Ok(Duration::from_secs_f64(v / 1000.0))
}

/// Serialized as `routing_ms`, `retrieval_ms`, `synthesis_ms`, `total_ms`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    #[serde(rename = "routing_ms", serialize_with = "ms", deserialize_with = "from_ms")]
    pub routing: Duration,
    #[serde(rename = "retrieval_ms", serialize_with = "ms", deserialize_with = "from_ms")]
    pub retrieval: Duration,
    #[serde(rename = "synthesis_ms", serialize_with = "ms", deserialize_with = "from_ms")]
    pub synthesis: Duration,
    #[serde(rename = "total_ms", serialize_with = "ms", deserialize_with = "from_ms")]
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answer {
    pub text: String,
    pub stage_timings: StageTimings,
    pub plan: RoutingPlan,
    pub context: RetrievedContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Routing,
    SqlGeneration,
    Retrieval,
    Synthesis,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Routing => "routing",
            Stage::SqlGeneration => "sql_generation",
            Stage::Retrieval => "retrieval",
            Stage::Synthesis => "synthesis",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineFailure {
    #[error(transparent)]
    RoutingFailed(RouterError),
    #[error(transparent)]
    SqlGenerationFailed(SqlGenerationError),
    #[error("retrieval failed: {0}")]
    RetrievalFailed(String),
    #[error("synthesis failed: {0}")]
    SynthesisFailed(String),
}

impl PipelineFailure {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineFailure::RoutingFailed(_) => Stage::Routing,
            PipelineFailure::SqlGenerationFailed(_) => Stage::SqlGeneration,
            PipelineFailure::RetrievalFailed(_) => Stage::Retrieval,
            PipelineFailure::SynthesisFailed(_) => Stage::Synthesis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{} stage failed: {failure}", failure.stage())]
pub struct AnswerError {
    pub failure: PipelineFailure,
    /// Virtual time spent before the failure.
    pub elapsed: Duration,
}

impl AnswerError {
    pub fn stage(&self) -> Stage {
        self.failure.stage()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisPrompt {
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("retrieved context is empty")]
    EmptyContext,
}

const SYNTH_INSTRUCTIONS: &str = "You answer maintenance questions for technicians.\n\
Use only the information in the provided context. If the context does not contain the answer, \
say that the information is not available. Keep the answer short and factual.";

/// What survives budget trimming: for each entry, the kept chunk indices or
/// the number of kept table rows.
#[derive(Clone)]
enum Kept {
    Chunks(Vec<usize>),
    Rows(usize),
}

fn render_context(context: &RetrievedContext, kept: &[Kept]) -> String {
    let mut out = String::new();
    for (n, (entry, keep)) in context.entries.iter().zip(kept).enumerate() {
        if n > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "### Source {}: {} (subquery: {})\n",
            n + 1,
            entry.kb_id,
            entry.subquery
        ));
        match (&entry.payload, keep) {
            (ContextPayload::Text { chunks }, Kept::Chunks(idx)) => {
                if idx.is_empty() {
                    out.push_str("(passages omitted to fit the context budget)\n");
                }
                for &i in idx {
                    let c = &chunks[i].chunk;
                    out.push_str(&format!("[{} p.{}]\n{}\n", c.kb_id, c.page, c.text.trim()));
                }
            }
            (ContextPayload::Table { sql, result }, Kept::Rows(k)) => {
                out.push_str(&format!("SQL: {sql}\n"));
                if result.rows.is_empty() {
                    out.push_str(NO_ROWS_MARKER);
                    out.push('\n');
                } else {
                    let shown = QueryResult {
                        headers: result.headers.clone(),
                        rows: result.rows[..*k].to_vec(),
                        row_count: *k,
                    };
                    out.push_str(&shown.render_aligned());
                    out.push('\n');
                    if *k < result.rows.len() {
                        out.push_str(&format!("({} more rows omitted)\n", result.rows.len() - k));
                    }
                }
            }
            _ => unreachable!("kept state mirrors payload kind"),
        }
    }
    out
}

/// Serializes the context within `budget_tokens` lexical tokens. Text
/// chunks go first, lowest score first; then table rows are dropped whole
/// from the end of the longest table. Source headers and markers are never
/// dropped, so a budget below their size yields just the skeleton.
pub fn render_context_within(context: &RetrievedContext, budget_tokens: usize) -> String {
    let mut kept: Vec<Kept> = context
        .entries
        .iter()
        .map(|e| match &e.payload {
            ContextPayload::Text { chunks } => Kept::Chunks((0..chunks.len()).collect()),
            ContextPayload::Table { result, .. } => Kept::Rows(result.rows.len()),
        })
        .collect();
    loop {
        let text = render_context(context, &kept);
        if tokenize(&text).len() <= budget_tokens {
            return text;
        }
        // lowest-scored chunk anywhere; later entries and ranks lose ties
        let worst = kept
            .iter()
            .enumerate()
            .filter_map(|(e, k)| match (k, &context.entries[e].payload) {
                (Kept::Chunks(idx), ContextPayload::Text { chunks }) => idx
                    .iter()
                    .map(|&i| (chunks[i].score, e, i))
                    .reduce(|a, b| if b.0 <= a.0 { b } else { a }),
                _ => None,
            })
            .reduce(|a, b| if b.0 <= a.0 { b } else { a });
        if let Some((_, e, i)) = worst {
            if let Kept::Chunks(idx) = &mut kept[e] {
                idx.retain(|&x| x != i);
            }
            continue;
        }
        let longest = kept
            .iter_mut()
            .filter_map(|k| match k {
                Kept::Rows(n) if *n > 0 => Some(n),
                _ => None,
            })
            .reduce(|a, b| if *b > *a { b } else { a });
        match longest {
            Some(n) => *n -= 1,
            None => return text,
        }
    }
}

pub fn build_synthesis_prompt(
    query: &str,
    context: &RetrievedContext,
    max_tokens: u32,
) -> Result<SynthesisPrompt, SynthError> {
    if context.entries.is_empty() {
        return Err(SynthError::EmptyContext);
    }
    let body = render_context_within(context, (max_tokens / 2) as usize);
    Ok(SynthesisPrompt {
        system_text: SYNTH_INSTRUCTIONS.to_owned(),
        user_text: format!("Context:\n{body}\nQuestion: {query}"),
    })
}

/// Accumulates reported LLM latency beyond the observed call duration.
struct Metered<'a> {
    inner: &'a dyn LlmClient,
    extra: Mutex<Duration>,
}

impl<'a> Metered<'a> {
    fn new(inner: &'a dyn LlmClient) -> Self {
        Self {
            inner,
            extra: Mutex::new(Duration::ZERO),
        }
    }

    fn take(&self) -> Duration {
        std::mem::take(&mut *self.extra.lock().unwrap_or_else(|p| p.into_inner()))
    }
}

impl LlmClient for Metered<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let start = Instant::now();
        let response = self.inner.complete(request)?;
        let observed = start.elapsed();
        *self.extra.lock().unwrap_or_else(|p| p.into_inner()) += response.latency.saturating_sub(observed);
        Ok(response)
    }
}

#[derive(Debug, Clone)]
pub struct AnswerOptions {
    pub model_id: String,
    pub retrieval: RetrievalConfig,
    pub routing_retries: usize,
    pub sql_retries: usize,
    /// Completion budget of the synthesis call; the context gets half of it.
    pub synthesis_max_tokens: u32,
    pub temperature: f64,
    pub concurrent_retrieval: bool,
}

impl AnswerOptions {
    pub fn new(model_id: &str) -> Self {
        Self {
            model_id: model_id.to_owned(),
            retrieval: RetrievalConfig::default(),
            routing_retries: crate::router::DEFAULT_ROUTING_RETRIES,
            sql_retries: crate::retrieve_table::DEFAULT_SQL_RETRIES,
            synthesis_max_tokens: 1024,
            temperature: 0.0,
            concurrent_retrieval: false,
        }
    }
}

fn retrieve_one(
    sub: &Subquery,
    registry: &Registry,
    llm: &dyn LlmClient,
    options: &AnswerOptions,
) -> Result<ContextEntry, PipelineFailure> {
    let kb = registry
        .get(&sub.kb_id)
        .ok_or_else(|| PipelineFailure::RetrievalFailed(format!("unknown knowledge base {}", sub.kb_id)))?;
    let payload = match &kb.content {
        KbContent::Text(_) => ContextPayload::Text {
            chunks: retrieve_text(&sub.subquery, kb, &options.retrieval)
                .map_err(|e| PipelineFailure::RetrievalFailed(e.to_string()))?,
        },
        KbContent::Table(table) => {
            let gen = SqlGenerationOptions {
                model_id: options.model_id.clone(),
                max_retries: options.sql_retries,
                max_tokens: 512,
                temperature: options.temperature,
            };
            let query = generate_sql(&sub.subquery, table, llm, &gen).map_err(PipelineFailure::SqlGenerationFailed)?;
            ContextPayload::Table {
                sql: print_sql(&query),
                result: execute_sql(&query, table),
            }
        }
    };
    Ok(ContextEntry {
        kb_id: sub.kb_id.clone(),
        subquery: sub.subquery.clone(),
        payload,
    })
}

/// Retrieves every subquery; returns entries in plan order and the extra
/// virtual time to charge to the retrieval stage.
fn retrieve_all(
    plan: &RoutingPlan,
    registry: &Registry,
    llm: &dyn LlmClient,
    options: &AnswerOptions,
) -> (Result<RetrievedContext, PipelineFailure>, Duration) {
    if !options.concurrent_retrieval || plan.subqueries.len() < 2 {
        let metered = Metered::new(llm);
        let entries: Result<Vec<_>, _> = plan
            .subqueries
            .iter()
            .map(|s| retrieve_one(s, registry, &metered, options))
            .collect();
        return (entries.map(|entries| RetrievedContext { entries }), metered.take());
    }
    let results: Vec<(Result<ContextEntry, PipelineFailure>, Duration)> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .subqueries
            .iter()
            .map(|s| {
                scope.spawn(move || {
                    let metered = Metered::new(llm);
                    let r = retrieve_one(s, registry, &metered, options);
                    (r, metered.take())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("retrieval thread panicked"))
            .collect()
    });
    // parallel branches overlap, so only the slowest one's extra counts
    let extra = results.iter().map(|(_, d)| *d).max().unwrap_or_default();
    let entries: Result<Vec<_>, _> = results.into_iter().map(|(r, _)| r).collect();
    (entries.map(|entries| RetrievedContext { entries }), extra)
}

/// Answers `query` from the registry's knowledge bases.
pub fn answer(
    query: &str,
    registry: &Registry,
    llm: &dyn LlmClient,
    options: &AnswerOptions,
) -> Result<Answer, AnswerError> {
    let start = Instant::now();
    let mut extra_total = Duration::ZERO;
    let fail = |failure, extra: Duration| AnswerError {
        failure,
        elapsed: start.elapsed() + extra,
    };

    let routing_start = Instant::now();
    let metered = Metered::new(llm);
    let routing_opts = RoutingOptions {
        model_id: options.model_id.clone(),
        max_retries: options.routing_retries,
        max_tokens: 512,
        temperature: options.temperature,
    };
    let plan = route(query, registry, &metered, &routing_opts);
    let extra = metered.take();
    extra_total += extra;
    let routing = routing_start.elapsed() + extra;
    let plan = plan.map_err(|e| fail(PipelineFailure::RoutingFailed(e), extra_total))?;

    let retrieval_start = Instant::now();
    let (context, extra) = retrieve_all(&plan, registry, llm, options);
    extra_total += extra;
    let retrieval = retrieval_start.elapsed() + extra;
    let context = context.map_err(|f| fail(f, extra_total))?;

    let synthesis_start = Instant::now();
    let prompt = build_synthesis_prompt(query, &context, options.synthesis_max_tokens)
        .map_err(|e| fail(PipelineFailure::SynthesisFailed(e.to_string()), extra_total))?;
    let mut request = ChatRequest::new(&options.model_id, prompt.system_text, prompt.user_text);
    request.temperature = options.temperature;
    request.max_tokens = options.synthesis_max_tokens;
    let metered = Metered::new(llm);
    let response = metered.complete(&request);
    let extra = metered.take();
    extra_total += extra;
    let synthesis = synthesis_start.elapsed() + extra;
    let text = response
        .map_err(|e| fail(PipelineFailure::SynthesisFailed(e.to_string()), extra_total))?
        .text;
    if text.trim().is_empty() {
        return Err(fail(
            PipelineFailure::SynthesisFailed("empty completion".into()),
            extra_total,
        ));
    }

    Ok(Answer {
        text,
        stage_timings: StageTimings {
            routing,
            retrieval,
            synthesis,
            total: start.elapsed() + extra_total,
        },
        plan,
        context,
    })
}
