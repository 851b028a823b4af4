//! Query decomposition: one user query becomes validated per-KB subqueries.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::kb::{KnowledgeBaseSummary, Registry};
use crate::llm::{ChatRequest, LlmClient, LlmError};

/// Retries after the first attempt; three completions in total.
pub const DEFAULT_ROUTING_RETRIES: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouterError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("could not summarize knowledge bases: {0}")]
    Summary(String),
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("routing plan does not match the schema: {0}")]
    SchemaMismatch(String),
    #[error("plan references unknown knowledge base {0:?}")]
    UnknownKb(String),
    #[error("plan has no subqueries")]
    EmptyPlan,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("routing failed after {attempts} attempt(s): {last}")]
    RoutingFailed { attempts: usize, last: Box<RouterError> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subquery {
    #[serde(rename = "kb")]
    pub kb_id: String,
    #[serde(rename = "query")]
    pub subquery: String,
}

impl Subquery {
    pub fn new(kb_id: &str, subquery: &str) -> Self {
        Self {
            kb_id: kb_id.to_owned(),
            subquery: subquery.to_owned(),
        }
    }
}

/// Serializes as `{"subqueries":[{"kb":...,"query":...}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingPlan {
    pub subqueries: Vec<Subquery>,
}

impl RoutingPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingPrompt {
    pub system_text: String,
    pub user_text: String,
}

pub fn build_routing_prompt(query: &str, summary: &KnowledgeBaseSummary) -> Result<RoutingPrompt, RouterError> {
    if query.trim().is_empty() {
        return Err(RouterError::EmptyQuery);
    }
    let system_text = format!(
        "You route maintenance questions to knowledge bases.\n\
         Split the user's question into subqueries, one per knowledge base that can answer part of it. \
         Use only the knowledge base ids listed in the summary below.\n\
         Text knowledge bases are searched by keywords; table knowledge bases are queried with SQL, \
         so phrase their subqueries as questions about the table's columns.\n\n\
         Knowledge base summary:\n{}\n\n\
         Respond with ONLY a JSON object of this exact form and nothing else:\n\
         {{\"subqueries\":[{{\"kb\":\"<id>\",\"query\":\"<subquery text>\"}}]}}",
        summary.to_json()
    );
    Ok(RoutingPrompt {
        system_text,
        user_text: query.to_owned(),
    })
}

#[derive(Deserialize)]
struct RawPlan {
    subqueries: Vec<RawSubquery>,
}

#[derive(Deserialize)]
struct RawSubquery {
    kb: String,
    query: String,
}

fn plan_from_object(obj: Json) -> Result<RoutingPlan, RouterError> {
    let raw: RawPlan = serde_json::from_value(obj).map_err(|e| RouterError::SchemaMismatch(e.to_string()))?;
    let mut subqueries = Vec::with_capacity(raw.subqueries.len());
    for s in raw.subqueries {
        if s.kb.trim().is_empty() || s.query.trim().is_empty() {
            return Err(RouterError::SchemaMismatch("empty kb or query".into()));
        }
        subqueries.push(Subquery {
            kb_id: s.kb,
            subquery: s.query,
        });
    }
    Ok(RoutingPlan { subqueries })
}

/// Extracts a plan from model output that may wrap the JSON in prose.
///
/// Every `{` is tried as the start of a JSON value, left to right. The first
/// object that fits the plan schema wins; if objects were found but none
/// fits, the first object's schema error is reported.
pub fn parse_routing_plan(raw: &str) -> Result<RoutingPlan, RouterError> {
    let mut first_error = None;
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Json>();
        let Some(Ok(value @ Json::Object(_))) = stream.next() else {
            continue;
        };
        match plan_from_object(value) {
            Ok(plan) => return Ok(plan),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.unwrap_or(RouterError::NoJsonFound))
}

/// Checks every id against the registry and drops repeated (kb, query)
/// pairs, keeping first occurrences in order.
pub fn validate_plan(plan: RoutingPlan, registry: &Registry) -> Result<RoutingPlan, RouterError> {
    if plan.subqueries.is_empty() {
        return Err(RouterError::EmptyPlan);
    }
    let mut kept: Vec<Subquery> = Vec::with_capacity(plan.subqueries.len());
    for s in plan.subqueries {
        if !registry.contains(&s.kb_id) {
            return Err(RouterError::UnknownKb(s.kb_id));
        }
        if !kept.contains(&s) {
            kept.push(s);
        }
    }
    Ok(RoutingPlan { subqueries: kept })
}

#[derive(Debug, Clone)]
pub struct RoutingOptions {
    pub model_id: String,
    pub max_retries: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl RoutingOptions {
    pub fn new(model_id: &str) -> Self {
        Self {
            model_id: model_id.to_owned(),
            max_retries: DEFAULT_ROUTING_RETRIES,
            max_tokens: 512,
            temperature: 0.0,
        }
    }
}

/// Prompt, complete, parse, validate; parse and validation failures get a
/// fresh completion up to `max_retries` times. Transport errors end routing
/// immediately.
pub fn route(
    query: &str,
    registry: &Registry,
    llm: &dyn LlmClient,
    options: &RoutingOptions,
) -> Result<RoutingPlan, RouterError> {
    if registry.is_empty() {
        return Err(RouterError::EmptyRegistry);
    }
    let summary = registry
        .build_summary()
        .map_err(|e| RouterError::Summary(e.to_string()))?;
    let prompt = build_routing_prompt(query, &summary)?;
    let mut request = ChatRequest::new(&options.model_id, prompt.system_text, prompt.user_text);
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let failed = |last: RouterError| RouterError::RoutingFailed {
            attempts,
            last: Box::new(last),
        };
        let response = llm.complete(&request).map_err(|e| failed(e.into()))?;
        match parse_routing_plan(&response.text).and_then(|p| validate_plan(p, registry)) {
            Ok(plan) => return Ok(plan),
            Err(e) if attempts > options.max_retries => return Err(failed(e)),
            Err(_) => {}
        }
    }
}
