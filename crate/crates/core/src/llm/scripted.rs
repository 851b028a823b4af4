use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Deserializer};

use super::{ChatRequest, ChatResponse, LlmClient, LlmError};

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    #[serde(default)]
    model: Option<String>,
    #[serde(default, deserialize_with = "one_or_many")]
    system_contains: Vec<String>,
    #[serde(default, deserialize_with = "one_or_many")]
    user_contains: Vec<String>,
    #[serde(default)]
    user_regex: Option<String>,
    #[serde(deserialize_with = "one_or_many")]
    respond: Vec<String>,
    #[serde(default)]
    delay_ms: u64,
}

/// A pattern → response rule. Every condition that is set must hold. With
/// several responses, successive matches walk the list and then repeat the
/// last one.
#[derive(Debug)]
pub struct ScriptRule {
    pub model: Option<String>,
    pub system_contains: Vec<String>,
    pub user_contains: Vec<String>,
    pub user_regex: Option<Regex>,
    pub responses: Vec<String>,
    pub delay: Duration,
    hits: AtomicUsize,
}

impl ScriptRule {
    /// Rule matching any request whose user text contains `needle`.
    pub fn user_contains(needle: &str, response: &str) -> Self {
        Self::new(response).and_user_contains(needle)
    }

    /// Rule matching every request.
    pub fn new(response: &str) -> Self {
        Self {
            model: None,
            system_contains: Vec::new(),
            user_contains: Vec::new(),
            user_regex: None,
            responses: vec![response.to_owned()],
            delay: Duration::ZERO,
            hits: AtomicUsize::new(0),
        }
    }

    pub fn sequence<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        let mut rule = Self::new("");
        rule.responses = responses.into_iter().map(Into::into).collect();
        rule
    }

    pub fn and_user_contains(mut self, needle: &str) -> Self {
        self.user_contains.push(needle.to_owned());
        self
    }

    pub fn and_system_contains(mut self, needle: &str) -> Self {
        self.system_contains.push(needle.to_owned());
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        self.model.as_ref().is_none_or(|m| *m == request.model_id)
            && self
                .system_contains
                .iter()
                .all(|s| request.system_text.contains(s.as_str()))
            && self
                .user_contains
                .iter()
                .all(|s| request.user_text.contains(s.as_str()))
            && self
                .user_regex
                .as_ref()
                .is_none_or(|re| re.is_match(&request.user_text))
    }

    fn next_response(&self) -> String {
        let n = self.hits.fetch_add(1, Ordering::SeqCst);
        let i = n.min(self.responses.len().saturating_sub(1));
        self.responses.get(i).cloned().unwrap_or_default()
    }
}

/// Deterministic rule-based backend; the first matching rule answers.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses a JSON array of rules:
    /// `{"system_contains", "user_contains", "user_regex", "model", "respond", "delay_ms"}`.
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let specs: Vec<RuleSpec> = serde_json::from_str(text).map_err(|e| LlmError::Config(format!("script: {e}")))?;
        let mut backend = Self::new();
        for (i, spec) in specs.into_iter().enumerate() {
            if spec.respond.is_empty() {
                return Err(LlmError::Config(format!("script rule {i}: empty respond list")));
            }
            let user_regex = spec
                .user_regex
                .map(|r| Regex::new(&r))
                .transpose()
                .map_err(|e| LlmError::Config(format!("script rule {i}: {e}")))?;
            backend.rules.push(ScriptRule {
                model: spec.model,
                system_contains: spec.system_contains,
                user_contains: spec.user_contains,
                user_regex,
                responses: spec.respond,
                delay: Duration::from_millis(spec.delay_ms),
                hits: AtomicUsize::new(0),
            });
        }
        Ok(backend)
    }
}

impl LlmClient for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let start = Instant::now();
        request.validate()?;
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(request))
            .ok_or(LlmError::NoRuleMatched)?;
        if !rule.delay.is_zero() {
            std::thread::sleep(rule.delay);
        }
        let text = rule.next_response();
        Ok(ChatResponse {
            text,
            latency: start.elapsed(),
            prompt_tokens: None,
            completion_tokens: None,
        })
    }
}
