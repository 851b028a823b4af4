use std::time::Instant;

use serde_json::{json, Value as Json};

use super::{ChatRequest, ChatResponse, LlmClient, LlmError, ProviderConfig};

pub const DEFAULT_RESPONSE_PATH: &str = "choices.0.message.content";

/// Chat-completions over HTTP. Works for hosted APIs and local model
/// servers alike; only the endpoint and response path differ.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    model: Option<String>,
    response_path: Vec<String>,
}

impl HttpBackend {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, LlmError> {
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| LlmError::Config("missing endpoint_url".into()))?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| LlmError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            api_key,
            model: config.model.clone(),
            response_path: config
                .response_path
                .as_deref()
                .unwrap_or(DEFAULT_RESPONSE_PATH)
                .split('.')
                .map(str::to_owned)
                .collect(),
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> Json {
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": request.user_text}));
        json!({
            "model": self.model.as_deref().unwrap_or(&request.model_id),
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn exchange(&self, body: &Json) -> Result<(String, Json), LlmError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_error)?;
        if !(200..300).contains(&status) {
            return Err(LlmError::HttpStatus(status, text));
        }
        let json: Json = serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let content = extract_path(&json, &self.response_path)
            .and_then(Json::as_str)
            .ok_or_else(|| LlmError::BadResponse(format!("no string at {}", self.response_path.join("."))))?
            .to_owned();
        Ok((content, json))
    }
}

impl LlmClient for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let body = self.request_body(request);
        let start = Instant::now();
        // one retry on timeout; status errors are returned as-is
        let (text, json) = match self.exchange(&body) {
            Err(LlmError::Timeout) => self.exchange(&body)?,
            other => other?,
        };
        let latency = start.elapsed();
        let usage = |k: &str| json.get("usage").and_then(|u| u.get(k)).and_then(Json::as_u64);
        Ok(ChatResponse {
            text,
            latency,
            prompt_tokens: usage("prompt_tokens"),
            completion_tokens: usage("completion_tokens"),
        })
    }
}

fn map_error(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => LlmError::Timeout,
        ureq::Error::StatusCode(code) => LlmError::HttpStatus(code, String::new()),
        other => LlmError::Transport(other.to_string()),
    }
}

/// Walks a dotted path; numeric segments index arrays.
pub fn extract_path<'a, S: AsRef<str>>(json: &'a Json, path: &[S]) -> Option<&'a Json> {
    path.iter().try_fold(json, |node, seg| {
        let seg = seg.as_ref();
        match node {
            Json::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
            Json::Object(map) => map.get(seg),
            _ => None,
        }
    })
}
