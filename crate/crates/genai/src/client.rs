use std::time::{Duration, Instant};

use flipfeed_core::dataset::{render_prompt, PromptError, PromptStrategy, Scenario};
use flipfeed_core::domain::Strategy;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, EndpointConfig, EndpointKind};
use crate::extract::extract_feedback_text;

const MAX_BACKOFF_MS: u64 = 30_000;
const BODY_EXCERPT: usize = 300;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("strategy {strategy} cannot be used with {kind:?} endpoint {endpoint}")]
    Incompatible { endpoint: String, kind: EndpointKind, strategy: Strategy },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("endpoint {endpoint} rejected the request with status {status}: {body}")]
    Http { endpoint: String, status: u16, body: String },
    #[error("endpoint {endpoint} failed after {attempts} attempts: {last}")]
    RetriesExhausted { endpoint: String, attempts: u32, last: String },
    #[error("endpoint {endpoint} returned an unreadable response: {message}")]
    Decode { endpoint: String, message: String },
    #[error("endpoint {endpoint} returned an empty completion")]
    EmptyCompletion { endpoint: String },
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

/// One model response, raw and extracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedFeedback {
    pub endpoint: String,
    pub model_id: String,
    pub strategy: Strategy,
    pub problem_id: String,
    pub buggy_program_id: String,
    pub raw_response: String,
    pub feedback_text: String,
    pub degraded: bool,
    pub latency_ms: u64,
    pub attempts: u32,
}

/// Which strategy label and prompt a request resolves to on a given endpoint.
/// Fine-tuned endpoints only take the basic prompt, in its fine-tune form.
pub fn effective_strategy(endpoint: &EndpointConfig, requested: Strategy) -> Result<Strategy, GenError> {
    let incompatible =
        || GenError::Incompatible { endpoint: endpoint.name.clone(), kind: endpoint.kind, strategy: requested };
    match (endpoint.kind, requested) {
        (EndpointKind::Finetuned, Strategy::Basic | Strategy::FinetunedBasic) => Ok(Strategy::FinetunedBasic),
        (EndpointKind::Finetuned, Strategy::Engineered) => Err(incompatible()),
        (EndpointKind::Base, Strategy::FinetunedBasic) => Err(incompatible()),
        (EndpointKind::Base, s) => Ok(s),
    }
}

pub fn prompt_strategy(strategy: Strategy) -> PromptStrategy {
    match strategy {
        Strategy::Basic => PromptStrategy::Basic,
        Strategy::Engineered => PromptStrategy::Engineered,
        Strategy::FinetunedBasic => PromptStrategy::Finetune,
    }
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(GenError),
}

#[derive(Debug, Clone, Default)]
pub struct GenAiClient {
    http: reqwest::Client,
}

impl GenAiClient {
    pub fn new() -> Self {
        GenAiClient { http: reqwest::Client::new() }
    }

    fn scrub(message: String, key: Option<&str>) -> String {
        match key {
            Some(k) if !k.is_empty() => message.replace(k, "***"),
            _ => message,
        }
    }

    async fn attempt(&self, endpoint: &EndpointConfig, key: Option<&str>, body: &ChatRequest<'_>) -> Attempt {
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut request = self.http.post(url).timeout(Duration::from_millis(endpoint.timeout_ms)).json(body);
        if let Some(k) = key {
            request = request.bearer_auth(k);
        }
        let response = match request.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(Self::scrub(e.to_string(), key)),
        };
        let status = response.status();
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(Self::scrub(e.to_string(), key)),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Transient(format!("status {}", status.as_u16()));
        }
        if !status.is_success() {
            let excerpt: String = text.chars().take(BODY_EXCERPT).collect();
            return Attempt::Fatal(GenError::Http {
                endpoint: endpoint.name.clone(),
                status: status.as_u16(),
                body: Self::scrub(excerpt, key),
            });
        }
        let parsed: ChatResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => {
                return Attempt::Fatal(GenError::Decode { endpoint: endpoint.name.clone(), message: e.to_string() })
            }
        };
        match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
            Some(content) => Attempt::Done(content),
            None => Attempt::Fatal(GenError::Decode {
                endpoint: endpoint.name.clone(),
                message: "no choices[0].message.content".into(),
            }),
        }
    }

    /// Sends `prompt` as a single user message, retrying transport errors,
    /// 429 and 5xx with jittered exponential backoff. Returns the raw text and
    /// the number of attempts made.
    pub async fn complete(&self, endpoint: &EndpointConfig, prompt: &str) -> Result<(String, u32), GenError> {
        let key = endpoint.api_key()?;
        let body = ChatRequest {
            model: &endpoint.model_id,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: endpoint.temperature,
            max_tokens: endpoint.max_tokens,
        };
        let max_attempts = endpoint.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            match self.attempt(endpoint, key.as_deref(), &body).await {
                Attempt::Done(text) => return Ok((text, attempt)),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(message) => {
                    log::warn!("endpoint {} attempt {attempt}/{max_attempts}: {message}", endpoint.name);
                    last = message;
                }
            }
            if attempt < max_attempts {
                let base = endpoint.backoff_ms.saturating_mul(1 << (attempt - 1).min(16)).min(MAX_BACKOFF_MS);
                let jitter = rand::rng().random_range(0..=base / 2);
                tokio::time::sleep(Duration::from_millis(base + jitter)).await;
            }
        }
        Err(GenError::RetriesExhausted { endpoint: endpoint.name.clone(), attempts: max_attempts, last })
    }

    /// Renders the prompt for `strategy`, queries the endpoint and extracts the feedback.
    pub async fn generate_feedback(
        &self,
        endpoint: &EndpointConfig,
        scenario: &Scenario,
        strategy: Strategy,
        problem_id: &str,
        buggy_program_id: &str,
    ) -> Result<GeneratedFeedback, GenError> {
        let strategy = effective_strategy(endpoint, strategy)?;
        let prompt = render_prompt(prompt_strategy(strategy), scenario)?;
        let started = Instant::now();
        let (raw, attempts) = self.complete(endpoint, &prompt).await?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if raw.trim().is_empty() {
            return Err(GenError::EmptyCompletion { endpoint: endpoint.name.clone() });
        }
        let extraction = extract_feedback_text(&raw, endpoint.kind, strategy);
        if extraction.text.trim().is_empty() {
            return Err(GenError::EmptyCompletion { endpoint: endpoint.name.clone() });
        }
        Ok(GeneratedFeedback {
            endpoint: endpoint.name.clone(),
            model_id: endpoint.model_id.clone(),
            strategy,
            problem_id: problem_id.to_string(),
            buggy_program_id: buggy_program_id.to_string(),
            raw_response: raw,
            feedback_text: extraction.text,
            degraded: extraction.degraded,
            latency_ms,
            attempts,
        })
    }
}
