use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LlmRequest, LlmResponse};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    /// Timeouts, rate limits, 5xx: worth retrying.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Fatal(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

pub trait LlmProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 250,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub response: LlmResponse,
    pub attempts: u32,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("after {attempts} attempts: {last_error}")]
pub struct InvokeError {
    pub attempts: u32,
    pub last_error: ProviderError,
}

/// Calls the provider, retrying transient failures with exponential backoff.
pub fn invoke(
    provider: &dyn LlmProvider,
    request: &LlmRequest,
    policy: &RetryPolicy,
) -> Result<Invocation, InvokeError> {
    let max = policy.max_attempts.max(1);
    let mut attempts = 0;
    loop {
        attempts += 1;
        match provider.complete(request) {
            Ok(response) => return Ok(Invocation { response, attempts }),
            Err(e) if e.is_retryable() && attempts < max => {
                let backoff = policy.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(16));
                log::debug!("provider attempt {attempts} for {} failed: {e}", request.doc_id);
                if backoff > 0 {
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
            Err(last_error) => return Err(InvokeError { attempts, last_error }),
        }
    }
}

/// Chat-completion endpoint speaking a small JSON protocol:
/// request `{model, temperature, max_tokens, messages}`,
/// response `{text, usage: {prompt_tokens, completion_tokens}}`.
pub struct RemoteLlm {
    model: String,
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct Reply {
    text: String,
    usage: Usage,
}

impl RemoteLlm {
    pub fn new(model: &str, endpoint: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            model: model.to_string(),
            endpoint: endpoint.to_string(),
            agent,
        }
    }
}

impl LlmProvider for RemoteLlm {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        let body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": request.messages(),
        });
        let started = Instant::now();
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(ProviderError::Fatal(format!("HTTP {status}")));
        }
        let reply: Reply = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Fatal(format!("malformed reply: {e}")))?;
        Ok(LlmResponse {
            text: reply.text,
            prompt_tokens: reply.usage.prompt_tokens,
            completion_tokens: reply.usage.completion_tokens,
            latency_ms: started.elapsed().as_millis() as u64,
            model_id: self.model.clone(),
        })
    }
}
