//! LLM-backed extraction of a candidate record from one document.
//!
//! [`build_prompt`] assembles the request, [`invoke`] calls the provider with
//! retries, [`parse_candidate`] pulls the JSON object out of the answer and
//! [`normalize_candidate`] canonicalizes the values. [`Structurer`] strings the
//! four together, including the single re-ask on unparseable output.

mod parse;
mod prompt;
mod provider;

use serde::{Deserialize, Serialize};

use crate::ingest::RawDocument;
use crate::schema::{ExtractionSchema, FieldMap};

pub use parse::{normalize_candidate, parse_candidate, ParseError};
pub use prompt::{build_prompt, estimate_tokens, ChatMessage, LlmRequest, PromptConfig, PromptError};
pub use provider::{invoke, InvokeError, Invocation, LlmProvider, ProviderError, RemoteLlm, RetryPolicy};

/// Sampling temperature of the reference generation.
pub const DEFAULT_REFERENCE_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub model_id: String,
}

impl LlmResponse {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub call_index: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub fields: FieldMap,
    pub provenance: Provenance,
    #[serde(default)]
    pub parse_repairs: Vec<String>,
}

/// Cost figures of one answered call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CallCost {
    pub tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureError {
    #[error("prompt: {message}")]
    Prompt { message: String },
    #[error("provider failed after {attempts} attempts: {message}")]
    ProviderExhausted { attempts: u32, message: String },
    #[error("provider rejected the request: {message}")]
    ProviderFatal { message: String },
    #[error("unparseable output after re-ask: {message}")]
    Unparseable { message: String },
}

impl StructureError {
    /// Transient and parse failures send the document back for reprocessing.
    pub fn is_reprocessable(&self) -> bool {
        matches!(
            self,
            StructureError::ProviderExhausted { .. } | StructureError::Unparseable { .. }
        )
    }
}

/// Result of one logical extraction: the record (or why there is none) and
/// the cost of every call that was answered on the way.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub outcome: Result<CandidateRecord, StructureError>,
    pub calls: Vec<CallCost>,
    pub attempts: u32,
    pub reasks: u32,
}

pub struct Structurer<'a> {
    pub provider: &'a dyn LlmProvider,
    pub schema: &'a ExtractionSchema,
    pub prompt: PromptConfig,
    pub retry: RetryPolicy,
}

impl<'a> Structurer<'a> {
    pub fn new(provider: &'a dyn LlmProvider, schema: &'a ExtractionSchema) -> Self {
        Self {
            provider,
            schema,
            prompt: PromptConfig::default(),
            retry: RetryPolicy::default(),
        }
    }

    /// Build, invoke, parse (re-asking once on unparseable output) and normalize.
    pub fn extract(&self, doc: &RawDocument, temperature: f64, call_index: u32) -> Extraction {
        let mut extraction = Extraction {
            outcome: Err(StructureError::Prompt {
                message: "not attempted".into(),
            }),
            calls: Vec::new(),
            attempts: 0,
            reasks: 0,
        };
        let mut config = self.prompt.clone();
        config.temperature = temperature;
        let mut request = match build_prompt(self.schema, doc, &config) {
            Ok(r) => r,
            Err(e) => {
                extraction.outcome = Err(StructureError::Prompt {
                    message: e.to_string(),
                });
                return extraction;
            }
        };
        request.call_index = call_index;

        loop {
            let invocation = match invoke(self.provider, &request, &self.retry) {
                Ok(inv) => inv,
                Err(e) => {
                    extraction.attempts += e.attempts;
                    extraction.outcome = Err(match e.last_error {
                        ProviderError::Fatal(message) => StructureError::ProviderFatal { message },
                        ProviderError::Transient(message) => StructureError::ProviderExhausted {
                            attempts: e.attempts,
                            message,
                        },
                    });
                    return extraction;
                }
            };
            extraction.attempts += invocation.attempts;
            extraction.calls.push(CallCost {
                tokens: invocation.response.total_tokens(),
                latency_ms: invocation.response.latency_ms,
            });
            match parse_candidate(&request, &invocation.response) {
                Ok(candidate) => {
                    extraction.outcome = Ok(normalize_candidate(candidate, self.schema));
                    return extraction;
                }
                Err(e) if request.attempt == 0 => {
                    log::debug!("re-asking for {} after parse failure: {e}", doc.doc_id);
                    extraction.reasks += 1;
                    request = match request.with_reask(&e.to_string()) {
                        Ok(r) => r,
                        Err(pe) => {
                            extraction.outcome = Err(StructureError::Prompt {
                                message: pe.to_string(),
                            });
                            return extraction;
                        }
                    };
                }
                Err(e) => {
                    extraction.outcome = Err(StructureError::Unparseable {
                        message: e.to_string(),
                    });
                    return extraction;
                }
            }
        }
    }
}
