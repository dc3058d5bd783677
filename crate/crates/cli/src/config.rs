use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use docpipe_core::clock::{Clock, FixedClock, SystemClock};
use docpipe_core::dedup::DEFAULT_THRESHOLD;
use docpipe_core::embedding::{EmbeddingProvider, HashedTfEmbedder, RemoteEmbedder, REFERENCE_DIM};
use docpipe_core::ingest::HttpConfig;
use docpipe_core::mockllm::{load_scripts, MockConfig, MockLlm};
use docpipe_core::schema::ExtractionSchema;
use docpipe_core::structurer::{LlmProvider, PromptConfig, RemoteLlm, RetryPolicy};
use docpipe_core::validator::ValidationConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {message}")]
    Read { path: String, message: String },
    #[error("{field}: file {path} does not exist")]
    MissingFile { field: &'static str, path: String },
    #[error("workers must be at least 1")]
    Workers,
    #[error("dedup_threshold {0} is outside (0, 1]")]
    DedupThreshold(f64),
    #[error("{0}")]
    Invalid(String),
}

fn default_embedding_dim() -> usize {
    REFERENCE_DIM
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum EmbeddingSelection {
    HashedTf {
        #[serde(default = "default_embedding_dim")]
        dim: usize,
    },
    Remote {
        id: String,
        endpoint: String,
        dim: usize,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

impl Default for EmbeddingSelection {
    fn default() -> Self {
        EmbeddingSelection::HashedTf {
            dim: REFERENCE_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum LlmSelection {
    Mock {
        #[serde(flatten)]
        mock: MockConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scripts: Option<PathBuf>,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_workers() -> usize {
    1
}

fn default_dedup_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Whole pipeline configuration, read from one JSON document. Relative paths
/// are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sources: PathBuf,
    pub schema: PathBuf,
    pub store_root: PathBuf,
    #[serde(default)]
    pub embedding: EmbeddingSelection,
    pub llm: LlmSelection,
    #[serde(default = "default_dedup_threshold")]
    pub dedup_threshold: f64,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub http: HttpConfig,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Pins every timestamp the pipeline writes; makes runs reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_time: Option<DateTime<Utc>>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub replicas: Option<u32>,
    pub dedup_threshold: Option<f64>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let read_err = |message: String| ConfigError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let mut config: PipelineConfig = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.sources);
        resolve(base, &mut config.schema);
        resolve(base, &mut config.store_root);
        if let LlmSelection::Mock { scripts: Some(s), .. } = &mut config.llm {
            resolve(base, s);
        }
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(w) = overrides.workers {
            self.workers = w;
        }
        if let Some(k) = overrides.replicas {
            self.validation.num_replicas = k;
        }
        if let Some(t) = overrides.dedup_threshold {
            self.dedup_threshold = t;
        }
    }

    /// Startup checks: referenced files exist and numeric settings are in range.
    pub fn check(&self) -> Result<(), ConfigError> {
        if !self.schema.is_file() {
            return Err(ConfigError::MissingFile {
                field: "schema",
                path: self.schema.display().to_string(),
            });
        }
        if !self.sources.is_file() {
            return Err(ConfigError::MissingFile {
                field: "sources",
                path: self.sources.display().to_string(),
            });
        }
        if let LlmSelection::Mock { scripts, mock } = &self.llm {
            if let Some(s) = scripts.as_ref().filter(|s| !s.is_file()) {
                return Err(ConfigError::MissingFile {
                    field: "llm.scripts",
                    path: s.display().to_string(),
                });
            }
            mock.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.workers < 1 {
            return Err(ConfigError::Workers);
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return Err(ConfigError::DedupThreshold(self.dedup_threshold));
        }
        self.validation.check().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn load_schema(&self) -> Result<ExtractionSchema, ConfigError> {
        ExtractionSchema::load_file(&self.schema).map_err(|e| ConfigError::Read {
            path: self.schema.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn clock(&self) -> Box<dyn Clock> {
        match self.fixed_time {
            Some(t) => Box::new(FixedClock(t)),
            None => Box::new(SystemClock),
        }
    }

    pub fn embedder(&self) -> Box<dyn EmbeddingProvider> {
        match &self.embedding {
            EmbeddingSelection::HashedTf { dim } => Box::new(HashedTfEmbedder::with_dim(*dim)),
            EmbeddingSelection::Remote {
                id,
                endpoint,
                dim,
                timeout_ms,
            } => Box::new(RemoteEmbedder::new(id, endpoint, *dim, Duration::from_millis(*timeout_ms))),
        }
    }

    pub fn provider(&self, schema: &ExtractionSchema) -> Result<Box<dyn LlmProvider>, ConfigError> {
        Ok(match &self.llm {
            LlmSelection::Mock { mock, scripts } => {
                let scripts = match scripts {
                    Some(path) => load_scripts(path).map_err(|e| ConfigError::Read {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?,
                    None => Vec::new(),
                };
                Box::new(
                    MockLlm::new(mock.clone(), schema.clone(), scripts)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                )
            }
            LlmSelection::Remote {
                endpoint,
                model,
                timeout_ms,
            } => Box::new(RemoteLlm::new(model, endpoint, Duration::from_millis(*timeout_ms))),
        })
    }
}
