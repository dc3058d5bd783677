//! Review queue, evaluation and source-registry subcommands.

use std::path::Path;

use docpipe_core::ingest::{add_sources, SourceError, SourceSpec};
use docpipe_core::metrics::{evaluate, load_gold, load_predictions, EvalResult, MatchConfig, MetricsError, Prediction};
use docpipe_core::schema::RuleViolation;
use docpipe_core::store::{Collection, DocumentStore, NormalizedRecord, ReviewDecision, ReviewItem, StoreError};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, PipelineConfig};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("evaluation: {0}")]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sources(#[from] SourceError),
    #[error("reading {path}: {message}")]
    Input { path: String, message: String },
}

/// Condensed view of a pending review item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSummary {
    pub doc_id: String,
    pub flagged_fields: Vec<String>,
    pub rule_violations: Vec<RuleViolation>,
    pub gate_violations: Vec<RuleViolation>,
}

impl From<&ReviewItem> for ReviewSummary {
    fn from(item: &ReviewItem) -> Self {
        Self {
            doc_id: item.doc_id.clone(),
            flagged_fields: item.report.flagged_fields.clone(),
            rule_violations: item.report.rule_violations.clone(),
            gate_violations: item.gate_violations.clone(),
        }
    }
}

pub fn review_list(config: &PipelineConfig) -> Result<Vec<ReviewSummary>, CommandError> {
    let store = DocumentStore::open(&config.store_root)?;
    Ok(store.pending_reviews()?.iter().map(ReviewSummary::from).collect())
}

pub fn review_resolve(
    config: &PipelineConfig,
    id: &str,
    decision: ReviewDecision,
    note: Option<String>,
) -> Result<ReviewItem, CommandError> {
    let schema = config.load_schema()?;
    let store = DocumentStore::open(&config.store_root)?;
    Ok(store.resolve_review(id, decision, note, &schema, config.clock().as_ref())?)
}

/// Scores predictions against gold annotations. Without a predictions file the
/// normalized records of the configured schema version are used.
pub fn eval(config: &PipelineConfig, gold: &Path, predictions: Option<&Path>) -> Result<EvalResult, CommandError> {
    let schema = config.load_schema()?;
    let gold = load_gold(gold)?;
    let predictions = match predictions {
        Some(path) => load_predictions(path)?,
        None => {
            let store = DocumentStore::open_read_only(&config.store_root)?;
            store
                .scan::<NormalizedRecord>(Collection::Normalized)?
                .iter()
                .filter(|r| r.schema_id == schema.schema_id && r.schema_version == schema.version)
                .map(Prediction::from)
                .collect()
        }
    };
    let match_config = MatchConfig {
        semantic_threshold: config.validation.field_similarity_threshold,
        numeric_tolerance: config.validation.numeric_tolerance,
    };
    Ok(evaluate(&predictions, &gold, &schema, config.embedder().as_ref(), &match_config)?)
}

/// Adds the sources in `file` (one object or an array) to the configured registry.
pub fn add_source(config: &PipelineConfig, file: &Path) -> Result<Vec<SourceSpec>, CommandError> {
    let text = std::fs::read_to_string(file).map_err(|e| CommandError::Input {
        path: file.display().to_string(),
        message: e.to_string(),
    })?;
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Box<SourceSpec>),
        Many(Vec<SourceSpec>),
    }
    let new = match serde_json::from_str(&text) {
        Ok(OneOrMany::One(s)) => vec![*s],
        Ok(OneOrMany::Many(v)) => v,
        Err(e) => {
            return Err(CommandError::Input {
                path: file.display().to_string(),
                message: e.to_string(),
            })
        }
    };
    Ok(add_sources(&config.sources, new)?)
}
