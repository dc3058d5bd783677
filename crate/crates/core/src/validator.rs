//! Multi-replica hallucination check.
//!
//! A reference record N0 is generated at a high temperature and K replicas at a
//! low one. Stage 1 compares every field of N0 with each replica: semantic
//! fields by embedding cosine (minimum across replicas), exact and numeric
//! fields by agreement after normalization. Stage 2 runs the schema rules on
//! N0. N0 is the record that gets stored; replicas are evidence only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider};
use crate::ingest::RawDocument;
use crate::normalize::{number_value, value_text};
use crate::schema::{validate_record, Comparison, ExtractionSchema, FieldMap, FieldSpec, RuleViolation};
use crate::structurer::{CandidateRecord, Structurer};

/// Relative tolerance for numeric agreement and matching.
pub const NUMERIC_TOLERANCE: f64 = 0.005;
/// Guards relative tolerance against zero references.
pub const TOLERANCE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub num_replicas: u32,
    pub reference_temperature: f64,
    pub replica_temperature: f64,
    pub field_similarity_threshold: f64,
    /// Per-field overrides of `field_similarity_threshold`.
    pub field_thresholds: BTreeMap<String, f64>,
    pub structural_check: bool,
    pub numeric_tolerance: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            num_replicas: 2,
            reference_temperature: 0.7,
            replica_temperature: 0.1,
            field_similarity_threshold: 0.85,
            field_thresholds: BTreeMap::new(),
            structural_check: true,
            numeric_tolerance: NUMERIC_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("replica_temperature {replica} exceeds reference_temperature {reference}")]
    Temperatures { reference: f64, replica: f64 },
    #[error("similarity threshold {0} for {1:?} is outside (0, 1]")]
    Threshold(f64, String),
    #[error("numeric tolerance {0} is negative")]
    Tolerance(f64),
    #[error("no reports to aggregate")]
    Empty,
}

impl ValidationConfig {
    pub fn check(&self) -> Result<(), ValidationError> {
        if self.replica_temperature > self.reference_temperature {
            return Err(ValidationError::Temperatures {
                reference: self.reference_temperature,
                replica: self.replica_temperature,
            });
        }
        let thresholds = std::iter::once(("*", self.field_similarity_threshold))
            .chain(self.field_thresholds.iter().map(|(k, v)| (k.as_str(), *v)));
        for (field, t) in thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(ValidationError::Threshold(t, field.to_string()));
            }
        }
        if self.numeric_tolerance.is_nan() || self.numeric_tolerance < 0.0 {
            return Err(ValidationError::Tolerance(self.numeric_tolerance));
        }
        Ok(())
    }

    pub fn threshold_for(&self, field: &str) -> f64 {
        self.field_thresholds
            .get(field)
            .copied()
            .unwrap_or(self.field_similarity_threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Reprocess,
    ManualReview,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldCheck {
    /// Minimum cosine against the replicas (semantic fields only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_similarity: Option<f64>,
    /// Agreement with every replica (exact and numeric fields only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structural_agreement: Option<bool>,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cost {
    pub total_tokens: u64,
    pub total_latency_ms: u64,
    pub calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub doc_id: String,
    pub schema_id: String,
    pub schema_version: u32,
    pub per_field: BTreeMap<String, FieldCheck>,
    pub rule_violations: Vec<RuleViolation>,
    pub verdict: Verdict,
    pub flagged_fields: Vec<String>,
    pub cost: Cost,
    pub replicas: u32,
    pub reasks: u32,
    /// Minimum cosine between the whole N0 record and each replica. Diagnostic only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Result of comparing one reference record with its replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldComparison {
    pub per_field: BTreeMap<String, FieldCheck>,
    pub flagged_fields: Vec<String>,
}

fn present_value<'a>(record: &'a FieldMap, name: &str) -> Option<&'a Value> {
    record
        .get(name)
        .filter(|v| !v.is_null() && !value_text(v).trim().is_empty())
}

fn present(record: &FieldMap, name: &str) -> Option<String> {
    present_value(record, name).map(value_text)
}

/// Cosine between two field texts; texts without embeddable tokens fall back
/// to string equality.
fn text_similarity(embedder: &dyn EmbeddingProvider, a: &str, b: &str) -> Result<f64, EmbeddingError> {
    if a == b {
        return Ok(1.0);
    }
    match (embedder.embed(a), embedder.embed(b)) {
        (Ok(va), Ok(vb)) => cosine_similarity(&va, &vb),
        (Err(e), _) | (_, Err(e)) if e.is_retryable() => Err(e),
        _ => Ok(0.0),
    }
}

/// Relative agreement `|a - r| <= tol * max(|r|, eps)`.
pub fn numbers_agree(reference: f64, other: f64, tolerance: f64) -> bool {
    (other - reference).abs() <= tolerance * reference.abs().max(TOLERANCE_EPSILON)
}

fn structurally_equal(spec: &FieldSpec, reference: &Value, other: &Value, tolerance: f64) -> bool {
    if spec.comparison == Comparison::NumericTolerance {
        if let (Some(r), Some(o)) = (number_value(reference), number_value(other)) {
            return numbers_agree(r, o, tolerance);
        }
    }
    value_text(reference).trim() == value_text(other).trim()
}

/// Stage 1: per-field comparison of `reference` against every replica.
///
/// A field absent from the reference and from a replica agrees; absent from
/// only one of them disagrees.
pub fn compare_records(
    schema: &ExtractionSchema,
    reference: &FieldMap,
    replicas: &[FieldMap],
    embedder: &dyn EmbeddingProvider,
    config: &ValidationConfig,
) -> Result<FieldComparison, EmbeddingError> {
    let mut per_field = BTreeMap::new();
    let mut flagged_fields = Vec::new();
    for spec in &schema.fields {
        let name = spec.name.as_str();
        let mut check = FieldCheck::default();
        let r = present(reference, name);
        match spec.comparison {
            Comparison::Semantic => {
                let mut min: Option<f64> = None;
                for replica in replicas {
                    let sim = match (&r, present(replica, name)) {
                        (None, None) => 1.0,
                        (Some(a), Some(b)) => text_similarity(embedder, a, &b)?,
                        _ => 0.0,
                    };
                    min = Some(min.map_or(sim, |m| m.min(sim)));
                }
                check.min_similarity = min;
                check.flagged = min.is_some_and(|m| m < config.threshold_for(name));
            }
            Comparison::Exact | Comparison::NumericTolerance if config.structural_check && !replicas.is_empty() => {
                let agree = replicas.iter().all(|replica| {
                    match (present_value(reference, name), present_value(replica, name)) {
                        (None, None) => true,
                        (Some(a), Some(b)) => structurally_equal(spec, a, b, config.numeric_tolerance),
                        _ => false,
                    }
                });
                check.structural_agreement = Some(agree);
                check.flagged = !agree;
            }
            _ => {}
        }
        if check.flagged {
            flagged_fields.push(spec.name.clone());
        }
        per_field.insert(spec.name.clone(), check);
    }
    Ok(FieldComparison {
        per_field,
        flagged_fields,
    })
}

fn record_text(record: &FieldMap) -> String {
    record
        .iter()
        .map(|(k, v)| format!("{k}: {}", value_text(v)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn record_similarity(embedder: &dyn EmbeddingProvider, reference: &FieldMap, replicas: &[FieldMap]) -> Option<f64> {
    let a = record_text(reference);
    replicas
        .iter()
        .filter_map(|r| text_similarity(embedder, &a, &record_text(r)).ok())
        .reduce(f64::min)
}

/// Generates N0 and K replicas through `structurer`, compares them and applies
/// the schema rules. Returns N0 (when it could be produced) and the report.
pub fn validate(
    doc: &RawDocument,
    structurer: &Structurer<'_>,
    embedder: &dyn EmbeddingProvider,
    config: &ValidationConfig,
) -> (Option<CandidateRecord>, ValidationReport) {
    let schema = structurer.schema;
    let mut report = ValidationReport {
        doc_id: doc.doc_id.clone(),
        schema_id: schema.schema_id.clone(),
        schema_version: schema.version,
        per_field: BTreeMap::new(),
        rule_violations: Vec::new(),
        verdict: Verdict::Reprocess,
        flagged_fields: Vec::new(),
        cost: Cost::default(),
        replicas: config.num_replicas,
        reasks: 0,
        record_similarity: None,
        errors: Vec::new(),
    };

    let charge = |report: &mut ValidationReport, extraction: &crate::structurer::Extraction| {
        for call in &extraction.calls {
            report.cost.total_tokens += call.tokens;
            report.cost.total_latency_ms += call.latency_ms;
            report.cost.calls += 1;
        }
        report.reasks += extraction.reasks;
    };

    let first = structurer.extract(doc, config.reference_temperature, 0);
    charge(&mut report, &first);
    let reference = match first.outcome {
        Ok(candidate) => candidate,
        Err(e) => {
            report.verdict = if e.is_reprocessable() { Verdict::Reprocess } else { Verdict::ManualReview };
            report.errors.push(format!("reference: {e}"));
            return (None, report);
        }
    };

    let mut replicas = Vec::with_capacity(config.num_replicas as usize);
    let mut replica_failure = None;
    for i in 1..=config.num_replicas {
        let extraction = structurer.extract(doc, config.replica_temperature, i);
        charge(&mut report, &extraction);
        match extraction.outcome {
            Ok(candidate) => replicas.push(candidate.fields),
            Err(e) => {
                report.errors.push(format!("replica {i}: {e}"));
                replica_failure = Some(e);
                break;
            }
        }
    }

    report.rule_violations = validate_record(schema, &reference.fields);
    if let Some(e) = replica_failure {
        report.verdict = if e.is_reprocessable() { Verdict::Reprocess } else { Verdict::ManualReview };
        return (Some(reference), report);
    }

    match compare_records(schema, &reference.fields, &replicas, embedder, config) {
        Ok(comparison) => {
            report.per_field = comparison.per_field;
            report.flagged_fields = comparison.flagged_fields;
        }
        Err(e) => {
            report.errors.push(format!("embedding: {e}"));
            report.verdict = Verdict::Reprocess;
            return (Some(reference), report);
        }
    }
    report.record_similarity = record_similarity(embedder, &reference.fields, &replicas);
    report.verdict = if report.flagged_fields.is_empty() && report.rule_violations.is_empty() {
        Verdict::Accepted
    } else {
        Verdict::ManualReview
    };
    (Some(reference), report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub documents: u64,
    pub accepted_rate: f64,
    pub flagged_rate: f64,
    pub mean_tokens_per_object: f64,
    pub mean_latency_ms: f64,
    pub total_tokens: u64,
    pub total_calls: u64,
}

pub fn aggregate_run_stats(reports: &[ValidationReport]) -> Result<RunStats, ValidationError> {
    if reports.is_empty() {
        return Err(ValidationError::Empty);
    }
    let n = reports.len() as f64;
    let accepted = reports.iter().filter(|r| r.verdict == Verdict::Accepted).count() as f64;
    let flagged = reports.iter().filter(|r| !r.flagged_fields.is_empty()).count() as f64;
    let tokens: u64 = reports.iter().map(|r| r.cost.total_tokens).sum();
    let latency: u64 = reports.iter().map(|r| r.cost.total_latency_ms).sum();
    Ok(RunStats {
        documents: reports.len() as u64,
        accepted_rate: accepted / n,
        flagged_rate: flagged / n,
        mean_tokens_per_object: tokens as f64 / n,
        mean_latency_ms: latency as f64 / n,
        total_tokens: tokens,
        total_calls: reports.iter().map(|r| r.cost.calls).sum(),
    })
}
