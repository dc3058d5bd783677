//! Evaluation: semantic retention of summaries and field-level scoring of
//! predicted records against gold annotations (weighted F-score, critical
//! error rate, hallucination rate).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider};
use crate::normalize::{normalize_value, number_value, value_text};
use crate::schema::{Comparison, ExtractionSchema, FieldMap, FieldSpec};
use crate::store::NormalizedRecord;
use crate::structurer::CandidateRecord;
use crate::validator::{numbers_agree, NUMERIC_TOLERANCE};

pub const DEFAULT_SEMANTIC_THRESHOLD: f64 = 0.85;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("text is empty")]
    EmptyText,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("predictions without gold: {missing_gold:?}; gold without predictions: {missing_prediction:?}")]
    Join {
        missing_gold: Vec<String>,
        missing_prediction: Vec<String>,
    },
    #[error("doc_id {0:?} appears more than once")]
    DuplicateDoc(String),
    #[error("gold {doc_id:?}: field {field:?} has a value but is not in present_fields")]
    GoldInvariant { doc_id: String, field: String },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub doc_id: String,
    pub fields: FieldMap,
    /// Fields that actually occur in the source document.
    pub present_fields: BTreeSet<String>,
}

impl GoldAnnotation {
    pub fn check(&self) -> Result<(), MetricsError> {
        match self.fields.keys().find(|k| !self.present_fields.contains(*k)) {
            Some(field) => Err(MetricsError::GoldInvariant {
                doc_id: self.doc_id.clone(),
                field: field.clone(),
            }),
            None => Ok(()),
        }
    }
}

/// A predicted record: the fields a system produced for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub fields: FieldMap,
}

impl From<&NormalizedRecord> for Prediction {
    fn from(r: &NormalizedRecord) -> Self {
        Self {
            doc_id: r.doc_id.clone(),
            fields: r.fields.clone(),
        }
    }
}

impl From<&CandidateRecord> for Prediction {
    fn from(c: &CandidateRecord) -> Self {
        Self {
            doc_id: c.provenance.doc_id.clone(),
            fields: c.fields.clone(),
        }
    }
}

fn read_ndjson<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| MetricsError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Gold annotations, one JSON object per line.
pub fn load_gold(path: &Path) -> Result<Vec<GoldAnnotation>, MetricsError> {
    let gold: Vec<GoldAnnotation> = read_ndjson(path)?;
    for g in &gold {
        g.check()?;
    }
    Ok(gold)
}

/// Predictions, one `{doc_id, fields}` object per line. Stored normalized
/// records have that shape too.
pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, MetricsError> {
    read_ndjson(path)
}

/// Cosine between the embeddings of an original text and its summary.
pub fn semantic_retention(original: &str, summary: &str, embedder: &dyn EmbeddingProvider) -> Result<f64, MetricsError> {
    if original.trim().is_empty() || summary.trim().is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let a = embedder.embed(original)?;
    let b = embedder.embed(summary)?;
    Ok(cosine_similarity(&a, &b)?)
}

/// Arithmetic mean of the per-pair retention.
pub fn mean_retention(pairs: &[(String, String)], embedder: &dyn EmbeddingProvider) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let mut sum = 0.0;
    for (original, summary) in pairs {
        sum += semantic_retention(original, summary, embedder)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean retention per document group, e.g. a category stored under a
/// metadata key. Items are (group, original, summary).
pub fn retention_by_group(
    items: &[(String, String, String)],
    embedder: &dyn EmbeddingProvider,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut groups: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (group, original, summary) in items {
        let r = semantic_retention(original, summary, embedder)?;
        let slot = groups.entry(group.clone()).or_default();
        slot.0 += r;
        slot.1 += 1;
    }
    Ok(groups.into_iter().map(|(g, (sum, n))| (g, sum / n as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub semantic_threshold: f64,
    pub numeric_tolerance: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            semantic_threshold: DEFAULT_SEMANTIC_THRESHOLD,
            numeric_tolerance: NUMERIC_TOLERANCE,
        }
    }
}

/// Whether a predicted value matches the reference under the field's comparison.
pub fn field_match(
    spec: &FieldSpec,
    predicted: &Value,
    reference: &Value,
    embedder: &dyn EmbeddingProvider,
    config: &MatchConfig,
) -> bool {
    let p = normalize_value(spec, predicted);
    let r = normalize_value(spec, reference);
    let (pt, rt) = (value_text(&p).trim().to_string(), value_text(&r).trim().to_string());
    match spec.comparison {
        Comparison::Exact => pt == rt,
        Comparison::NumericTolerance => match (number_value(&p), number_value(&r)) {
            (Some(pn), Some(rn)) => numbers_agree(rn, pn, config.numeric_tolerance),
            _ => pt == rt,
        },
        Comparison::Semantic => {
            if pt == rt {
                return true;
            }
            match (embedder.embed(&pt), embedder.embed(&rt)) {
                (Ok(a), Ok(b)) => cosine_similarity(&a, &b).is_ok_and(|c| c >= config.semantic_threshold),
                _ => false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub weight: f64,
}

impl FieldScore {
    pub fn support(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    fn finish(&mut self) {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        self.precision = ratio(self.tp, self.tp + self.fp);
        self.recall = ratio(self.tp, self.tp + self.fn_);
        let sum = self.precision + self.recall;
        self.f_score = if sum == 0.0 { 0.0 } else { 2.0 * self.precision * self.recall / sum };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub documents: u64,
    pub weighted_f_score: f64,
    pub critical_error_rate: f64,
    pub hallucination_rate: f64,
    pub per_field_scores: BTreeMap<String, FieldScore>,
}

fn present(fields: &FieldMap, name: &str) -> Option<Value> {
    fields
        .get(name)
        .filter(|v| !v.is_null() && !value_text(v).trim().is_empty())
        .cloned()
}

/// Scores predictions against gold annotations joined on doc_id.
///
/// Per field: TP = predicted, in the reference and matched; FP = predicted and
/// (absent from the reference or unmatched); FN = in the reference and
/// (not predicted or unmatched). Fields with no support at all are left out
/// of the weighted mean.
pub fn evaluate(
    predictions: &[Prediction],
    gold: &[GoldAnnotation],
    schema: &ExtractionSchema,
    embedder: &dyn EmbeddingProvider,
    config: &MatchConfig,
) -> Result<EvalResult, MetricsError> {
    let mut by_doc: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in predictions {
        if by_doc.insert(p.doc_id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicateDoc(p.doc_id.clone()));
        }
    }
    let mut gold_ids = BTreeSet::new();
    for g in gold {
        g.check()?;
        if !gold_ids.insert(g.doc_id.as_str()) {
            return Err(MetricsError::DuplicateDoc(g.doc_id.clone()));
        }
    }
    let missing_gold: Vec<String> = by_doc.keys().filter(|d| !gold_ids.contains(*d)).map(|d| d.to_string()).collect();
    let missing_prediction: Vec<String> = gold_ids.iter().filter(|d| !by_doc.contains_key(*d)).map(|d| d.to_string()).collect();
    if !missing_gold.is_empty() || !missing_prediction.is_empty() {
        return Err(MetricsError::Join {
            missing_gold,
            missing_prediction,
        });
    }

    let mut scores: BTreeMap<String, FieldScore> = schema
        .fields
        .iter()
        .map(|f| {
            (
                f.name.clone(),
                FieldScore {
                    weight: f.weight,
                    ..FieldScore::default()
                },
            )
        })
        .collect();
    let mut critical_errors = 0u64;
    let mut hallucinating = 0u64;

    for g in gold {
        let prediction = by_doc[g.doc_id.as_str()];
        let mut critical_error = false;
        for spec in &schema.fields {
            let p = present(&prediction.fields, &spec.name);
            let r = present(&g.fields, &spec.name);
            let matched = match (&p, &r) {
                (Some(p), Some(r)) => field_match(spec, p, r, embedder, config),
                _ => false,
            };
            let score = scores.get_mut(&spec.name).expect("score per schema field");
            match (p.is_some(), r.is_some(), matched) {
                (true, true, true) => score.tp += 1,
                (true, true, false) => {
                    score.fp += 1;
                    score.fn_ += 1;
                }
                (true, false, _) => score.fp += 1,
                (false, true, _) => score.fn_ += 1,
                (false, false, _) => {}
            }
            if spec.critical && (p.is_some() || r.is_some()) && !matched {
                critical_error = true;
            }
        }
        critical_errors += critical_error as u64;
        let invented = prediction
            .fields
            .keys()
            .filter(|k| present(&prediction.fields, k).is_some())
            .any(|k| !g.present_fields.contains(k));
        hallucinating += invented as u64;
    }

    let mut weight_sum = 0.0;
    let mut weighted = 0.0;
    for score in scores.values_mut() {
        score.finish();
        if score.support() > 0 {
            weight_sum += score.weight;
            weighted += score.weight * score.f_score;
        }
    }
    let n = gold.len() as f64;
    let rate = |count: u64| if gold.is_empty() { 0.0 } else { count as f64 / n };
    Ok(EvalResult {
        documents: gold.len() as u64,
        weighted_f_score: if weight_sum == 0.0 { 0.0 } else { weighted / weight_sum },
        critical_error_rate: rate(critical_errors),
        hallucination_rate: rate(hallucinating),
        per_field_scores: scores,
    })
}
