//! Deterministic, scriptable stand-in for an LLM provider.
//!
//! Unscripted documents get a record built from `name: value` lines in the
//! document text. The reference call (call index 0) replaces each field with an
//! invented value with probability `per_field_hallucination_prob`; replicas copy
//! the reference's grounded values and reproduce an invented one with the
//! probability given by the agreement model. Every random draw comes from a
//! SplitMix64 generator seeded by an FNV-1a hash of (seed, doc_id, call index,
//! field, purpose), so results do not depend on call order or thread timing.
//!
//! Invented values use a sentinel vocabulary that grounded values never hit:
//!
//! | kind       | invented value                                       |
//! |------------|------------------------------------------------------|
//! | text       | tokens `zzh` + 5 hex digits                          |
//! | identifier | `ZZHX-` + 6 hex digits                               |
//! | number     | 3rd and 4th decimals `77`, at least 0.7% off truth   |
//! | timestamp  | year 2099                                            |
//! | category   | an allowed value other than the grounded one         |

use std::collections::HashMap;
use std::hash::Hasher;
use std::path::Path;

use chrono::{Datelike, Duration as ChronoDuration, NaiveDate};
use fnv::FnvHasher;
use parking_lot::Mutex;
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::normalize::{self, canonical_number, parse_number, parse_timestamp, render_decimal, render_timestamp};
use crate::schema::{ExtractionSchema, FieldKind, FieldMap, FieldSpec};
use crate::structurer::{LlmProvider, LlmRequest, LlmResponse, ProviderError};

const TEXT_SENTINEL: &str = "zzh";
const ID_SENTINEL: &str = "ZZHX-";
const SENTINEL_YEAR: i32 = 2099;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AgreementModel {
    /// Replicas reproduce an invented value only by chance.
    #[default]
    Independent,
    /// Replicas copy the reference's invented value with probability rho.
    Correlated(f64),
}

fn default_tokens() -> u64 {
    800
}

fn default_latency() -> u64 {
    420
}

fn default_pool() -> u32 {
    1
}

fn default_model() -> String {
    "mock-llm".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub per_field_hallucination_prob: f64,
    #[serde(default)]
    pub replica_agreement_model: AgreementModel,
    #[serde(default = "default_tokens")]
    pub tokens_per_call: u64,
    #[serde(default = "default_latency")]
    pub latency_per_call_ms: u64,
    /// Number of equally likely invented values per field. An independent
    /// replica that hallucinates hits the reference's invention with
    /// probability 1/invention_pool.
    #[serde(default = "default_pool")]
    pub invention_pool: u32,
    #[serde(default = "default_model")]
    pub model_id: String,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            per_field_hallucination_prob: 0.0,
            replica_agreement_model: AgreementModel::Independent,
            tokens_per_call: default_tokens(),
            latency_per_call_ms: default_latency(),
            invention_pool: default_pool(),
            model_id: default_model(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("{name} = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("invention_pool must be at least 1")]
    Pool,
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("reading scripts: {0}")]
    Io(#[from] std::io::Error),
}

impl MockConfig {
    pub fn validate(&self) -> Result<(), MockError> {
        let p = self.per_field_hallucination_prob;
        if !(0.0..=1.0).contains(&p) {
            return Err(MockError::Probability {
                name: "per_field_hallucination_prob",
                value: p,
            });
        }
        if let AgreementModel::Correlated(rho) = self.replica_agreement_model {
            if !(0.0..=1.0).contains(&rho) {
                return Err(MockError::Probability { name: "rho", value: rho });
            }
        }
        if self.invention_pool == 0 {
            return Err(MockError::Pool);
        }
        Ok(())
    }

    /// Probability that a replica repeats the reference's invented value.
    pub fn reproduction_prob(&self) -> f64 {
        let chance = self.per_field_hallucination_prob / self.invention_pool as f64;
        match self.replica_agreement_model {
            AgreementModel::Independent => chance,
            AgreementModel::Correlated(rho) => rho + (1.0 - rho) * chance,
        }
    }
}

/// (tokens, latency_ms) for `num_calls` calls under the per-call cost model.
pub fn estimate_cost(config: &MockConfig, num_calls: u64, concurrent: bool) -> (u64, u64) {
    let tokens = config.tokens_per_call * num_calls;
    let latency = match (num_calls, concurrent) {
        (0, _) => 0,
        (_, true) => config.latency_per_call_ms,
        (n, false) => config.latency_per_call_ms * n,
    };
    (tokens, latency)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMatch {
    DocId(String),
    Contains(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: ScriptMatch,
    #[serde(default)]
    pub responses: Vec<String>,
    #[serde(default)]
    pub failures_before_success: u32,
}

impl ScriptEntry {
    fn matches(&self, request: &LlmRequest) -> bool {
        match &self.matcher {
            ScriptMatch::DocId(id) => &request.doc_id == id,
            ScriptMatch::Contains(needle) => request.document_text.contains(needle.as_str()),
        }
    }
}

/// Reads newline-delimited script entries; blank lines are skipped.
pub fn load_scripts(path: &Path) -> Result<Vec<ScriptEntry>, MockError> {
    parse_scripts(&std::fs::read_to_string(path)?)
}

pub fn parse_scripts(text: &str) -> Result<Vec<ScriptEntry>, MockError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| MockError::Script {
            line: i + 1,
            message: e.to_string(),
        })?;
        if entry.responses.is_empty() && entry.failures_before_success == 0 {
            return Err(MockError::Script {
                line: i + 1,
                message: "needs responses or failures_before_success > 0".into(),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub doc_id: String,
    /// Position among the calls made for this document.
    pub seq: u32,
    pub call_index: u32,
    pub attempt: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct State {
    script_calls: HashMap<(usize, String), u32>,
    doc_seq: HashMap<String, u32>,
    transcript: Vec<TranscriptEntry>,
}

pub struct MockLlm {
    config: MockConfig,
    schema: ExtractionSchema,
    scripts: Vec<ScriptEntry>,
    state: Mutex<State>,
}

/// Deterministic stream for one (seed, doc, call, field, purpose) tuple.
fn stream(seed: u64, doc_id: &str, call_index: u32, field: &str, purpose: &str) -> SplitMix64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    for part in [doc_id, field, purpose] {
        h.write(&(part.len() as u64).to_le_bytes());
        h.write(part.as_bytes());
    }
    h.write(&call_index.to_le_bytes());
    SplitMix64::seed_from_u64(h.finish())
}

fn unit(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn below(rng: &mut SplitMix64, n: u64) -> u64 {
    rng.next_u64() % n.max(1)
}

/// `name: value` lines whose name matches a schema field (case-insensitive).
pub fn grounded_values(schema: &ExtractionSchema, text: &str) -> FieldMap {
    let mut out = FieldMap::new();
    for line in text.lines() {
        let Some((key, value)) = line.split_once(':') else { continue };
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            continue;
        }
        if let Some(spec) = schema.fields.iter().find(|f| f.name.eq_ignore_ascii_case(key)) {
            out.entry(spec.name.clone())
                .or_insert_with(|| Value::String(value.to_string()));
        }
    }
    out
}

fn synthesized_value(spec: &FieldSpec, rng: &mut SplitMix64) -> Value {
    let text = match spec.kind {
        FieldKind::Text => format!("no {} stated", spec.name),
        FieldKind::Identifier => format!("ID-{:06X}", below(rng, 1 << 24)),
        FieldKind::Number => render_decimal(Decimal::new(below(rng, 10_000_000) as i64, 2)),
        FieldKind::Timestamp => {
            let base = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
            let t = base + ChronoDuration::seconds(below(rng, 3 * 365 * 86_400) as i64);
            render_timestamp(t, spec.timestamp_layout())
        }
        FieldKind::Category => spec
            .allowed_values
            .as_ref()
            .and_then(|v| v.first().cloned())
            .unwrap_or_else(|| "unknown".into()),
    };
    Value::String(text)
}

fn hex(rng: &mut SplitMix64, digits: u32) -> String {
    format!("{:0width$x}", below(rng, 16u64.pow(digits)), width = digits as usize)
}

/// Invented value for `spec` drawn from `rng`. `avoid` lists values it must differ from.
fn invented_value(spec: &FieldSpec, truth: &Value, avoid: &[&Value], rng: &mut SplitMix64) -> Value {
    let truth_text = normalize::value_text(truth);
    let text = match spec.kind {
        FieldKind::Text => {
            let n = 3 + below(rng, 3);
            (0..n)
                .map(|_| format!("{TEXT_SENTINEL}{}", hex(rng, 5)))
                .collect::<Vec<_>>()
                .join(" ")
        }
        FieldKind::Identifier => format!("{ID_SENTINEL}{}", hex(rng, 6).to_uppercase()),
        FieldKind::Number => {
            let t = parse_number(&truth_text).unwrap_or(Decimal::new(1000, 0)).round_dp(2);
            let scale = t.abs().max(Decimal::ONE);
            let pct = 200 + below(rng, 1800) as i64; // 2.00% .. 20.00%
            let offset = (scale * Decimal::new(pct, 4)).round_dp(2);
            let base = if below(rng, 2) == 0 { t + offset } else { t - offset };
            let marker = Decimal::new(77, 4);
            render_decimal(if base.is_sign_negative() { base - marker } else { base + marker })
        }
        FieldKind::Timestamp => {
            let layout = spec.timestamp_layout();
            let t = parse_timestamp(&truth_text, layout)
                .unwrap_or_else(|| NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap());
            let moved = t
                .with_year(SENTINEL_YEAR)
                .or_else(|| t.with_day(28).and_then(|d| d.with_year(SENTINEL_YEAR)))
                .expect("day 28 exists in every year");
            render_timestamp(moved, layout)
        }
        FieldKind::Category => {
            let allowed = spec.allowed_values.clone().unwrap_or_default();
            let options: Vec<&String> = allowed
                .iter()
                .filter(|a| !a.eq_ignore_ascii_case(&truth_text))
                .filter(|a| !avoid.iter().any(|v| normalize::value_text(v).eq_ignore_ascii_case(a)))
                .collect();
            if options.is_empty() {
                return truth.clone();
            }
            options[below(rng, options.len() as u64) as usize].clone()
        }
    };
    Value::String(text)
}

/// True when `value` is an invented value rather than the grounded one.
///
/// Sentinel markers decide text, identifier, number and timestamp fields;
/// categories are compared with the grounded value.
pub fn is_invented(spec: &FieldSpec, value: &Value, grounded: Option<&Value>) -> bool {
    let text = normalize::value_text(value);
    match spec.kind {
        FieldKind::Text => text.split_whitespace().any(|tok| {
            tok.len() == TEXT_SENTINEL.len() + 5
                && tok.starts_with(TEXT_SENTINEL)
                && tok[TEXT_SENTINEL.len()..].chars().all(|c| c.is_ascii_hexdigit())
        }),
        FieldKind::Identifier => text.trim().starts_with(ID_SENTINEL),
        FieldKind::Number => canonical_number(&text).is_some_and(|n| n.ends_with("77")),
        FieldKind::Timestamp => {
            parse_timestamp(&text, spec.timestamp_layout()).is_some_and(|t| t.year() == SENTINEL_YEAR)
        }
        FieldKind::Category => grounded.is_some_and(|g| {
            !normalize::value_text(g).trim().eq_ignore_ascii_case(text.trim())
        }),
    }
}

/// Names of the fields of `record` that hold invented values.
pub fn invented_fields(schema: &ExtractionSchema, document_text: &str, record: &FieldMap) -> Vec<String> {
    let grounded = grounded_values(schema, document_text);
    schema
        .fields
        .iter()
        .filter(|spec| {
            record
                .get(&spec.name)
                .is_some_and(|v| is_invented(spec, v, grounded.get(&spec.name)))
        })
        .map(|spec| spec.name.clone())
        .collect()
}

impl MockLlm {
    pub fn new(config: MockConfig, schema: ExtractionSchema, scripts: Vec<ScriptEntry>) -> Result<Self, MockError> {
        config.validate()?;
        Ok(Self {
            config,
            schema,
            scripts,
            state: Mutex::new(State::default()),
        })
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// Record the model would emit for an unscripted document at `call_index`.
    pub fn generate_record(&self, doc_id: &str, document_text: &str, call_index: u32) -> FieldMap {
        let seed = self.config.seed;
        let p = self.config.per_field_hallucination_prob;
        let grounded = grounded_values(&self.schema, document_text);
        let mut record = FieldMap::new();
        for spec in &self.schema.fields {
            let name = spec.name.as_str();
            let truth = grounded.get(name).cloned().unwrap_or_else(|| {
                synthesized_value(spec, &mut stream(seed, doc_id, 0, name, "synth"))
            });
            let characteristic = invented_value(spec, &truth, &[], &mut stream(seed, doc_id, 0, name, "invent"));
            let reference_invents = unit(&mut stream(seed, doc_id, 0, name, "hallucinate")) < p;
            let value = if call_index == 0 {
                if reference_invents { characteristic } else { truth }
            } else if reference_invents {
                let mut rng = stream(seed, doc_id, call_index, name, "agree");
                if unit(&mut rng) < self.config.reproduction_prob() {
                    characteristic
                } else if unit(&mut rng) < p {
                    let mut alt = stream(seed, doc_id, call_index, name, "alternative");
                    invented_value(spec, &truth, &[&characteristic], &mut alt)
                } else {
                    truth
                }
            } else {
                truth
            };
            record.insert(spec.name.clone(), value);
        }
        record
    }

    fn next_seq(state: &mut State, doc_id: &str) -> u32 {
        let seq = state.doc_seq.entry(doc_id.to_string()).or_insert(0);
        *seq += 1;
        *seq - 1
    }

    /// Calls made so far, ordered by document and then by call sequence.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        let mut entries = self.state.lock().transcript.clone();
        entries.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.seq.cmp(&b.seq)));
        entries
    }

    pub fn transcript_ndjson(&self) -> String {
        self.transcript()
            .iter()
            .map(|e| serde_json::to_string(e).expect("transcript serializes") + "\n")
            .collect()
    }

    fn respond(&self, request: &LlmRequest, state: &mut State) -> Result<String, ProviderError> {
        if let Some((idx, entry)) = self.scripts.iter().enumerate().find(|(_, e)| e.matches(request)) {
            let n = state.script_calls.entry((idx, request.doc_id.clone())).or_insert(0);
            let call = *n;
            *n += 1;
            if call < entry.failures_before_success {
                return Err(ProviderError::Transient(format!(
                    "scripted failure {} of {}",
                    call + 1,
                    entry.failures_before_success
                )));
            }
            if !entry.responses.is_empty() {
                let i = ((call - entry.failures_before_success) as usize).min(entry.responses.len() - 1);
                return Ok(entry.responses[i].clone());
            }
        }
        let record = self.generate_record(&request.doc_id, &request.document_text, request.call_index);
        Ok(serde_json::to_string(&record).expect("record serializes"))
    }
}

impl LlmProvider for MockLlm {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, ProviderError> {
        let mut state = self.state.lock();
        let result = self.respond(request, &mut state);
        let seq = Self::next_seq(&mut state, &request.doc_id);
        state.transcript.push(TranscriptEntry {
            doc_id: request.doc_id.clone(),
            seq,
            call_index: request.call_index,
            attempt: request.attempt,
            temperature: request.temperature,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        drop(state);
        result.map(|text| LlmResponse {
            text,
            prompt_tokens: 0,
            completion_tokens: self.config.tokens_per_call,
            latency_ms: self.config.latency_per_call_ms,
            model_id: self.config.model_id.clone(),
        })
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut SplitMix64) -> String {
    let syllables = 2 + below(rng, 2);
    (0..syllables)
        .flat_map(|_| {
            [
                CONSONANTS[below(rng, CONSONANTS.len() as u64) as usize] as char,
                VOWELS[below(rng, VOWELS.len() as u64) as usize] as char,
            ]
        })
        .collect()
}

fn initials(name: &str) -> String {
    let s: String = name
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter_map(|w| w.chars().next())
        .collect();
    if s.is_empty() { "X".into() } else { s.to_uppercase() }
}

/// Synthetic document `index` for `schema`: a line of filler prose followed by
/// one grounded `name: value` line per field. Grounded values never carry
/// sentinel markers.
pub fn synthetic_document(schema: &ExtractionSchema, seed: u64, index: u64) -> String {
    let key = format!("synthetic-{index}");
    let mut rng = stream(seed, &key, 0, "", "corpus");
    let prose: Vec<String> = (0..40).map(|_| pseudo_word(&mut rng)).collect();
    let mut out = prose.join(" ");
    out.push_str(".\n");
    for spec in &schema.fields {
        let value = match spec.kind {
            FieldKind::Text => (0..4 + below(&mut rng, 5)).map(|_| pseudo_word(&mut rng)).collect::<Vec<_>>().join(" "),
            FieldKind::Identifier => format!("{}-{:05}", initials(&spec.name), below(&mut rng, 100_000)),
            FieldKind::Number => {
                let cents = 100 + below(&mut rng, 10_000_000);
                format!("{}.{:02}", cents / 100, cents % 100)
            }
            FieldKind::Timestamp => {
                let base = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
                let t = base + ChronoDuration::seconds(below(&mut rng, 2 * 365 * 86_400) as i64);
                render_timestamp(t, spec.timestamp_layout())
            }
            FieldKind::Category => {
                let allowed = spec.allowed_values.clone().unwrap_or_else(|| vec!["unknown".into()]);
                allowed[below(&mut rng, allowed.len() as u64) as usize].clone()
            }
        };
        out.push_str(&format!("{}: {}\n", spec.name, value));
    }
    out
}
