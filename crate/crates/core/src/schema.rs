//! Target record shapes and the formal rule checks applied to extracted records.
//!
//! A schema is loaded once from its JSON file and is immutable afterwards, so it
//! can be shared freely between pipeline workers.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::normalize;

/// A parsed record: field name to scalar (or list of scalars) value.
pub type FieldMap = BTreeMap<String, Value>;

/// Sentinel field name for violations that concern the record as a whole.
pub const DOCUMENT_FIELD: &str = "(document)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Text,
    Timestamp,
    Number,
    Category,
    Identifier,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Text => "text",
            FieldKind::Timestamp => "timestamp",
            FieldKind::Number => "number",
            FieldKind::Category => "category",
            FieldKind::Identifier => "identifier",
        }
    }
}

/// How a field's values are compared across replicas and against gold data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Exact,
    NumericTolerance,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub required: bool,
    pub critical: bool,
    pub comparison: Comparison,
    /// Timestamp layout (strftime syntax) for timestamp fields, a regular
    /// expression for every other kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_values: Option<Vec<String>>,
    pub weight: f64,
}

impl FieldSpec {
    /// Layout used to check and render timestamps; `None` means ISO-8601 extended.
    pub fn timestamp_layout(&self) -> Option<&str> {
        match self.kind {
            FieldKind::Timestamp => self.format_pattern.as_deref(),
            _ => None,
        }
    }
}

/// Worked example shipped with a schema and rendered into every prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaExample {
    pub input: String,
    pub output: FieldMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSchema {
    pub schema_id: String,
    pub version: u32,
    pub fields: Vec<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<SchemaExample>,
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("schema parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema invariant violated ({invariant}): {detail}")]
    Invariant {
        invariant: &'static str,
        detail: String,
    },
}

impl ExtractionSchema {
    /// Parses a schema document and checks every structural invariant.
    pub fn load(source: &str) -> Result<Self, SchemaError> {
        let schema: ExtractionSchema =
            serde_json::from_str(source).map_err(|e| SchemaError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        schema.check_invariants()?;
        Ok(schema)
    }

    pub fn load_file(path: &std::path::Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|e| SchemaError::Parse {
            line: 0,
            column: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::load(&text)
    }

    /// Canonical serialization: pretty JSON in declaration order plus a trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("schema serializes");
        out.push('\n');
        out
    }

    pub fn check_invariants(&self) -> Result<(), SchemaError> {
        let invariant = |invariant, detail: String| Err(SchemaError::Invariant { invariant, detail });

        if self.schema_id.trim().is_empty() {
            return invariant("schema_id non-empty", "schema_id is empty".into());
        }
        if self.fields.is_empty() {
            return invariant("at least one field", "schema declares no fields".into());
        }
        let mut seen = HashSet::new();
        for field in &self.fields {
            if field.name.trim().is_empty() {
                return invariant("field names non-empty", "a field has an empty name".into());
            }
            if !seen.insert(field.name.as_str()) {
                return invariant("field names unique", format!("duplicate field {:?}", field.name));
            }
            if !(field.weight.is_finite() && field.weight >= 0.0) {
                return invariant(
                    "weights non-negative",
                    format!("field {:?} has weight {}", field.name, field.weight),
                );
            }
            if field.comparison == Comparison::NumericTolerance && field.kind != FieldKind::Number {
                return invariant(
                    "numeric_tolerance only for number fields",
                    format!("field {:?} is {}", field.name, field.kind.as_str()),
                );
            }
            if let Some(values) = &field.allowed_values {
                if values.is_empty() {
                    return invariant(
                        "allowed_values non-empty",
                        format!("field {:?} has an empty allowed_values list", field.name),
                    );
                }
            }
            if field.critical && !field.required {
                return invariant(
                    "critical implies required",
                    format!("field {:?} is critical but optional", field.name),
                );
            }
            if let (Some(pattern), false) = (&field.format_pattern, field.kind == FieldKind::Timestamp) {
                if let Err(e) = Regex::new(pattern) {
                    return invariant(
                        "format_pattern compiles",
                        format!("field {:?}: {e}", field.name),
                    );
                }
            }
        }
        if !self.fields.iter().any(|f| f.required) {
            return invariant("at least one required field", "no field is required".into());
        }
        let total: f64 = self.fields.iter().map(|f| f.weight).sum();
        if total <= 0.0 {
            return invariant("sum of weights positive", format!("weights sum to {total}"));
        }
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    pub fn field_weights(&self) -> BTreeMap<String, f64> {
        self.fields.iter().map(|f| (f.name.clone(), f.weight)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    MissingRequired,
    TypeMismatch,
    FormatMismatch,
    ValueNotAllowed,
    UnknownField,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationCode::MissingRequired => "missing_required",
            ViolationCode::TypeMismatch => "type_mismatch",
            ViolationCode::FormatMismatch => "format_mismatch",
            ViolationCode::ValueNotAllowed => "value_not_allowed",
            ViolationCode::UnknownField => "unknown_field",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleViolation {
    pub field: String,
    pub code: ViolationCode,
    pub detail: String,
}

impl RuleViolation {
    fn new(field: &str, code: ViolationCode, detail: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            code,
            detail: detail.into(),
        }
    }
}

/// Checks a record against every field constraint of `schema`.
///
/// Violations come out in schema field order; violations about keys the schema
/// does not know come last, in key order.
pub fn validate_record(schema: &ExtractionSchema, record: &FieldMap) -> Vec<RuleViolation> {
    let mut violations = Vec::new();
    for spec in &schema.fields {
        match record.get(&spec.name) {
            None | Some(Value::Null) => {
                if spec.required {
                    violations.push(RuleViolation::new(
                        &spec.name,
                        ViolationCode::MissingRequired,
                        "required field is absent",
                    ));
                }
            }
            Some(value) => {
                if spec.required && is_blank(value) {
                    violations.push(RuleViolation::new(
                        &spec.name,
                        ViolationCode::MissingRequired,
                        "required field is empty",
                    ));
                    continue;
                }
                check_value(spec, value, &mut violations);
            }
        }
    }
    for key in record.keys() {
        if schema.field(key).is_none() {
            violations.push(RuleViolation::new(
                key,
                ViolationCode::UnknownField,
                "field is not declared by the schema",
            ));
        }
    }
    violations
}

fn is_blank(value: &Value) -> bool {
    match value {
        Value::String(s) => s.trim().is_empty(),
        Value::Array(items) => items.is_empty(),
        _ => false,
    }
}

fn check_value(spec: &FieldSpec, value: &Value, out: &mut Vec<RuleViolation>) {
    let mismatch = |found: &str| {
        RuleViolation::new(
            &spec.name,
            ViolationCode::TypeMismatch,
            format!("expected {}, found {found}", spec.kind.as_str()),
        )
    };

    let text = match (spec.kind, value) {
        (FieldKind::Number, Value::Number(n)) => n.to_string(),
        (FieldKind::Number, Value::String(s)) => {
            if normalize::canonical_number(s).is_none() {
                out.push(mismatch("non-numeric text"));
                return;
            }
            s.clone()
        }
        (FieldKind::Text, Value::Array(items)) => {
            if items.iter().any(|v| !v.is_string()) {
                out.push(mismatch("list with non-text items"));
                return;
            }
            // Lists are checked element-wise against the pattern below.
            for item in items.iter().filter_map(Value::as_str) {
                check_pattern(spec, item, out);
            }
            return;
        }
        (_, Value::String(s)) if spec.kind != FieldKind::Number => s.clone(),
        (_, other) => {
            out.push(mismatch(json_type_name(other)));
            return;
        }
    };

    match spec.kind {
        FieldKind::Timestamp => {
            let ok = match spec.timestamp_layout() {
                Some(layout) => normalize::parse_with_layout(&text, layout).is_some(),
                None => normalize::parse_iso8601(&text).is_some(),
            };
            if !ok {
                out.push(RuleViolation::new(
                    &spec.name,
                    ViolationCode::FormatMismatch,
                    format!(
                        "{text:?} does not follow layout {}",
                        spec.timestamp_layout().unwrap_or("ISO-8601")
                    ),
                ));
            }
        }
        _ => check_pattern(spec, &text, out),
    }

    if let Some(allowed) = &spec.allowed_values {
        if !allowed.iter().any(|a| a == &text) {
            out.push(RuleViolation::new(
                &spec.name,
                ViolationCode::ValueNotAllowed,
                format!("{text:?} is not one of {allowed:?}"),
            ));
        }
    }
}

fn check_pattern(spec: &FieldSpec, text: &str, out: &mut Vec<RuleViolation>) {
    let Some(pattern) = spec.format_pattern.as_deref() else {
        return;
    };
    if spec.kind == FieldKind::Timestamp {
        return;
    }
    let matches = Regex::new(&format!("^(?:{pattern})$"))
        .map(|re| re.is_match(text))
        .unwrap_or(false);
    if !matches {
        out.push(RuleViolation::new(
            &spec.name,
            ViolationCode::FormatMismatch,
            format!("{text:?} does not match /{pattern}/"),
        ));
    }
}

fn json_type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "text",
        Value::Array(_) => "list",
        Value::Object(_) => "object",
    }
}
