//! Canonical forms for field values.
//!
//! Shared by the structurer (normalizing candidates), the validator (structural
//! agreement between replicas) and the metrics (exact comparison after
//! normalization). Every function here is idempotent.

use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use regex::Regex;
use rust_decimal::{Decimal, RoundingStrategy};
use serde_json::Value;

use crate::schema::{FieldKind, FieldSpec};

/// Fractional digits in canonical numbers.
pub const NUMBER_SCALE: u32 = 4;

/// Input layouts tried when a timestamp does not already follow the field layout.
const FALLBACK_LAYOUTS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y/%m/%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%d/%m/%Y %H:%M:%S",
    "%d.%m.%Y %H:%M:%S",
    "%Y-%m-%d",
];

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*(?:[A-Za-z]{3}|[$€£¥₽₴])?\s*([+-]?(?:\d{1,3}(?:,\d{3})+|\d+)?(?:\.\d+)?)\s*(?:[A-Za-z]{3}|[$€£¥₽₴])?\s*$",
        )
        .expect("valid number regex")
    })
}

/// Strips currency markers and thousands separators; returns the amount as a decimal.
pub fn parse_number(text: &str) -> Option<Decimal> {
    let caps = number_regex().captures(text)?;
    let digits = caps.get(1)?.as_str().replace(',', "");
    if !digits.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    Decimal::from_str(&digits).ok()
}

/// Canonical rendering: plain decimal with exactly four fractional digits.
pub fn canonical_number(text: &str) -> Option<String> {
    parse_number(text).map(render_decimal)
}

pub fn render_decimal(value: Decimal) -> String {
    let rounded = value.round_dp_with_strategy(NUMBER_SCALE, RoundingStrategy::MidpointAwayFromZero);
    format!("{:.*}", NUMBER_SCALE as usize, rounded)
}

pub fn number_value(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => parse_number(s).and_then(|d| d.to_string().parse().ok()),
        _ => None,
    }
}

pub fn parse_iso8601(text: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(text.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

/// Parses `text` with a strftime layout; layouts with an offset are converted to UTC.
pub fn parse_with_layout(text: &str, layout: &str) -> Option<NaiveDateTime> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_str(text, layout) {
        return Some(t.with_timezone(&Utc).naive_utc());
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(text, layout) {
        return Some(t);
    }
    NaiveDate::parse_from_str(text, layout)
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

fn parse_any_timestamp(text: &str) -> Option<NaiveDateTime> {
    if let Some(t) = parse_iso8601(text) {
        return Some(t.naive_utc());
    }
    if let Ok(t) = DateTime::parse_from_rfc2822(text.trim()) {
        return Some(t.with_timezone(&Utc).naive_utc());
    }
    FALLBACK_LAYOUTS
        .iter()
        .find_map(|layout| parse_with_layout(text, layout))
}

/// Parses with the field layout first, then ISO-8601, RFC 2822 and common layouts.
pub fn parse_timestamp(text: &str, layout: Option<&str>) -> Option<NaiveDateTime> {
    match layout {
        Some(l) => parse_with_layout(text, l).or_else(|| parse_any_timestamp(text)),
        None => parse_any_timestamp(text),
    }
}

/// Renders in the field layout, or ISO-8601 extended (UTC) when none is set.
pub fn render_timestamp(t: NaiveDateTime, layout: Option<&str>) -> String {
    match layout {
        Some(l) => t.format(l).to_string(),
        None => t.and_utc().to_rfc3339_opts(SecondsFormat::AutoSi, true),
    }
}

pub fn canonical_timestamp(text: &str, layout: Option<&str>) -> Option<String> {
    parse_timestamp(text, layout).map(|t| render_timestamp(t, layout))
}

/// Collapses every whitespace run to one space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalizes one field value per its spec. Values that cannot be normalized are
/// returned unchanged so the rule checks can flag them.
pub fn normalize_value(spec: &FieldSpec, value: &Value) -> Value {
    match (spec.kind, value) {
        (FieldKind::Number, Value::Number(n)) => canonical_number(&n.to_string())
            .map(Value::String)
            .unwrap_or_else(|| value.clone()),
        (FieldKind::Number, Value::String(s)) => canonical_number(s)
            .map(Value::String)
            .unwrap_or_else(|| value.clone()),
        (FieldKind::Timestamp, Value::String(s)) => canonical_timestamp(s, spec.timestamp_layout())
            .map(Value::String)
            .unwrap_or_else(|| value.clone()),
        (FieldKind::Category, Value::String(s)) => {
            let trimmed = s.trim();
            let matched = spec.allowed_values.as_ref().and_then(|allowed| {
                allowed
                    .iter()
                    .find(|a| a.to_lowercase() == trimmed.to_lowercase())
                    .cloned()
            });
            Value::String(matched.unwrap_or_else(|| trimmed.to_string()))
        }
        (FieldKind::Text, Value::String(s)) => Value::String(collapse_whitespace(s)),
        (FieldKind::Text, Value::Array(items)) => Value::Array(
            items
                .iter()
                .map(|item| match item {
                    Value::String(s) => Value::String(collapse_whitespace(s)),
                    other => other.clone(),
                })
                .collect(),
        ),
        (FieldKind::Identifier, Value::String(s)) => Value::String(s.trim().to_string()),
        _ => value.clone(),
    }
}

/// Plain-text view of a value, used for embedding and exact comparison.
pub fn value_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        Value::Array(items) => items.iter().map(value_text).collect::<Vec<_>>().join("\n"),
        other => other.to_string(),
    }
}
