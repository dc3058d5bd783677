use serde_json::Value;

use crate::normalize::normalize_value;
use crate::schema::{ExtractionSchema, FieldMap};

use super::{CandidateRecord, LlmRequest, LlmResponse, Provenance};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("empty response")]
    Empty,
    #[error("no JSON object found in response")]
    NoObject,
    #[error("invalid JSON at line {line} column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Inner text of the first fenced block, if any.
fn strip_fences(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map_or(0, |i| i + 1);
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

/// Byte span of the first balanced `{...}` in `text`, string-aware.
fn object_span(text: &str) -> Option<(usize, usize)> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, start + i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Drops commas that directly precede `}` or `]`, outside strings.
fn remove_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            out.push(c);
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn json_error(e: serde_json::Error) -> ParseError {
    ParseError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Pulls one JSON object out of the model answer, applying the minimal
/// repairs (fence stripping, surrounding prose, trailing commas).
pub fn parse_candidate(request: &LlmRequest, response: &LlmResponse) -> Result<CandidateRecord, ParseError> {
    let mut text = response.text.trim();
    if text.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut repairs = Vec::new();
    if let Some(inner) = strip_fences(text) {
        text = inner.trim();
        repairs.push("stripped code fences".to_string());
    }
    let (start, end) = object_span(text).ok_or(ParseError::NoObject)?;
    if start != 0 || end != text.len() {
        repairs.push("extracted object from surrounding text".to_string());
    }
    let object = &text[start..end];
    let fields: FieldMap = match serde_json::from_str(object) {
        Ok(fields) => fields,
        Err(first) => {
            let repaired = remove_trailing_commas(object);
            if repaired == object {
                return Err(json_error(first));
            }
            repairs.push("removed trailing commas".to_string());
            serde_json::from_str(&repaired).map_err(json_error)?
        }
    };
    Ok(CandidateRecord {
        fields,
        provenance: Provenance {
            doc_id: request.doc_id.clone(),
            model_id: response.model_id.clone(),
            temperature: request.temperature,
            call_index: request.call_index,
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            latency_ms: response.latency_ms,
        },
        parse_repairs: repairs,
    })
}

/// Canonical forms for every schema field; unknown keys and nulls pass through.
pub fn normalize_candidate(mut record: CandidateRecord, schema: &ExtractionSchema) -> CandidateRecord {
    for spec in &schema.fields {
        if let Some(value) = record.fields.get_mut(&spec.name) {
            if !value.is_null() {
                *value = normalize_value(spec, value);
            }
        }
    }
    record.fields.retain(|_, v| !matches!(v, Value::Null));
    record
}
