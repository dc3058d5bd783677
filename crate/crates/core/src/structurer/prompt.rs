use serde::{Deserialize, Serialize};

use crate::ingest::RawDocument;
use crate::schema::{ExtractionSchema, FieldKind};

use super::DEFAULT_REFERENCE_TEMPERATURE;

const DEFAULT_SYSTEM: &str = "You extract structured data from documents. \
Reply with exactly one JSON object whose keys are the schema field names. \
Use only information stated in the document.";

const DEFAULT_RULES: &[&str] = &[
    "Output the JSON object only, without commentary.",
    "Use the field names exactly as listed in the schema.",
    "Write timestamps in the listed layout, or ISO-8601 when none is listed.",
    "Write numbers without currency symbols or thousands separators.",
    "Category fields must take one of the listed values.",
    "Omit a field when the document does not state it; never invent values.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub system_instructions: String,
    pub rules: Vec<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub context_budget_tokens: u32,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            system_instructions: DEFAULT_SYSTEM.to_string(),
            rules: DEFAULT_RULES.iter().map(|r| r.to_string()).collect(),
            temperature: DEFAULT_REFERENCE_TEMPERATURE,
            max_output_tokens: 1024,
            context_budget_tokens: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("document text is empty")]
    EmptyDocument,
    #[error("document text is empty after truncating to the {budget}-token budget")]
    EmptyAfterTruncation { budget: u32 },
    #[error("temperature {0} is outside [0, 2]")]
    Temperature(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub doc_id: String,
    /// 0 for the reference generation, i for replica i.
    pub call_index: u32,
    /// 0 for the first ask, 1 for the re-ask after a parse failure.
    pub attempt: u32,
    pub system_instructions: String,
    pub schema_rendering: String,
    pub example_pairs: Vec<(String, String)>,
    pub rules: Vec<String>,
    pub document_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub context_budget_tokens: u32,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reask_note: Option<String>,
    /// Full document text before truncation, kept so a re-ask can refit.
    #[serde(skip)]
    full_document: String,
}

/// Token estimate used for budgeting: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u32 {
    text.chars().count().div_ceil(4) as u32
}

impl LlmRequest {
    fn render_user(&self, document: &str) -> String {
        let mut out = String::new();
        out.push_str(&self.schema_rendering);
        out.push_str("\n## Example\n");
        for (input, output) in &self.example_pairs {
            out.push_str("Input:\n");
            out.push_str(input);
            out.push_str("\nOutput:\n");
            out.push_str(output);
            out.push('\n');
        }
        out.push_str("\n## Rules\n");
        for (i, rule) in self.rules.iter().enumerate() {
            out.push_str(&format!("{}. {rule}\n", i + 1));
        }
        out.push_str("\n## Document\n");
        out.push_str(document);
        out.push('\n');
        if let Some(note) = &self.reask_note {
            out.push_str("\n## Previous answer\nThe previous answer could not be parsed (");
            out.push_str(note);
            out.push_str("). Reply with a single JSON object only.\n");
        }
        out
    }

    /// The user message: schema, example, rules, document (and re-ask note).
    pub fn user_prompt(&self) -> String {
        self.render_user(&self.document_text)
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage {
                role: "system".into(),
                content: self.system_instructions.clone(),
            },
            ChatMessage {
                role: "user".into(),
                content: self.user_prompt(),
            },
        ]
    }

    /// Estimate over the system and user messages together.
    pub fn prompt_tokens_estimate(&self) -> u32 {
        estimate_tokens(&self.system_instructions) + estimate_tokens(&self.user_prompt())
    }

    /// Cuts the tail of the document until the prompt estimate fits the budget.
    fn fit(&mut self) -> Result<(), PromptError> {
        let budget = self.context_budget_tokens;
        let fixed = estimate_tokens(&self.system_instructions);
        let shell_chars = self.render_user("").chars().count();
        let available = (budget.saturating_sub(fixed) as usize * 4).saturating_sub(shell_chars);
        let full_chars = self.full_document.chars().count();
        if full_chars <= available {
            self.document_text = self.full_document.clone();
            self.truncated = false;
        } else {
            self.document_text = self.full_document.chars().take(available).collect();
            self.truncated = true;
        }
        if self.document_text.trim().is_empty() {
            return Err(PromptError::EmptyAfterTruncation { budget });
        }
        debug_assert!(self.prompt_tokens_estimate() <= budget);
        Ok(())
    }

    /// Follow-up request carrying the parse error of the previous answer.
    pub fn with_reask(&self, parse_error: &str) -> Result<LlmRequest, PromptError> {
        let mut next = self.clone();
        next.attempt = self.attempt + 1;
        next.reask_note = Some(parse_error.to_string());
        next.fit()?;
        Ok(next)
    }
}

fn render_schema(schema: &ExtractionSchema) -> String {
    let mut out = format!("## Target schema: {} v{}\n", schema.schema_id, schema.version);
    for field in &schema.fields {
        out.push_str(&format!(
            "- \"{}\": {}, {}",
            field.name,
            field.kind.as_str(),
            if field.required { "required" } else { "optional" }
        ));
        if let Some(pattern) = &field.format_pattern {
            let label = if field.kind == FieldKind::Timestamp { "layout" } else { "pattern" };
            out.push_str(&format!(", {label} {pattern}"));
        }
        if let Some(values) = &field.allowed_values {
            out.push_str(&format!(", one of {}", values.join("|")));
        }
        out.push('\n');
    }
    out
}

fn render_example(schema: &ExtractionSchema) -> (String, String) {
    match &schema.example {
        Some(example) => (
            example.input.clone(),
            serde_json::to_string(&example.output).expect("example serializes"),
        ),
        None => {
            let skeleton: serde_json::Map<String, serde_json::Value> = schema
                .fields
                .iter()
                .map(|f| (f.name.clone(), format!("<{}>", f.kind.as_str()).into()))
                .collect();
            (
                "<document text>".to_string(),
                serde_json::to_string(&skeleton).expect("skeleton serializes"),
            )
        }
    }
}

/// Assembles the extraction request for `doc`. Deterministic in its inputs.
pub fn build_prompt(
    schema: &ExtractionSchema,
    doc: &RawDocument,
    config: &PromptConfig,
) -> Result<LlmRequest, PromptError> {
    if doc.raw_text.trim().is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    if !(0.0..=2.0).contains(&config.temperature) {
        return Err(PromptError::Temperature(config.temperature));
    }
    let mut request = LlmRequest {
        doc_id: doc.doc_id.clone(),
        call_index: 0,
        attempt: 0,
        system_instructions: config.system_instructions.clone(),
        schema_rendering: render_schema(schema),
        example_pairs: vec![render_example(schema)],
        rules: config.rules.clone(),
        document_text: String::new(),
        temperature: config.temperature,
        max_output_tokens: config.max_output_tokens,
        context_budget_tokens: config.context_budget_tokens,
        truncated: false,
        reask_note: None,
        full_document: doc.raw_text.clone(),
    };
    request.fit()?;
    Ok(request)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SystemClock;
    use crate::ingest::{make_raw_document, ContentKind, SourceKind, SourceSpec};

    fn schema() -> ExtractionSchema {
        ExtractionSchema::load(
            r#"{"schema_id":"news","version":2,"fields":[
                {"name":"headline","kind":"text","required":true,"critical":false,"comparison":"semantic","weight":1},
                {"name":"published","kind":"timestamp","required":false,"critical":false,"comparison":"exact","weight":1}]}"#,
        )
        .unwrap()
    }

    fn doc(text: &str) -> RawDocument {
        let source = SourceSpec {
            source_id: "s".into(),
            kind: SourceKind::File,
            locator: "x".into(),
            poll_interval: 1.0,
            content_kind_hint: ContentKind::Text,
            batch_lines: None,
        };
        make_raw_document(&source, "x", None, text.into(), &SystemClock)
    }

    #[test]
    fn short_document_is_untruncated_and_ordered() {
        let d = doc("one two three four five six seven eight nine ten");
        let r = build_prompt(&schema(), &d, &PromptConfig::default()).unwrap();
        assert!(!r.truncated);
        assert_eq!(r.example_pairs.len(), 1);
        let p = r.user_prompt();
        let order = ["## Target schema", "\"headline\": text, required", "\"published\": timestamp, optional", "## Example", "## Rules", "## Document", "one two three"];
        let positions: Vec<usize> = order.iter().map(|s| p.find(s).unwrap_or_else(|| panic!("missing {s}"))).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{positions:?}");
        assert!(r.prompt_tokens_estimate() <= 4000);
    }

    #[test]
    fn long_document_truncated_to_budget() {
        let text = "word ".repeat(10_000);
        let d = doc(&text);
        let r = build_prompt(&schema(), &d, &PromptConfig::default()).unwrap();
        assert!(r.truncated);
        assert!(r.prompt_tokens_estimate() <= 4000);
        assert!(text.starts_with(&r.document_text));
        // A re-ask refits with the note included.
        let again = r.with_reask("expected value at line 1").unwrap();
        assert!(again.prompt_tokens_estimate() <= 4000);
        assert!(again.document_text.len() < r.document_text.len());
    }

    #[test]
    fn tiny_budget_leaves_nothing() {
        let config = PromptConfig {
            context_budget_tokens: 50,
            ..PromptConfig::default()
        };
        assert!(matches!(
            build_prompt(&schema(), &doc("hello"), &config),
            Err(PromptError::EmptyAfterTruncation { .. })
        ));
    }

    #[test]
    fn deterministic() {
        let d = doc("The same text.");
        let a = build_prompt(&schema(), &d, &PromptConfig::default()).unwrap();
        let b = build_prompt(&schema(), &d, &PromptConfig::default()).unwrap();
        assert_eq!(a.user_prompt().as_bytes(), b.user_prompt().as_bytes());
        assert_eq!(a, b);
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }
}
