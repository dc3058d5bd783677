//! Throwaway pipeline workspaces: schema, sources, documents and config on disk.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use docpipe::config::PipelineConfig;
use docpipe_core::mockllm::synthetic_document;
use docpipe_core::schema::ExtractionSchema;
use serde_json::{json, Value};
use tempfile::TempDir;

pub const INCIDENT_SCHEMA: &str = r#"{"schema_id":"incident","version":1,"fields":[
  {"name":"error_code","kind":"identifier","required":true,"critical":true,"comparison":"exact","weight":2},
  {"name":"severity","kind":"category","required":true,"critical":false,"comparison":"exact",
   "allowed_values":["low","medium","high","critical"],"weight":1},
  {"name":"message","kind":"text","required":true,"critical":false,"comparison":"semantic","weight":1},
  {"name":"amount","kind":"number","required":true,"critical":true,"comparison":"numeric_tolerance","weight":1},
  {"name":"occurred","kind":"timestamp","required":true,"critical":false,"comparison":"exact",
   "format_pattern":"%Y-%m-%d %H:%M:%S","weight":1}
]}"#;

pub fn incident_schema() -> ExtractionSchema {
    ExtractionSchema::load(INCIDENT_SCHEMA).unwrap()
}

/// `n` synthetic incident reports starting at `first`.
pub fn incident_docs(seed: u64, first: u64, n: u64) -> Vec<String> {
    let schema = incident_schema();
    (first..first + n).map(|i| synthetic_document(&schema, seed, i)).collect()
}

pub struct Workspace {
    pub dir: TempDir,
    pub config_path: PathBuf,
}

impl Workspace {
    /// Documents go to `docs/NNN.txt`; `llm` is the mock section of the config
    /// and `extra` is merged over the top level.
    pub fn new(docs: &[String], llm: Value, extra: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir(root.join("docs")).unwrap();
        for (i, text) in docs.iter().enumerate() {
            std::fs::write(root.join("docs").join(format!("{i:04}.txt")), text).unwrap();
        }
        std::fs::write(root.join("schema.json"), INCIDENT_SCHEMA).unwrap();
        let sources = json!([{
            "source_id": "reports",
            "kind": "file",
            "locator": root.join("docs").display().to_string(),
            "content_kind_hint": "text"
        }]);
        std::fs::write(root.join("sources.json"), sources.to_string()).unwrap();
        let mut config = json!({
            "sources": "sources.json",
            "schema": "schema.json",
            "store_root": "store",
            "llm": llm,
            "fixed_time": "2024-05-01T12:00:00Z",
            "retry": {"max_attempts": 3, "backoff_base_ms": 0}
        });
        for (k, v) in extra.as_object().cloned().unwrap_or_default() {
            config[k] = v;
        }
        let config_path = root.join("docpipe.json");
        std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
        Self { dir, config_path }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn add_doc(&self, name: &str, text: &str) {
        std::fs::write(self.root().join("docs").join(name), text).unwrap();
    }

    pub fn config(&self) -> PipelineConfig {
        PipelineConfig::load(&self.config_path).unwrap()
    }
}

pub fn mock(seed: u64, prob: f64) -> Value {
    json!({"provider": "mock", "seed": seed, "per_field_hallucination_prob": prob})
}
