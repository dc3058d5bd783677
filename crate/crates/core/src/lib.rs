//! Turns streams of unstructured documents into validated, schema-conformant
//! records.
//!
//! The pipeline stages live in their own modules: [`ingest`] fetches and
//! extracts text, [`dedup`] drops near-duplicates by embedding similarity,
//! [`structurer`] asks an LLM for a record, and [`validator`] cross-checks the
//! answer against low-temperature replicas before [`store`] persists it.

pub mod clock;
pub mod dedup;
pub mod embedding;
pub mod ingest;
pub mod metrics;
pub mod mockllm;
pub mod normalize;
pub mod schema;
pub mod store;
pub mod structurer;
pub mod validator;
