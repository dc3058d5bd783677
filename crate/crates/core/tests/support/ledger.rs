//! A ledger schema exercising every rule, a record that satisfies it, and a
//! generator of arbitrary records over its keys.

#![allow(dead_code)]

use docpipe_core::schema::{ExtractionSchema, FieldMap};
use proptest::prelude::*;
use serde_json::{json, Value};

pub const SCHEMA: &str = r#"{
  "schema_id": "ledger_entry",
  "version": 3,
  "fields": [
    {"name": "entry_id", "kind": "identifier", "required": true, "critical": true,
     "comparison": "exact", "format_pattern": "LE-[0-9]{4}", "weight": 3.0},
    {"name": "booked_at", "kind": "timestamp", "required": true, "critical": false,
     "comparison": "exact", "format_pattern": "%Y-%m-%d", "weight": 1.0},
    {"name": "seen_at", "kind": "timestamp", "required": false, "critical": false,
     "comparison": "exact", "weight": 1.0},
    {"name": "amount", "kind": "number", "required": true, "critical": true,
     "comparison": "numeric_tolerance", "weight": 2.0},
    {"name": "currency", "kind": "category", "required": true, "critical": false,
     "comparison": "exact", "allowed_values": ["EUR", "USD", "NOK"], "weight": 1.0},
    {"name": "memo", "kind": "text", "required": false, "critical": false,
     "comparison": "semantic", "weight": 0.5},
    {"name": "tags", "kind": "text", "required": false, "critical": false,
     "comparison": "exact", "format_pattern": "[a-z]+", "weight": 0.0}
  ]
}"#;

pub fn schema() -> ExtractionSchema {
    ExtractionSchema::load(SCHEMA).unwrap()
}

pub fn valid() -> FieldMap {
    serde_json::from_value(json!({
        "entry_id": "LE-0042",
        "booked_at": "2024-03-09",
        "seen_at": "2024-03-09T10:15:00Z",
        "amount": "1,204.50",
        "currency": "NOK",
        "memo": "ferry tickets for the survey crew",
        "tags": ["travel", "survey"]
    }))
    .unwrap()
}

pub fn arb_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i32>().prop_map(|n| json!(n)),
        (-1.0e6f64..1.0e6).prop_map(|x| json!(x)),
        "[A-Za-z0-9 ,.:/-]{0,16}".prop_map(Value::String),
        prop::sample::select(vec!["EUR", "USD", "LE-0001", "2024-01-31", "2024-01-31T00:00:00Z", "", "1.5"])
            .prop_map(|s| json!(s)),
    ];
    leaf.prop_recursive(2, 8, 4, |inner| prop::collection::vec(inner, 0..4).prop_map(Value::Array))
}

pub fn arb_record() -> impl Strategy<Value = FieldMap> {
    let keys = prop::sample::select(vec![
        "entry_id", "booked_at", "seen_at", "amount", "currency", "memo", "tags", "extra", "Amount",
    ]);
    prop::collection::btree_map(keys.prop_map(String::from), arb_value(), 0..9)
}
