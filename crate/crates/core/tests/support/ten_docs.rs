//! Ten documents with a hand-tallied confusion table, shared by the metrics
//! tests and the acceptance run.

use docpipe_core::metrics::{GoldAnnotation, Prediction};
use docpipe_core::schema::ExtractionSchema;
use serde_json::{json, Value};

pub fn schema() -> ExtractionSchema {
    ExtractionSchema::load(
        r#"{"schema_id":"work_order","version":1,"fields":[
          {"name":"id","kind":"identifier","required":true,"critical":true,"comparison":"exact","weight":3.0},
          {"name":"amount","kind":"number","required":true,"critical":true,"comparison":"numeric_tolerance","weight":2.0},
          {"name":"cat","kind":"category","required":false,"critical":false,"comparison":"exact",
           "allowed_values":["a","b"],"weight":1.0},
          {"name":"note","kind":"text","required":false,"critical":false,"comparison":"semantic","weight":1.0},
          {"name":"extra","kind":"text","required":false,"critical":false,"comparison":"exact","weight":0.5}
        ]}"#,
    )
    .unwrap()
}

pub fn gold(doc: &str, fields: Value, also_present: &[&str]) -> GoldAnnotation {
    let fields: docpipe_core::schema::FieldMap = serde_json::from_value(fields).unwrap();
    let mut present_fields: std::collections::BTreeSet<String> = fields.keys().cloned().collect();
    present_fields.extend(also_present.iter().map(|s| s.to_string()));
    GoldAnnotation {
        doc_id: doc.into(),
        fields,
        present_fields,
    }
}

pub fn pred(doc: &str, fields: Value) -> Prediction {
    Prediction {
        doc_id: doc.into(),
        fields: serde_json::from_value(fields).unwrap(),
    }
}

/// Per document, what each field contributes:
///
/// | doc | id     | amount | cat    | note   | critical error | invented key |
/// |-----|--------|--------|--------|--------|----------------|--------------|
/// | d0  | tp     | tp     | tp     | tp     |                |              |
/// | d1  | tp     | tp 0.4%| tp     | tp     |                |              |
/// | d2  | fp+fn  | tp     | tp     | tp     | id             |              |
/// | d3  | tp     | fp+fn  | fp+fn  | fp     | amount         | note         |
/// | d4  | tp     | fn     | tp     | tp ~   | amount         |              |
/// | d5  | tp     | tp     | tp     | fp+fn  |                |              |
/// | d6  | tp     | tp     | tp     | fp     |                | (note in src)|
/// | d7  | fn     | fn     | fn     | fn     | id, amount     |              |
/// | d8  | tp     | tp     | tp     | tp     |                | operator     |
/// | d9  | tp     | fp     | tp     |        | amount         | amount       |
pub fn dataset() -> (Vec<Prediction>, Vec<GoldAnnotation>) {
    let gold = vec![
        gold("d0", json!({"id":"A1","amount":100,"cat":"a","note":"pump failure in hall"}), &[]),
        gold("d1", json!({"id":"B2","amount":1000,"cat":"b","note":"valve leak north wing"}), &[]),
        gold("d2", json!({"id":"C3","amount":50,"cat":"a","note":"sensor drift"}), &[]),
        gold("d3", json!({"id":"D4","amount":1000,"cat":"a"}), &[]),
        gold("d4", json!({"id":"E5","amount":20,"cat":"b","note":"fan noise in server room"}), &[]),
        gold("d5", json!({"id":"F6","amount":75,"cat":"a","note":"door sensor offline"}), &[]),
        gold("d6", json!({"id":"G7","amount":5,"cat":"b"}), &["note"]),
        gold("d7", json!({"id":"H8","amount":300,"cat":"a","note":"belt slipped"}), &[]),
        gold("d8", json!({"id":"I9","amount":-12.5,"cat":"b","note":"coolant low"}), &[]),
        gold("d9", json!({"id":"J10","cat":"a"}), &[]),
    ];
    let predictions = vec![
        pred("d0", json!({"id":"A1","amount":100,"cat":"a","note":"pump failure in hall"})),
        pred("d1", json!({"id":"B2","amount":"1,004.00","cat":"b","note":"valve leak north wing"})),
        pred("d2", json!({"id":"C9","amount":50,"cat":"a","note":"sensor drift"})),
        pred("d3", json!({"id":"D4","amount":1006,"cat":"b","note":"invented remark"})),
        pred("d4", json!({"id":"E5","cat":"b","note":"Fan noise in the server room"})),
        pred("d5", json!({"id":"F6","amount":75.0,"cat":"a","note":"quarterly revenue grew"})),
        pred("d6", json!({"id":"G7","amount":5,"cat":"b","note":"something"})),
        pred("d7", json!({})),
        pred("d8", json!({"id":"I9","amount":"-12.50","cat":"b","note":"coolant low","operator":"kim"})),
        pred("d9", json!({"id":"J10","cat":"a","amount":44})),
    ];
    (predictions, gold)
}

/// (tp, fp, fn) per field, from the table above.
pub const COUNTS: [(&str, (u64, u64, u64)); 5] = [
    ("id", (8, 1, 2)),
    ("amount", (6, 2, 3)),
    ("cat", (8, 1, 2)),
    ("note", (5, 3, 2)),
    ("extra", (0, 0, 0)),
];

/// Weight-averaged F over fields with support, computed by hand.
pub const WEIGHTED_F: f64 = 0.778_121_775_025_8;
pub const CRITICAL_ERROR_RATE: f64 = 0.5;
pub const HALLUCINATION_RATE: f64 = 0.3;
