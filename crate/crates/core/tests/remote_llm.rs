//! Remote chat endpoint driven through a local server.

use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use docpipe_core::clock::FixedClock;
use docpipe_core::ingest::{make_raw_document, ContentKind, RawDocument, SourceKind, SourceSpec};
use docpipe_core::schema::ExtractionSchema;
use docpipe_core::structurer::{LlmProvider, ProviderError, RemoteLlm, StructureError, Structurer};
use serde_json::{json, Value};

fn schema() -> ExtractionSchema {
    ExtractionSchema::load(
        r#"{"schema_id":"fault","version":1,"fields":[
          {"name":"error_code","kind":"identifier","required":true,"critical":true,"comparison":"exact","weight":1.0},
          {"name":"amount","kind":"number","required":false,"critical":false,"comparison":"numeric_tolerance","weight":1.0}
        ]}"#,
    )
    .unwrap()
}

fn doc() -> RawDocument {
    let source = SourceSpec {
        source_id: "t".into(),
        kind: SourceKind::File,
        locator: "/t".into(),
        poll_interval: 3600.0,
        content_kind_hint: ContentKind::Text,
        batch_lines: None,
    };
    let clock = FixedClock(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
    make_raw_document(&source, "/t/a.txt", None, "Fault E-77 cost 12.5 units.".into(), &clock)
}

/// Answers each request with the next (status, body); returns the request bodies seen.
fn serve(replies: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Value>>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}/v1/complete", server.server_addr().to_ip().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let mut request = server.recv().unwrap();
            let mut raw = String::new();
            request.as_reader().read_to_string(&mut raw).unwrap();
            seen.push(serde_json::from_str(&raw).unwrap());
            request
                .respond(tiny_http::Response::from_string(body).with_status_code(status))
                .unwrap();
        }
        seen
    });
    (endpoint, handle)
}

fn reply(text: &str) -> String {
    json!({"text": text, "usage": {"prompt_tokens": 120, "completion_tokens": 30}}).to_string()
}

#[test]
fn request_and_reply_shapes() {
    let (endpoint, handle) = serve(vec![(200, reply(r#"{"error_code":"E-77","amount":12.5}"#))]);
    let llm = RemoteLlm::new("m-1", &endpoint, Duration::from_secs(5));
    let schema = schema();
    let mut structurer = Structurer::new(&llm, &schema);
    structurer.retry.backoff_base_ms = 0;
    let extraction = structurer.extract(&doc(), 0.7, 0);
    let record = extraction.outcome.unwrap();
    assert_eq!(record.fields["error_code"], json!("E-77"));
    assert_eq!(record.provenance.model_id, "m-1");
    assert_eq!(record.provenance.prompt_tokens, 120);
    assert_eq!(extraction.calls[0].tokens, 150);

    let seen = handle.join().unwrap();
    assert_eq!(seen[0]["model"], "m-1");
    assert_eq!(seen[0]["temperature"], 0.7);
    let messages = seen[0]["messages"].as_array().unwrap();
    assert_eq!(messages[0]["role"], "system");
    assert_eq!(messages[1]["role"], "user");
    assert!(messages[1]["content"].as_str().unwrap().contains("Fault E-77"));
}

#[test]
fn overload_is_retried() {
    let (endpoint, handle) = serve(vec![
        (503, "busy".into()),
        (429, "slow".into()),
        (200, reply(r#"{"error_code":"E-77"}"#)),
    ]);
    let llm = RemoteLlm::new("m", &endpoint, Duration::from_secs(5));
    let schema = schema();
    let mut structurer = Structurer::new(&llm, &schema);
    structurer.retry.backoff_base_ms = 0;
    let extraction = structurer.extract(&doc(), 0.1, 2);
    assert!(extraction.outcome.is_ok());
    assert_eq!(extraction.attempts, 3);
    // only the answered call is billed
    assert_eq!(extraction.calls.len(), 1);
    assert_eq!(handle.join().unwrap().len(), 3);
}

#[test]
fn bad_request_is_fatal_without_retry() {
    let (endpoint, handle) = serve(vec![(400, "bad".into())]);
    let llm = RemoteLlm::new("m", &endpoint, Duration::from_secs(5));
    let schema = schema();
    let structurer = Structurer::new(&llm, &schema);
    let extraction = structurer.extract(&doc(), 0.7, 0);
    let err = extraction.outcome.unwrap_err();
    assert!(matches!(err, StructureError::ProviderFatal { .. }), "{err}");
    assert!(!err.is_reprocessable());
    assert_eq!(handle.join().unwrap().len(), 1);
}

#[test]
fn malformed_reply_and_dead_endpoint() {
    let (endpoint, handle) = serve(vec![(200, "{\"no_text\":1}".into())]);
    let llm = RemoteLlm::new("m", &endpoint, Duration::from_secs(5));
    let request = docpipe_core::structurer::build_prompt(&schema(), &doc(), &Default::default()).unwrap();
    assert!(matches!(llm.complete(&request), Err(ProviderError::Fatal(_))));
    handle.join().unwrap();

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let llm = RemoteLlm::new("m", &format!("http://127.0.0.1:{port}/"), Duration::from_secs(2));
    assert!(matches!(llm.complete(&request), Err(ProviderError::Transient(_))));
}
