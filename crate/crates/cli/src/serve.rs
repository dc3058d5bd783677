//! Read-only HTTP export of normalized records.
//!
//! `GET /records?schema=<id>&since=<rfc3339>` streams matching records as
//! NDJSON in id order. `GET /health` answers 200. Each request opens its own
//! read-only snapshot of the store, so the server never blocks a running
//! pipeline and never modifies stored data.

use std::io::Cursor;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, NaiveDate, Utc};
use docpipe_core::store::{Collection, DocumentStore, NormalizedRecord};
use tiny_http::{Header, Method, Request, Response, Server};

#[derive(Debug, thiserror::Error)]
#[error("binding {addr}: {message}")]
pub struct ServeError {
    addr: String,
    message: String,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct RecordQuery {
    pub schema: Option<String>,
    pub since: Option<DateTime<Utc>>,
}

fn parse_since(value: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(value) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

impl RecordQuery {
    pub fn parse(query: &str) -> Result<Self, String> {
        let mut q = RecordQuery::default();
        for (key, value) in form_urlencoded::parse(query.as_bytes()) {
            match key.as_ref() {
                "schema" => q.schema = Some(value.into_owned()),
                "since" => q.since = Some(parse_since(&value).ok_or_else(|| format!("bad since value {value:?}"))?),
                other => return Err(format!("unknown parameter {other:?}")),
            }
        }
        Ok(q)
    }

    pub fn matches(&self, record: &NormalizedRecord) -> bool {
        self.schema.as_ref().is_none_or(|s| *s == record.schema_id)
            && self.since.is_none_or(|t| record.accepted_at >= t)
    }
}

/// NDJSON body for a query against the store at `root`.
pub fn export_records(root: &Path, query: &RecordQuery) -> Result<String, String> {
    let store = DocumentStore::open_read_only(root).map_err(|e| e.to_string())?;
    let mut body = String::new();
    for record in store
        .scan::<NormalizedRecord>(Collection::Normalized)
        .map_err(|e| e.to_string())?
    {
        if query.matches(&record) {
            body.push_str(&serde_json::to_string(&record).map_err(|e| e.to_string())?);
            body.push('\n');
        }
    }
    Ok(body)
}

fn text(status: u16, body: String, content_type: &str) -> Response<Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", content_type).expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn handle(root: &Path, request: Request) {
    let url = request.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let response = match (request.method(), path) {
        (Method::Get, "/health") => text(200, "ok\n".into(), "text/plain"),
        (Method::Get, "/records") => match RecordQuery::parse(query) {
            Ok(q) => match export_records(root, &q) {
                Ok(body) => text(200, body, "application/x-ndjson"),
                Err(e) => {
                    log::error!("export failed: {e}");
                    text(500, format!("{e}\n"), "text/plain")
                }
            },
            Err(e) => text(400, format!("{e}\n"), "text/plain"),
        },
        (_, "/health" | "/records") => text(405, "method not allowed\n".into(), "text/plain"),
        _ => text(404, "not found\n".into(), "text/plain"),
    };
    if let Err(e) = request.respond(response) {
        log::warn!("writing response for {url}: {e}");
    }
}

pub struct ExportServer {
    server: Arc<Server>,
    worker: JoinHandle<()>,
    addr: SocketAddr,
}

impl ExportServer {
    /// Binds `addr` (port 0 picks a free port) and serves on a background thread.
    pub fn start(store_root: PathBuf, addr: &str) -> Result<Self, ServeError> {
        let server = Server::http(addr).map_err(|e| ServeError {
            addr: addr.to_string(),
            message: e.to_string(),
        })?;
        let bound = server.server_addr().to_ip().ok_or_else(|| ServeError {
            addr: addr.to_string(),
            message: "not an IP listener".into(),
        })?;
        let server = Arc::new(server);
        let listener = Arc::clone(&server);
        let worker = std::thread::spawn(move || {
            for request in listener.incoming_requests() {
                handle(&store_root, request);
            }
        });
        Ok(Self {
            server,
            worker,
            addr: bound,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn wait(self) {
        let _ = self.worker.join();
    }

    pub fn shutdown(self) {
        self.server.unblock();
        let _ = self.worker.join();
    }
}
