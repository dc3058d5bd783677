use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{ContentKind, SourceKind, SourceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Minimum gap between two request starts against the same host.
    pub politeness_delay_ms: u64,
    /// Attempts after the first one.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_body_bytes: u64,
    pub timeout_ms: u64,
    pub user_agent: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            politeness_delay_ms: 1000,
            max_retries: 3,
            backoff_base_ms: 500,
            max_body_bytes: 10 * 1024 * 1024,
            timeout_ms: 30_000,
            user_agent: concat!("docpipe/", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchedBody {
    pub locator: String,
    pub body: Vec<u8>,
    pub media_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchSkip {
    pub locator: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

#[derive(Debug, Clone, Default)]
pub struct FetchOutcome {
    pub bodies: Vec<FetchedBody>,
    pub skips: Vec<FetchSkip>,
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("network failure fetching {locator} after {attempts} attempts: {message}")]
    Network {
        locator: String,
        attempts: u32,
        message: String,
    },
    #[error("reading {locator}: {source}")]
    Io {
        locator: String,
        source: std::io::Error,
    },
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Network { .. })
    }
}

/// Serializes request starts per host so consecutive starts are at least
/// `delay` apart. Safe to share between threads.
#[derive(Debug)]
pub struct HostPacer {
    delay: Duration,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl HostPacer {
    pub fn new(delay: Duration) -> Self {
        Self {
            delay,
            next_slot: Mutex::new(HashMap::new()),
        }
    }

    /// Blocks until this caller may start a request against `host`.
    pub fn wait(&self, host: &str) -> Instant {
        let slot = {
            let mut slots = self.next_slot.lock();
            let now = Instant::now();
            let slot = slots.get(host).map_or(now, |&next| next.max(now));
            slots.insert(host.to_string(), slot + self.delay);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
        slot
    }
}

pub struct Fetcher {
    config: HttpConfig,
    agent: ureq::Agent,
    pacer: HostPacer,
}

impl Default for Fetcher {
    fn default() -> Self {
        Self::new(HttpConfig::default())
    }
}

impl Fetcher {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .user_agent(config.user_agent.as_str())
            .build()
            .into();
        let pacer = HostPacer::new(Duration::from_millis(config.politeness_delay_ms));
        Self {
            config,
            agent,
            pacer,
        }
    }

    pub fn fetch(&self, source: &SourceSpec) -> Result<FetchOutcome, FetchError> {
        match source.kind {
            SourceKind::Http => self.fetch_http(source),
            SourceKind::File => fetch_files(source),
            SourceKind::Stream => fetch_stream(source),
        }
    }

    fn fetch_http(&self, source: &SourceSpec) -> Result<FetchOutcome, FetchError> {
        let url = source.locator.as_str();
        let host = host_of(url);
        let mut outcome = FetchOutcome::default();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.pacer.wait(&host);
            let result = self.agent.get(url).call();
            let retry_reason = match result {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if status == 429 || status >= 500 {
                        format!("HTTP {status}")
                    } else if status >= 400 {
                        log::warn!("skipping {url}: HTTP {status}");
                        outcome.skips.push(FetchSkip {
                            locator: url.to_string(),
                            reason: format!("HTTP {status}"),
                            status: Some(status),
                        });
                        return Ok(outcome);
                    } else {
                        let media_type = response
                            .headers()
                            .get("content-type")
                            .and_then(|v| v.to_str().ok())
                            .map(str::to_string)
                            .unwrap_or_else(|| media_type_for_hint(source.content_kind_hint).into());
                        let limit = self.config.max_body_bytes;
                        match response.body_mut().with_config().limit(limit).read_to_vec() {
                            Ok(body) => {
                                outcome.bodies.push(FetchedBody {
                                    locator: url.to_string(),
                                    body,
                                    media_type,
                                });
                                return Ok(outcome);
                            }
                            Err(ureq::Error::BodyExceedsLimit(_)) => {
                                outcome.skips.push(FetchSkip {
                                    locator: url.to_string(),
                                    reason: format!("body exceeds {limit} bytes"),
                                    status: Some(status),
                                });
                                return Ok(outcome);
                            }
                            Err(e) => e.to_string(),
                        }
                    }
                }
                Err(e) => e.to_string(),
            };
            if attempt > self.config.max_retries {
                if retry_reason.starts_with("HTTP ") {
                    outcome.skips.push(FetchSkip {
                        locator: url.to_string(),
                        reason: retry_reason,
                        status: None,
                    });
                    return Ok(outcome);
                }
                return Err(FetchError::Network {
                    locator: url.to_string(),
                    attempts: attempt,
                    message: retry_reason,
                });
            }
            let backoff = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1));
            log::debug!("retrying {url} in {backoff} ms: {retry_reason}");
            std::thread::sleep(Duration::from_millis(backoff));
        }
    }
}

fn host_of(url: &str) -> String {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    rest.split(['/', '?', '#']).next().unwrap_or(rest).to_lowercase()
}

fn media_type_for_hint(hint: ContentKind) -> &'static str {
    match hint {
        ContentKind::Html => "text/html",
        ContentKind::Text => "text/plain",
        ContentKind::Log => "text/x-log",
    }
}

fn media_type_for_path(path: &Path, hint: ContentKind) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase).as_deref() {
        Some("html" | "htm" | "xhtml") => "text/html",
        Some("log") => "text/x-log",
        Some("txt" | "md") => "text/plain",
        _ => media_type_for_hint(hint),
    }
}

fn io_err(locator: &str) -> impl FnOnce(std::io::Error) -> FetchError + '_ {
    move |source| FetchError::Io {
        locator: locator.to_string(),
        source,
    }
}

/// A file, or every regular file below a directory in path order.
fn fetch_files(source: &SourceSpec) -> Result<FetchOutcome, FetchError> {
    let root = Path::new(&source.locator);
    let mut paths = Vec::new();
    if root.is_dir() {
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| FetchError::Io {
                locator: source.locator.clone(),
                source: e.into(),
            })?;
            if entry.file_type().is_file() {
                paths.push(entry.into_path());
            }
        }
    } else {
        paths.push(root.to_path_buf());
    }
    let mut outcome = FetchOutcome::default();
    for path in paths {
        let locator = path.display().to_string();
        let body = fs::read(&path).map_err(io_err(&locator))?;
        outcome.bodies.push(FetchedBody {
            media_type: media_type_for_path(&path, source.content_kind_hint).to_string(),
            locator,
            body,
        });
    }
    Ok(outcome)
}

/// Line stream cut into windows of `batch_lines` non-empty lines.
fn fetch_stream(source: &SourceSpec) -> Result<FetchOutcome, FetchError> {
    let text = fs::read(&source.locator).map_err(io_err(&source.locator))?;
    let text = String::from_utf8_lossy(&text);
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let media_type = media_type_for_hint(source.content_kind_hint);
    let outcome = FetchOutcome {
        bodies: lines
            .chunks(source.batch_lines())
            .map(|window| {
                let first = window[0].0 + 1;
                let last = window[window.len() - 1].0 + 1;
                let body = window.iter().map(|(_, l)| *l).collect::<Vec<_>>().join("\n");
                FetchedBody {
                    locator: format!("{}#L{first}-L{last}", source.locator),
                    body: body.into_bytes(),
                    media_type: media_type.to_string(),
                }
            })
            .collect(),
        skips: Vec::new(),
    };
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn host_extraction() {
        assert_eq!(host_of("https://Example.com:8080/a?b"), "example.com:8080");
        assert_eq!(host_of("http://h/x"), "h");
    }

    #[test]
    fn directory_of_three_files() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.txt", "a.txt", "c.txt"] {
            fs::write(dir.path().join(name), name).unwrap();
        }
        let source = SourceSpec {
            source_id: "f".into(),
            kind: SourceKind::File,
            locator: dir.path().display().to_string(),
            poll_interval: 1.0,
            content_kind_hint: ContentKind::Text,
            batch_lines: None,
        };
        let out = Fetcher::default().fetch(&source).unwrap();
        assert_eq!(out.bodies.len(), 3);
        let names: Vec<_> = out.bodies.iter().map(|b| String::from_utf8_lossy(&b.body).to_string()).collect();
        assert_eq!(names, ["a.txt", "b.txt", "c.txt"]);
        assert!(out.bodies.iter().all(|b| b.media_type == "text/plain"));
    }

    #[test]
    fn stream_batches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("app.log");
        fs::write(&path, "l1\nl2\n\nl3\nl4\nl5\n").unwrap();
        let mut source = SourceSpec {
            source_id: "s".into(),
            kind: SourceKind::Stream,
            locator: path.display().to_string(),
            poll_interval: 1.0,
            content_kind_hint: ContentKind::Log,
            batch_lines: Some(5),
        };
        let out = Fetcher::default().fetch(&source).unwrap();
        assert_eq!(out.bodies.len(), 1);
        assert_eq!(out.bodies[0].body, b"l1\nl2\nl3\nl4\nl5");
        source.batch_lines = None;
        let out = Fetcher::default().fetch(&source).unwrap();
        assert_eq!(out.bodies.len(), 5);
        assert!(out.bodies[2].locator.ends_with("#L4-L4"));
    }

    #[test]
    fn pacer_spaces_same_host() {
        let pacer = HostPacer::new(Duration::from_millis(50));
        let a = pacer.wait("h");
        let b = pacer.wait("h");
        assert!(b.duration_since(a) >= Duration::from_millis(50));
        let started = Instant::now();
        pacer.wait("other");
        assert!(started.elapsed() < Duration::from_millis(50));
    }
}
