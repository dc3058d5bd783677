//! Durable collections of raw documents, normalized records, validation
//! reports and review items.
//!
//! Each collection is an append-only newline-delimited JSON journal
//! `<root>/<collection>.ndjson` with an id-to-offset sidecar
//! `<root>/<collection>.idx`. Journal lines are `{"id", "item", "op"}` with
//! `op` one of `put` or `replace`; replay applies them as upserts, so replaying
//! a journal twice gives the same state as once. Every write is flushed and
//! synced before the call returns. A torn trailing line (crash mid-append) is
//! cut off when the collection is opened.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::Clock;
use crate::ingest::RawDocument;
use crate::schema::{validate_record, ExtractionSchema, FieldMap, RuleViolation};
use crate::structurer::CandidateRecord;
use crate::validator::{Cost, ValidationReport};

/// Dead journal lines tolerated before a write triggers compaction.
const COMPACT_MIN_DEAD: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    Raw,
    Normalized,
    Reports,
    Review,
}

impl Collection {
    pub const ALL: [Collection; 4] = [Collection::Raw, Collection::Normalized, Collection::Reports, Collection::Review];

    pub fn name(self) -> &'static str {
        match self {
            Collection::Raw => "raw",
            Collection::Normalized => "normalized",
            Collection::Reports => "reports",
            Collection::Review => "review",
        }
    }
}

impl std::fmt::Display for Collection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordProvenance {
    pub model_id: String,
    pub reference_temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica_temperature: Option<f64>,
    pub replicas: u32,
    pub cost: Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub doc_id: String,
    pub schema_id: String,
    pub schema_version: u32,
    pub fields: FieldMap,
    pub provenance: RecordProvenance,
    pub accepted_at: DateTime<Utc>,
}

impl NormalizedRecord {
    pub fn id(&self) -> String {
        normalized_id(&self.doc_id, &self.schema_id, self.schema_version)
    }

    /// Stored form of the reference candidate of an accepted or approved document.
    pub fn from_candidate(
        candidate: &CandidateRecord,
        report: &ValidationReport,
        replica_temperature: Option<f64>,
        accepted_at: DateTime<Utc>,
    ) -> Self {
        Self {
            doc_id: report.doc_id.clone(),
            schema_id: report.schema_id.clone(),
            schema_version: report.schema_version,
            fields: candidate.fields.clone(),
            provenance: RecordProvenance {
                model_id: candidate.provenance.model_id.clone(),
                reference_temperature: candidate.provenance.temperature,
                replica_temperature: replica_temperature.filter(|_| report.replicas > 0),
                replicas: report.replicas,
                cost: report.cost,
            },
            accepted_at,
        }
    }
}

pub fn normalized_id(doc_id: &str, schema_id: &str, version: u32) -> String {
    format!("{doc_id}@{schema_id}.v{version}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDecision {
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub doc_id: String,
    pub candidate: CandidateRecord,
    pub report: ValidationReport,
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_note: Option<String>,
    /// Rule violations from the last failed promotion attempt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gate_violations: Vec<RuleViolation>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{collection}: id {id:?} already exists")]
    Duplicate { collection: Collection, id: String },
    #[error("{collection}: id {id:?} not found")]
    NotFound { collection: Collection, id: String },
    #[error("review item {id:?} is {status:?}, not pending")]
    NotPending { id: String, status: ReviewStatus },
    #[error("normalized record {id:?} references missing raw document {doc_id:?}")]
    MissingRaw { id: String, doc_id: String },
    #[error("record {id:?} violates the schema: {violations:?}")]
    Violations { id: String, violations: Vec<RuleViolation> },
    #[error("record {id:?} is for schema {found}, expected {expected}")]
    SchemaMismatch { id: String, found: String, expected: String },
    #[error("{collection} journal line {line} is corrupt: {message}")]
    Corrupt { collection: Collection, line: usize, message: String },
    #[error("{0} is open read-only")]
    ReadOnly(Collection),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("serializing item: {0}")]
    Serde(#[from] serde_json::Error),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> StoreError {
    let context = context.into();
    move |source| StoreError::Io { context, source }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Op {
    Put,
    Replace,
}

#[derive(Deserialize)]
struct JournalLine<T> {
    op: Op,
    id: String,
    item: T,
}

struct Journal {
    collection: Collection,
    path: PathBuf,
    idx_path: PathBuf,
    writer: File,
    reader: File,
    len: u64,
    /// id to byte offset of its latest journal line, in id order.
    index: BTreeMap<String, u64>,
    lines: usize,
    read_only: bool,
}

impl Journal {
    fn open(root: &Path, collection: Collection, read_only: bool) -> Result<Self, StoreError> {
        let path = root.join(format!("{}.ndjson", collection.name()));
        let idx_path = root.join(format!("{}.idx", collection.name()));
        if read_only && !path.exists() {
            File::create(&path).map_err(io_err(format!("creating {}", path.display())))?;
        }
        let writer = OpenOptions::new()
            .create(!read_only)
            .read(true)
            .append(!read_only)
            .open(&path)
            .map_err(io_err(format!("opening {}", path.display())))?;
        let reader = File::open(&path).map_err(io_err(format!("opening {}", path.display())))?;
        let mut journal = Journal {
            collection,
            path,
            idx_path,
            writer,
            reader,
            len: 0,
            index: BTreeMap::new(),
            lines: 0,
            read_only,
        };
        journal.replay()?;
        if !read_only {
            journal.write_idx()?;
        }
        Ok(journal)
    }

    fn replay(&mut self) -> Result<(), StoreError> {
        let mut data = Vec::new();
        File::open(&self.path)
            .and_then(|mut f| f.read_to_end(&mut data))
            .map_err(io_err(format!("reading {}", self.path.display())))?;
        let mut offset = 0usize;
        let mut line_no = 0usize;
        let mut valid_end = 0usize;
        while offset < data.len() {
            line_no += 1;
            let Some(nl) = data[offset..].iter().position(|&b| b == b'\n') else {
                log::warn!("{}: dropping torn trailing line {line_no}", self.collection);
                break;
            };
            let line = &data[offset..offset + nl];
            let next = offset + nl + 1;
            match serde_json::from_slice::<JournalLine<serde::de::IgnoredAny>>(line) {
                Ok(entry) => {
                    if matches!(entry.op, Op::Replace) && !self.index.contains_key(&entry.id) {
                        log::warn!("{}: line {line_no} replaces unknown id {:?}", self.collection, entry.id);
                    }
                    self.index.insert(entry.id, offset as u64);
                    self.lines += 1;
                    valid_end = next;
                }
                Err(e) if next >= data.len() => {
                    log::warn!("{}: dropping torn trailing line {line_no}: {e}", self.collection);
                    break;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        collection: self.collection,
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
            offset = next;
        }
        if valid_end < data.len() && !self.read_only {
            self.writer
                .set_len(valid_end as u64)
                .and_then(|_| self.writer.sync_data())
                .map_err(io_err(format!("truncating {}", self.path.display())))?;
        }
        self.len = valid_end as u64;
        Ok(())
    }

    fn write_idx(&self) -> Result<(), StoreError> {
        let mut text = String::new();
        for (id, offset) in &self.index {
            text.push_str(&format!("{offset}\t{id}\n"));
        }
        let tmp = self.idx_path.with_extension("idx.tmp");
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &self.idx_path))
            .map_err(io_err(format!("writing {}", self.idx_path.display())))
    }

    fn append(&mut self, op: Op, id: &str, item: Value) -> Result<(), StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly(self.collection));
        }
        let mut line = serde_json::to_string(&json!({ "op": op, "id": id, "item": item }))?;
        line.push('\n');
        let context = || format!("appending to {}", self.path.display());
        self.writer.write_all(line.as_bytes()).map_err(io_err(context()))?;
        self.writer.flush().map_err(io_err(context()))?;
        self.writer.sync_data().map_err(io_err(context()))?;
        self.index.insert(id.to_string(), self.len);
        self.len += line.len() as u64;
        self.lines += 1;
        let mut idx = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.idx_path)
            .map_err(io_err(format!("opening {}", self.idx_path.display())))?;
        writeln!(idx, "{}\t{id}", self.len - line.len() as u64)
            .map_err(io_err(format!("appending to {}", self.idx_path.display())))?;
        if self.lines - self.index.len() > COMPACT_MIN_DEAD.max(self.index.len()) {
            self.compact()?;
        }
        Ok(())
    }

    fn read_at(&mut self, offset: u64) -> Result<Value, StoreError> {
        self.reader
            .seek(SeekFrom::Start(offset))
            .map_err(io_err(format!("seeking {}", self.path.display())))?;
        let mut line = String::new();
        BufReader::new(&mut self.reader)
            .read_line(&mut line)
            .map_err(io_err(format!("reading {}", self.path.display())))?;
        let entry: JournalLine<Value> = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            collection: self.collection,
            line: 0,
            message: e.to_string(),
        })?;
        Ok(entry.item)
    }

    fn get(&mut self, id: &str) -> Result<Option<Value>, StoreError> {
        match self.index.get(id).copied() {
            Some(offset) => self.read_at(offset).map(Some),
            None => Ok(None),
        }
    }

    /// Latest version of every item, in id order.
    fn scan(&mut self) -> Result<Vec<(String, Value)>, StoreError> {
        let entries: Vec<(String, u64)> = self.index.iter().map(|(k, v)| (k.clone(), *v)).collect();
        entries
            .into_iter()
            .map(|(id, offset)| self.read_at(offset).map(|item| (id, item)))
            .collect()
    }

    /// Rewrites the journal with one `put` per live id.
    fn compact(&mut self) -> Result<(), StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly(self.collection));
        }
        let live = self.scan()?;
        let tmp = self.path.with_extension("ndjson.tmp");
        let mut out = File::create(&tmp).map_err(io_err(format!("creating {}", tmp.display())))?;
        let mut index = BTreeMap::new();
        let mut offset = 0u64;
        for (id, item) in &live {
            let mut line = serde_json::to_string(&json!({ "op": Op::Put, "id": id, "item": item }))?;
            line.push('\n');
            out.write_all(line.as_bytes()).map_err(io_err(format!("writing {}", tmp.display())))?;
            index.insert(id.clone(), offset);
            offset += line.len() as u64;
        }
        out.sync_all().map_err(io_err(format!("syncing {}", tmp.display())))?;
        fs::rename(&tmp, &self.path).map_err(io_err(format!("replacing {}", self.path.display())))?;
        self.writer = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(io_err(format!("opening {}", self.path.display())))?;
        self.reader = File::open(&self.path).map_err(io_err(format!("opening {}", self.path.display())))?;
        self.index = index;
        self.len = offset;
        self.lines = live.len();
        self.write_idx()
    }
}

/// The four collections under one root directory.
pub struct DocumentStore {
    root: PathBuf,
    raw: Mutex<Journal>,
    normalized: Mutex<Journal>,
    reports: Mutex<Journal>,
    review: Mutex<Journal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntegrityReport {
    /// Normalized record ids whose raw document is missing.
    pub orphans: Vec<String>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.orphans.is_empty()
    }
}

impl DocumentStore {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        Self::open_with(root, false)
    }

    /// Snapshot of the store that never writes: torn tails are ignored
    /// rather than truncated and every write fails.
    pub fn open_read_only(root: &Path) -> Result<Self, StoreError> {
        Self::open_with(root, true)
    }

    fn open_with(root: &Path, read_only: bool) -> Result<Self, StoreError> {
        fs::create_dir_all(root).map_err(io_err(format!("creating {}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            raw: Mutex::new(Journal::open(root, Collection::Raw, read_only)?),
            normalized: Mutex::new(Journal::open(root, Collection::Normalized, read_only)?),
            reports: Mutex::new(Journal::open(root, Collection::Reports, read_only)?),
            review: Mutex::new(Journal::open(root, Collection::Review, read_only)?),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn journal(&self, collection: Collection) -> &Mutex<Journal> {
        match collection {
            Collection::Raw => &self.raw,
            Collection::Normalized => &self.normalized,
            Collection::Reports => &self.reports,
            Collection::Review => &self.review,
        }
    }

    /// Appends a new item. Fails without writing when the id exists.
    pub fn put<T: Serialize>(&self, collection: Collection, id: &str, item: &T) -> Result<String, StoreError> {
        let mut journal = self.journal(collection).lock();
        if journal.index.contains_key(id) {
            return Err(StoreError::Duplicate {
                collection,
                id: id.to_string(),
            });
        }
        journal.append(Op::Put, id, serde_json::to_value(item)?)?;
        Ok(id.to_string())
    }

    /// Overwrites an existing item.
    pub fn replace<T: Serialize>(&self, collection: Collection, id: &str, item: &T) -> Result<(), StoreError> {
        let mut journal = self.journal(collection).lock();
        if !journal.index.contains_key(id) {
            return Err(StoreError::NotFound {
                collection,
                id: id.to_string(),
            });
        }
        journal.append(Op::Replace, id, serde_json::to_value(item)?)
    }

    pub fn get<T: DeserializeOwned>(&self, collection: Collection, id: &str) -> Result<Option<T>, StoreError> {
        let value = self.journal(collection).lock().get(id)?;
        Ok(value.map(serde_json::from_value).transpose()?)
    }

    pub fn contains(&self, collection: Collection, id: &str) -> bool {
        self.journal(collection).lock().index.contains_key(id)
    }

    pub fn count(&self, collection: Collection) -> usize {
        self.journal(collection).lock().index.len()
    }

    pub fn ids(&self, collection: Collection) -> Vec<String> {
        self.journal(collection).lock().index.keys().cloned().collect()
    }

    /// Every item of a collection in id order.
    pub fn scan<T: DeserializeOwned>(&self, collection: Collection) -> Result<Vec<T>, StoreError> {
        let items = self.journal(collection).lock().scan()?;
        items
            .into_iter()
            .map(|(_, v)| serde_json::from_value(v).map_err(StoreError::from))
            .collect()
    }

    pub fn compact(&self, collection: Collection) -> Result<(), StoreError> {
        self.journal(collection).lock().compact()
    }

    pub fn put_raw(&self, doc: &RawDocument) -> Result<String, StoreError> {
        self.put(Collection::Raw, &doc.doc_id, doc)
    }

    /// Stores an accepted record after checking the raw reference and the schema rules.
    pub fn put_normalized(&self, record: &NormalizedRecord, schema: &ExtractionSchema) -> Result<String, StoreError> {
        let id = record.id();
        if record.schema_id != schema.schema_id || record.schema_version != schema.version {
            return Err(StoreError::SchemaMismatch {
                id,
                found: format!("{}.v{}", record.schema_id, record.schema_version),
                expected: format!("{}.v{}", schema.schema_id, schema.version),
            });
        }
        if !self.contains(Collection::Raw, &record.doc_id) {
            return Err(StoreError::MissingRaw {
                id,
                doc_id: record.doc_id.clone(),
            });
        }
        let violations = validate_record(schema, &record.fields);
        if !violations.is_empty() {
            return Err(StoreError::Violations { id, violations });
        }
        self.put(Collection::Normalized, &id, record)
    }

    /// Inserts or overwrites the report of a document.
    pub fn upsert_report(&self, report: &ValidationReport) -> Result<(), StoreError> {
        if self.contains(Collection::Reports, &report.doc_id) {
            self.replace(Collection::Reports, &report.doc_id, report)
        } else {
            self.put(Collection::Reports, &report.doc_id, report).map(|_| ())
        }
    }

    pub fn put_review(&self, item: &ReviewItem) -> Result<String, StoreError> {
        self.put(Collection::Review, &item.doc_id, item)
    }

    pub fn pending_reviews(&self) -> Result<Vec<ReviewItem>, StoreError> {
        Ok(self
            .scan::<ReviewItem>(Collection::Review)?
            .into_iter()
            .filter(|i| i.status == ReviewStatus::Pending)
            .collect())
    }

    /// Settles a pending review item. Approval promotes the candidate to the
    /// normalized collection behind the schema-rule gate; a failed gate keeps
    /// the item pending with the violations attached.
    pub fn resolve_review(
        &self,
        id: &str,
        decision: ReviewDecision,
        note: Option<String>,
        schema: &ExtractionSchema,
        clock: &dyn Clock,
    ) -> Result<ReviewItem, StoreError> {
        let mut item: ReviewItem = self.get(Collection::Review, id)?.ok_or_else(|| StoreError::NotFound {
            collection: Collection::Review,
            id: id.to_string(),
        })?;
        if item.status != ReviewStatus::Pending {
            return Err(StoreError::NotPending {
                id: id.to_string(),
                status: item.status,
            });
        }
        item.resolution_note = note;
        match decision {
            ReviewDecision::Rejected => item.status = ReviewStatus::Rejected,
            ReviewDecision::Approved => {
                let record = NormalizedRecord::from_candidate(&item.candidate, &item.report, None, clock.now());
                match self.put_normalized(&record, schema) {
                    Ok(_) => {
                        item.status = ReviewStatus::Approved;
                        item.gate_violations.clear();
                    }
                    Err(StoreError::Violations { violations, .. }) => {
                        item.gate_violations = violations.clone();
                        self.replace(Collection::Review, id, &item)?;
                        return Err(StoreError::Violations {
                            id: id.to_string(),
                            violations,
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        self.replace(Collection::Review, id, &item)?;
        Ok(item)
    }

    /// Every normalized record must have its raw document.
    pub fn check_integrity(&self) -> Result<IntegrityReport, StoreError> {
        let records: Vec<NormalizedRecord> = self.scan(Collection::Normalized)?;
        Ok(IntegrityReport {
            orphans: records
                .iter()
                .filter(|r| !self.contains(Collection::Raw, &r.doc_id))
                .map(NormalizedRecord::id)
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_duplicate_restart() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        store.put(Collection::Reports, "a", &json!({"x": 1})).unwrap();
        assert!(matches!(
            store.put(Collection::Reports, "a", &json!({"x": 2})),
            Err(StoreError::Duplicate { .. })
        ));
        assert_eq!(store.get::<Value>(Collection::Reports, "a").unwrap(), Some(json!({"x": 1})));
        assert_eq!(store.get::<Value>(Collection::Reports, "zz").unwrap(), None);
        store.replace(Collection::Reports, "a", &json!({"x": 3})).unwrap();
        drop(store);
        let store = DocumentStore::open(dir.path()).unwrap();
        assert_eq!(store.get::<Value>(Collection::Reports, "a").unwrap(), Some(json!({"x": 3})));
        assert_eq!(store.count(Collection::Reports), 1);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        store.put(Collection::Raw, "a", &json!({"x": 1})).unwrap();
        drop(store);
        let path = dir.path().join("raw.ndjson");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"op\":\"put\",\"id\":\"b\",\"it").unwrap();
        drop(f);
        let store = DocumentStore::open(dir.path()).unwrap();
        assert_eq!(store.ids(Collection::Raw), ["a"]);
        store.put(Collection::Raw, "b", &json!({"x": 2})).unwrap();
        drop(store);
        let store = DocumentStore::open(dir.path()).unwrap();
        assert_eq!(store.ids(Collection::Raw), ["a", "b"]);
    }

    #[test]
    fn read_only_ignores_torn_tail_without_touching_it() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        store.put(Collection::Raw, "a", &json!({"x": 1})).unwrap();
        drop(store);
        let path = dir.path().join("raw.ndjson");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"op\":\"put\"").unwrap();
        drop(f);
        let before = fs::read(&path).unwrap();
        let snapshot = DocumentStore::open_read_only(dir.path()).unwrap();
        assert_eq!(snapshot.ids(Collection::Raw), ["a"]);
        assert!(matches!(snapshot.put(Collection::Raw, "b", &1), Err(StoreError::ReadOnly(_))));
        assert_eq!(fs::read(&path).unwrap(), before);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("raw.ndjson"),
            "garbage\n{\"op\":\"put\",\"id\":\"a\",\"item\":1}\n",
        )
        .unwrap();
        assert!(matches!(
            DocumentStore::open(dir.path()),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn compaction_keeps_latest() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        store.put(Collection::Reports, "a", &1).unwrap();
        store.put(Collection::Reports, "b", &2).unwrap();
        store.replace(Collection::Reports, "a", &3).unwrap();
        store.compact(Collection::Reports).unwrap();
        let text = fs::read_to_string(dir.path().join("reports.ndjson")).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(store.scan::<i32>(Collection::Reports).unwrap(), [3, 2]);
        store.put(Collection::Reports, "c", &4).unwrap();
        drop(store);
        let store = DocumentStore::open(dir.path()).unwrap();
        assert_eq!(store.scan::<i32>(Collection::Reports).unwrap(), [3, 2, 4]);
        let idx = fs::read_to_string(dir.path().join("reports.idx")).unwrap();
        assert_eq!(idx.lines().count(), 3);
    }
}
