//! Near-duplicate detection over stored document embeddings.
//!
//! The index is a linear scan. A document is a duplicate when its best cosine
//! similarity against the stored entries is strictly greater than the threshold.
//!
//! The sidecar file starts with a header record (magic, provider id) followed by
//! one length-prefixed record per entry: `u32 len | u32 id_len | id | u32 dim |
//! dim × f64`, all little-endian.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingVector};

pub const DEFAULT_THRESHOLD: f64 = 0.92;

const MAGIC: &[u8; 4] = b"DDX1";

#[derive(Debug, thiserror::Error)]
pub enum DedupError {
    #[error("vector from provider {got:?} does not match index provider {expected:?}")]
    ProviderMismatch { expected: String, got: String },
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("doc_id {0} is already indexed")]
    DuplicateId(String),
    #[error("threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("corrupt dedup sidecar: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum DedupDecision {
    Unique,
    DuplicateOf { doc_id: String, similarity: f64 },
}

impl DedupDecision {
    pub fn is_duplicate(&self) -> bool {
        matches!(self, DedupDecision::DuplicateOf { .. })
    }
}

#[derive(Debug)]
pub struct DedupIndex {
    provider_id: String,
    dim: usize,
    threshold: f64,
    entries: Vec<(String, EmbeddingVector)>,
    ids: HashSet<String>,
    sidecar: Option<BufWriter<File>>,
}

impl DedupIndex {
    pub fn new(provider_id: &str, dim: usize, threshold: f64) -> Result<Self, DedupError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(DedupError::InvalidThreshold(threshold));
        }
        Ok(Self {
            provider_id: provider_id.to_string(),
            dim,
            threshold,
            entries: Vec::new(),
            ids: HashSet::new(),
            sidecar: None,
        })
    }

    /// Opens (or creates) the persisted index at `path`. Every later insert is
    /// appended to the sidecar and flushed before `insert` returns.
    pub fn open(
        path: &Path,
        provider_id: &str,
        dim: usize,
        threshold: f64,
    ) -> Result<Self, DedupError> {
        let mut index = Self::new(provider_id, dim, threshold)?;
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            let valid_len = index.load(path)?;
            // Drop a torn trailing record left by an interrupted append.
            let file = OpenOptions::new().write(true).open(path)?;
            if file.metadata()?.len() != valid_len {
                log::warn!("truncating torn dedup sidecar record in {}", path.display());
                file.set_len(valid_len)?;
            }
        } else {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(MAGIC)?;
            write_string(&mut w, provider_id)?;
            w.flush()?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        index.sidecar = Some(BufWriter::new(file));
        Ok(index)
    }

    fn load(&mut self, path: &Path) -> Result<u64, DedupError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DedupError::Corrupt("bad magic".into()));
        }
        let stored_provider = read_string(&mut r)?;
        if stored_provider != self.provider_id {
            return Err(DedupError::ProviderMismatch {
                expected: stored_provider,
                got: self.provider_id.clone(),
            });
        }
        let mut valid = (4 + 4 + stored_provider.len()) as u64;
        loop {
            let len = match r.read_u32::<LittleEndian>() {
                Ok(len) => len as usize,
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            };
            let mut body = vec![0u8; len];
            if r.read_exact(&mut body).is_err() {
                break;
            }
            let (doc_id, values) = decode_entry(&body)?;
            let vector = EmbeddingVector::from_normalized(&self.provider_id, values)?;
            self.push(doc_id, vector)?;
            valid += 4 + len as u64;
        }
        Ok(valid)
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.ids.contains(doc_id)
    }

    fn check_vector(&self, vector: &EmbeddingVector) -> Result<(), DedupError> {
        if vector.provider_id() != self.provider_id {
            return Err(DedupError::ProviderMismatch {
                expected: self.provider_id.clone(),
                got: vector.provider_id().to_string(),
            });
        }
        if vector.dim() != self.dim {
            return Err(DedupError::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        Ok(())
    }

    /// Best match over all entries; ties keep the earliest inserted entry.
    pub fn nearest(&self, vector: &EmbeddingVector) -> Result<Option<(&str, f64)>, DedupError> {
        self.check_vector(vector)?;
        let mut best: Option<(&str, f64)> = None;
        for (id, stored) in &self.entries {
            let sim = cosine_similarity(stored, vector)?;
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((id, sim));
            }
        }
        Ok(best)
    }

    pub fn check_duplicate(&self, vector: &EmbeddingVector) -> Result<DedupDecision, DedupError> {
        self.check_with_threshold(vector, self.threshold)
    }

    pub fn check_with_threshold(
        &self,
        vector: &EmbeddingVector,
        threshold: f64,
    ) -> Result<DedupDecision, DedupError> {
        Ok(match self.nearest(vector)? {
            Some((id, sim)) if sim > threshold => DedupDecision::DuplicateOf {
                doc_id: id.to_string(),
                similarity: sim,
            },
            _ => DedupDecision::Unique,
        })
    }

    pub fn insert(&mut self, doc_id: &str, vector: EmbeddingVector) -> Result<(), DedupError> {
        self.check_vector(&vector)?;
        if self.ids.contains(doc_id) {
            return Err(DedupError::DuplicateId(doc_id.to_string()));
        }
        if let Some(w) = self.sidecar.as_mut() {
            let body = encode_entry(doc_id, vector.values());
            w.write_u32::<LittleEndian>(body.len() as u32)?;
            w.write_all(&body)?;
            w.flush()?;
            w.get_ref().sync_data()?;
        }
        self.push(doc_id.to_string(), vector)
    }

    fn push(&mut self, doc_id: String, vector: EmbeddingVector) -> Result<(), DedupError> {
        if !self.ids.insert(doc_id.clone()) {
            return Err(DedupError::DuplicateId(doc_id));
        }
        self.entries.push((doc_id, vector));
        Ok(())
    }
}

/// Default sidecar location next to the document store.
pub fn sidecar_path(store_root: &Path) -> PathBuf {
    store_root.join("dedup.vec")
}

fn encode_entry(doc_id: &str, values: &[f64]) -> Vec<u8> {
    let mut body = Vec::with_capacity(8 + doc_id.len() + values.len() * 8);
    write_string(&mut body, doc_id).expect("vec write");
    body.write_u32::<LittleEndian>(values.len() as u32).expect("vec write");
    for v in values {
        body.write_f64::<LittleEndian>(*v).expect("vec write");
    }
    body
}

fn decode_entry(mut body: &[u8]) -> Result<(String, Vec<f64>), DedupError> {
    let doc_id = read_string(&mut body)?;
    let dim = body.read_u32::<LittleEndian>()? as usize;
    if body.len() != dim * 8 {
        return Err(DedupError::Corrupt(format!(
            "entry {doc_id} declares dim {dim} but carries {} bytes",
            body.len()
        )));
    }
    let mut values = Vec::with_capacity(dim);
    for _ in 0..dim {
        values.push(body.read_f64::<LittleEndian>()?);
    }
    Ok((doc_id, values))
}

fn write_string(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_string(r: &mut impl Read) -> Result<String, DedupError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| DedupError::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(i: usize, dim: usize) -> EmbeddingVector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        EmbeddingVector::new("p", v).unwrap()
    }

    #[test]
    fn empty_index_is_unique() {
        let index = DedupIndex::new("p", 4, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(index.check_duplicate(&axis(0, 4)).unwrap(), DedupDecision::Unique);
    }

    #[test]
    fn orthogonal_newcomer_is_unique() {
        let mut index = DedupIndex::new("p", 8, DEFAULT_THRESHOLD).unwrap();
        for i in 0..7 {
            index.insert(&format!("d{i}"), axis(i, 8)).unwrap();
        }
        assert_eq!(index.check_duplicate(&axis(7, 8)).unwrap(), DedupDecision::Unique);
        assert_eq!(
            index.check_duplicate(&axis(3, 8)).unwrap(),
            DedupDecision::DuplicateOf {
                doc_id: "d3".into(),
                similarity: 1.0
            }
        );
    }

    #[test]
    fn equal_similarity_does_not_exceed() {
        let mut index = DedupIndex::new("p", 2, 1.0).unwrap();
        index.insert("a", axis(0, 2)).unwrap();
        assert_eq!(index.check_duplicate(&axis(0, 2)).unwrap(), DedupDecision::Unique);
    }

    #[test]
    fn ties_go_to_earliest_insert() {
        let mut index = DedupIndex::new("p", 2, 0.5).unwrap();
        let v = EmbeddingVector::new("p", vec![1.0, 1.0]).unwrap();
        index.insert("first", axis(0, 2)).unwrap();
        index.insert("second", axis(1, 2)).unwrap();
        match index.check_duplicate(&v).unwrap() {
            DedupDecision::DuplicateOf { doc_id, .. } => assert_eq!(doc_id, "first"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_mismatches_and_duplicate_ids() {
        let mut index = DedupIndex::new("p", 2, 0.9).unwrap();
        index.insert("a", axis(0, 2)).unwrap();
        assert!(matches!(index.insert("a", axis(1, 2)), Err(DedupError::DuplicateId(_))));
        let other = EmbeddingVector::new("q", vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            index.check_duplicate(&other),
            Err(DedupError::ProviderMismatch { .. })
        ));
        assert!(matches!(
            index.check_duplicate(&axis(0, 3)),
            Err(DedupError::DimensionMismatch { .. })
        ));
        assert!(DedupIndex::new("p", 2, 0.0).is_err());
        assert!(DedupIndex::new("p", 2, 1.5).is_err());
    }

    #[test]
    fn sidecar_round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dedup.vec");
        let v = EmbeddingVector::new("p", vec![0.3, 0.4, 0.5]).unwrap();
        {
            let mut index = DedupIndex::open(&path, "p", 3, 0.9).unwrap();
            index.insert("a", v.clone()).unwrap();
            index.insert("b", axis(1, 3)).unwrap();
        }
        // Simulate a crash halfway through an append.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[200, 0, 0, 0, 1, 2]).unwrap();
        drop(f);

        let mut index = DedupIndex::open(&path, "p", 3, 0.9).unwrap();
        assert_eq!(index.len(), 2);
        assert_eq!(
            index.check_duplicate(&v).unwrap(),
            DedupDecision::DuplicateOf {
                doc_id: "a".into(),
                similarity: cosine_similarity(&v, &v).unwrap()
            }
        );
        index.insert("c", axis(0, 3)).unwrap();
        drop(index);
        assert_eq!(DedupIndex::open(&path, "p", 3, 0.9).unwrap().len(), 3);
        assert!(matches!(
            DedupIndex::open(&path, "other", 3, 0.9),
            Err(DedupError::ProviderMismatch { .. })
        ));
    }
}
