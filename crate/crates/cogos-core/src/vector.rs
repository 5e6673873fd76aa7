//! Embedding and cosine-similarity retrieval backing the three RAG
//! databases (memory, behavior patterns, ethical rules).
//!
//! Frozen constants, so persisted stores stay portable across builds:
//! dimension D = 256; the default embedder (id 1) is a hashed bag of
//! tokens — lowercase, split on non-alphanumerics, each token hashed with
//! 64-bit FNV-1a modulo D, counted, then L2-normalized. Text with no
//! tokens embeds to the zero vector and is unreachable by similarity.
//!
//! Retrieval is an exact scan: these databases hold hundreds of entries,
//! and query results must match a brute-force sort bit for bit.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 256;
pub const HASHED_EMBEDDER_ID: u32 = 1;
const STORE_MAGIC: &[u8; 4] = b"COGV";
const STORE_VERSION: u32 = 1;

/// Fixed-length real vector with its cached Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    norm: f64,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Embedding {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Embedding { values, norm }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// True for non-normalizable embeddings (no tokens contributed).
    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        if self.is_zero() || other.is_zero() {
            return 0.0;
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        dot / (self.norm * other.norm)
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Embedding;
    /// Stable identifier persisted in store headers.
    fn id(&self) -> u32;
    fn dim(&self) -> usize;
}

/// The deterministic default embedder (id 1). Same text yields a
/// bitwise-identical embedding in every process.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dim: usize,
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> HashedEmbedder {
        HashedEmbedder { dim }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder::new(DEFAULT_DIM)
    }
}

fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl Embedder for HashedEmbedder {
    fn embed(&self, text: &str) -> Embedding {
        let mut counts = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            let bucket = (fnv1a_64(token.as_bytes()) % self.dim as u64) as usize;
            counts[bucket] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut counts {
                *v /= norm;
            }
        }
        Embedding::new(counts)
    }

    fn id(&self) -> u32 {
        HASHED_EMBEDDER_ID
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// One stored (text, embedding, metadata) row.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub id: u64,
    pub text: String,
    pub embedding: Embedding,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store is closed for writing")]
    StoreClosed,
    #[error("store io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store file: {reason}")]
    CorruptFile { reason: String },
    #[error("unsupported store format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("unknown embedder id {id}")]
    UnknownEmbedder { id: u32 },
    #[error("line {line}: {reason}")]
    Import { line: usize, reason: String },
}

/// Exact-scan vector store. Writers need `&mut`; wrap in an `RwLock` to
/// share between robot loops (many readers, one writer).
pub struct VectorStore {
    embedder: Arc<dyn Embedder>,
    records: Vec<VectorRecord>,
    next_id: u64,
    read_only: bool,
}

impl VectorStore {
    pub fn new(embedder: Arc<dyn Embedder>) -> VectorStore {
        VectorStore {
            embedder,
            records: Vec::new(),
            next_id: 0,
            read_only: false,
        }
    }

    pub fn with_default_embedder() -> VectorStore {
        VectorStore::new(Arc::new(HashedEmbedder::default()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn records(&self) -> &[VectorRecord] {
        &self.records
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    /// Marks the store read-only; later inserts fail with `StoreClosed`.
    pub fn close_for_writing(&mut self) {
        self.read_only = true;
    }

    pub fn insert(
        &mut self,
        text: impl Into<String>,
        metadata: BTreeMap<String, String>,
    ) -> Result<u64, StoreError> {
        if self.read_only {
            return Err(StoreError::StoreClosed);
        }
        let text = text.into();
        let id = self.next_id;
        self.next_id += 1;
        let embedding = self.embedder.embed(&text);
        self.records.push(VectorRecord {
            id,
            text,
            embedding,
            metadata,
        });
        Ok(id)
    }

    /// Top-k records by cosine similarity to `query_text`, ties broken by
    /// ascending id. Zero-vector queries (and zero-vector records) never
    /// match anything.
    pub fn query_top_k(&self, query_text: &str, k: usize) -> Vec<(&VectorRecord, f64)> {
        let query = self.embedder.embed(query_text);
        self.query_top_k_embedding(&query, k)
    }

    pub fn query_top_k_embedding(&self, query: &Embedding, k: usize) -> Vec<(&VectorRecord, f64)> {
        if query.is_zero() || k == 0 {
            return Vec::new();
        }
        let mut scored: Vec<(&VectorRecord, f64)> = self
            .records
            .iter()
            .filter(|r| !r.embedding.is_zero())
            .map(|r| (r, query.cosine(&r.embedding)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
        scored.truncate(k);
        scored
    }

    /// Imports JSONL lines of `{"text": "...", "metadata": {...}}`.
    /// Returns the ids assigned, in file order.
    pub fn import_jsonl(&mut self, path: &Path) -> Result<Vec<u64>, StoreError> {
        #[derive(serde::Deserialize)]
        struct Row {
            text: String,
            #[serde(default)]
            metadata: BTreeMap<String, String>,
        }
        let data = std::fs::read_to_string(path).map_err(|e| StoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut ids = Vec::new();
        for (i, line) in data.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(line).map_err(|e| StoreError::Import {
                line: i + 1,
                reason: e.to_string(),
            })?;
            ids.push(self.insert(row.text, row.metadata)?);
        }
        Ok(ids)
    }

    /// Serializes to the binary store format: magic, version, dimension,
    /// embedder id, next id, record count, content digest, records.
    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        let mut body = Vec::new();
        for r in &self.records {
            body.extend_from_slice(&r.id.to_le_bytes());
            write_str(&mut body, &r.text);
            body.extend_from_slice(&(r.metadata.len() as u32).to_le_bytes());
            for (k, v) in &r.metadata {
                write_str(&mut body, k);
                write_str(&mut body, v);
            }
            for v in r.embedding.values() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest: [u8; 32] = Sha256::digest(&body).into();

        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.embedder.dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.embedder.id().to_le_bytes());
        out.extend_from_slice(&self.next_id.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&digest);
        out.extend_from_slice(&body);
        std::fs::write(path, out).map_err(|e| StoreError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<VectorStore, StoreError> {
        let data = std::fs::read(path).map_err(|e| StoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cursor = std::io::Cursor::new(&data);

        let mut magic = [0u8; 4];
        read_exact(&mut cursor, &mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(StoreError::CorruptFile {
                reason: "bad magic".to_string(),
            });
        }
        let version = read_u32(&mut cursor)?;
        if version != STORE_VERSION {
            return Err(StoreError::VersionMismatch {
                found: version,
                supported: STORE_VERSION,
            });
        }
        let dim = read_u32(&mut cursor)? as usize;
        let embedder_id = read_u32(&mut cursor)?;
        let next_id = read_u64(&mut cursor)?;
        let count = read_u64(&mut cursor)?;
        let mut digest = [0u8; 32];
        read_exact(&mut cursor, &mut digest)?;

        let body_start = cursor.position() as usize;
        let actual: [u8; 32] = Sha256::digest(&data[body_start..]).into();
        if actual != digest {
            return Err(StoreError::CorruptFile {
                reason: "content digest mismatch".to_string(),
            });
        }

        let embedder: Arc<dyn Embedder> = match embedder_id {
            HASHED_EMBEDDER_ID => Arc::new(HashedEmbedder::new(dim)),
            other => return Err(StoreError::UnknownEmbedder { id: other }),
        };

        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = read_u64(&mut cursor)?;
            let text = read_str(&mut cursor)?;
            let meta_count = read_u32(&mut cursor)?;
            let mut metadata = BTreeMap::new();
            for _ in 0..meta_count {
                let k = read_str(&mut cursor)?;
                let v = read_str(&mut cursor)?;
                metadata.insert(k, v);
            }
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(read_f64(&mut cursor)?);
            }
            records.push(VectorRecord {
                id,
                text,
                embedding: Embedding::new(values),
                metadata,
            });
        }
        if cursor.position() as usize != data.len() {
            return Err(StoreError::CorruptFile {
                reason: "trailing bytes after records".to_string(),
            });
        }
        Ok(VectorStore {
            embedder,
            records,
            next_id,
            read_only: false,
        })
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_exact(cursor: &mut std::io::Cursor<&Vec<u8>>, buf: &mut [u8]) -> Result<(), StoreError> {
    cursor.read_exact(buf).map_err(|_| StoreError::CorruptFile {
        reason: "truncated file".to_string(),
    })
}

fn read_u32(cursor: &mut std::io::Cursor<&Vec<u8>>) -> Result<u32, StoreError> {
    let mut b = [0u8; 4];
    read_exact(cursor, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cursor: &mut std::io::Cursor<&Vec<u8>>) -> Result<u64, StoreError> {
    let mut b = [0u8; 8];
    read_exact(cursor, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(cursor: &mut std::io::Cursor<&Vec<u8>>) -> Result<f64, StoreError> {
    let mut b = [0u8; 8];
    read_exact(cursor, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str(cursor: &mut std::io::Cursor<&Vec<u8>>) -> Result<String, StoreError> {
    let len = read_u32(cursor)? as usize;
    if len > 16 * 1024 * 1024 {
        return Err(StoreError::CorruptFile {
            reason: format!("implausible string length {len}"),
        });
    }
    let mut buf = vec![0u8; len];
    read_exact(cursor, &mut buf)?;
    String::from_utf8(buf).map_err(|_| StoreError::CorruptFile {
        reason: "invalid utf-8 in string".to_string(),
    })
}
