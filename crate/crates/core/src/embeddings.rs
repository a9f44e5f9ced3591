//! Node feature vectors: the `embeddings.tgne` interchange store and a
//! hashed bag-of-tokens fallback embedder.
//!
//! Store layout (all integers little-endian):
//!
//! ```text
//! "TGNE"  u32 version=1  u32 dim  u64 count
//! repeat count times:
//!     u32 id_len  id bytes (UTF-8)  u32 turns  turns*dim f32 (row-major)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::DialogueRecord;

pub const STORE_MAGIC: &[u8; 4] = b"TGNE";
pub const STORE_VERSION: u32 = 1;
/// Width of the sentence encoder the store format was designed around.
pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"TGNE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {0}")]
    Version(u32),
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("embedding dim must be positive")]
    ZeroDim,
    #[error("duplicate dialogue id {0:?}")]
    DuplicateId(String),
    #[error("dialogue id is not valid UTF-8")]
    BadId,
    #[error("dialogue {id:?}: row width {got} differs from store dim {dim}")]
    DimMismatch { id: String, dim: usize, got: usize },
    #[error("dialogue {id:?}: non-finite value at row {row}, column {col}")]
    NonFinite { id: String, row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dialogue_id: String,
    pub dim: usize,
    /// Row-major, `n_turns * dim` values.
    pub data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn check(&self, store_dim: usize) -> Result<(), StoreError> {
        if self.dim != store_dim || !self.data.len().is_multiple_of(store_dim) {
            return Err(StoreError::DimMismatch {
                id: self.dialogue_id.clone(),
                dim: store_dim,
                got: self.dim,
            });
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite {
                id: self.dialogue_id.clone(),
                row: pos / store_dim,
                col: pos % store_dim,
            });
        }
        Ok(())
    }
}

/// A set of per-dialogue matrices sharing one width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    matrices: Vec<EmbeddingMatrix>,
    index: BTreeMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        Ok(Self {
            dim,
            matrices: Vec::new(),
            index: BTreeMap::new(),
        })
    }

    pub fn from_matrices(dim: usize, matrices: Vec<EmbeddingMatrix>) -> Result<Self, StoreError> {
        let mut store = Self::new(dim)?;
        for m in matrices {
            store.push(m)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, m: EmbeddingMatrix) -> Result<(), StoreError> {
        m.check(self.dim)?;
        if self.index.contains_key(&m.dialogue_id) {
            return Err(StoreError::DuplicateId(m.dialogue_id));
        }
        self.index.insert(m.dialogue_id.clone(), self.matrices.len());
        self.matrices.push(m);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[EmbeddingMatrix] {
        &self.matrices
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingMatrix> {
        self.index.get(id).map(|&i| &self.matrices[i])
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), StoreError> {
        out.write_all(STORE_MAGIC)?;
        out.write_all(&STORE_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.matrices.len() as u64).to_le_bytes())?;
        for m in &self.matrices {
            let id = m.dialogue_id.as_bytes();
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id)?;
            out.write_all(&(m.n_rows() as u32).to_le_bytes())?;
            for v in &m.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, StoreError> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic, "magic")?;
        if &magic != STORE_MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = read_u32(&mut input, "version")?;
        if version != STORE_VERSION {
            return Err(StoreError::Version(version));
        }
        let dim = read_u32(&mut input, "dim")? as usize;
        let mut store = Self::new(dim)?;
        let mut count_buf = [0u8; 8];
        read_exact(&mut input, &mut count_buf, "dialogue count")?;
        let count = u64::from_le_bytes(count_buf);
        for _ in 0..count {
            let id_len = read_u32(&mut input, "id length")? as usize;
            let mut id = vec![0u8; id_len];
            read_exact(&mut input, &mut id, "id")?;
            let id = String::from_utf8(id).map_err(|_| StoreError::BadId)?;
            let turns = read_u32(&mut input, "turn count")? as usize;
            let mut bytes = vec![0u8; turns * dim * 4];
            read_exact(&mut input, &mut bytes, "matrix values")?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            store.push(EmbeddingMatrix {
                dialogue_id: id,
                dim,
                data,
            })?;
        }
        Ok(store)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), StoreError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => StoreError::Truncated(what),
        _ => StoreError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, StoreError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_store(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<(), StoreError> {
    let mut out = BufWriter::new(File::create(path)?);
    store.write_to(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, StoreError> {
    EmbeddingStore::read_from(BufReader::new(File::open(path)?))
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
/// Text without tokens maps to the zero vector.
pub fn hash_embed(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim >= 1, "hash_embed needs dim >= 1");
    let lower = text.to_lowercase();
    let mut acc = vec![0.0f64; dim];
    for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = fnv1a64(tok.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[(h % dim as u64) as usize] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter().map(|v| (v / norm) as f32).collect()
    } else {
        vec![0.0; dim]
    }
}

/// Hash-embeds every turn of every dialogue.
pub fn hash_embed_corpus(corpus: &[DialogueRecord], dim: usize) -> Result<EmbeddingStore, StoreError> {
    let matrices = corpus
        .iter()
        .map(|d| EmbeddingMatrix {
            dialogue_id: d.id.clone(),
            dim,
            data: d.turns.iter().flat_map(|t| hash_embed(&t.text, dim)).collect(),
        })
        .collect();
    EmbeddingStore::from_matrices(dim, matrices)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowMismatch {
    pub dialogue_id: String,
    pub expected: usize,
    pub actual: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StoreValidation {
    pub missing: Vec<String>,
    pub mismatched: Vec<RowMismatch>,
}

impl StoreValidation {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty() && self.mismatched.is_empty()
    }
}

/// Checks that every dialogue has a matrix with one row per turn.
pub fn validate_against_corpus(store: &EmbeddingStore, corpus: &[DialogueRecord]) -> StoreValidation {
    let mut report = StoreValidation::default();
    let mut seen = HashSet::new();
    for d in corpus {
        if !seen.insert(d.id.as_str()) {
            continue;
        }
        match store.get(&d.id) {
            None => report.missing.push(d.id.clone()),
            Some(m) if m.n_rows() != d.len() => report.mismatched.push(RowMismatch {
                dialogue_id: d.id.clone(),
                expected: d.len(),
                actual: m.n_rows(),
            }),
            Some(_) => {}
        }
    }
    report
}
