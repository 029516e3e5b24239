//! Exact flat L2 nearest-neighbor index over chunk embeddings.
//!
//! Every query scans all stored vectors — no approximation. Squared L2 is
//! used internally for comparisons; hits expose the true Euclidean distance.
//! The index persists to a little-endian binary format:
//!
//! ```text
//! "RGIX" | version u32 | dim u32 | count u64 | fingerprint [u8; 32]
//! per entry: id_len u16 | id bytes (UTF-8) | dim × f32
//! trailing CRC32 of all preceding bytes
//! ```

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::embedding::{EmbeddingVector, EMBEDDING_DIM};

const MAGIC: &[u8; 4] = b"RGIX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate chunk id {0:?}")]
    DuplicateChunkId(String),
    #[error("chunk id is {0} bytes; the format caps ids at 65535")]
    ChunkIdTooLong(usize),
    #[error("search on an empty index")]
    EmptyIndex,
    #[error("k must be positive")]
    ZeroK,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic: not an index file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("unsupported dimension {0}")]
    BadDimension(u32),
    #[error("truncated index file")]
    Truncated,
    #[error("checksum mismatch: file is corrupt")]
    ChecksumMismatch,
    #[error("invalid UTF-8 in chunk id")]
    BadChunkIdEncoding,
}

/// One nearest-neighbor result.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub chunk_id: String,
    /// True Euclidean distance to the query.
    pub distance: f64,
    /// 1-based, dense, ascending with distance.
    pub rank: usize,
}

/// Flat exact index: ordered (chunk_id, vector) entries plus a build
/// fingerprint tying the index to the corpus and embedding config it was
/// built from.
pub struct FlatIndex {
    ids: Vec<String>,
    vectors: Vec<f32>, // row-major, EMBEDDING_DIM per entry
    id_set: HashSet<String>,
    fingerprint: [u8; 32],
}

impl FlatIndex {
    pub fn new(fingerprint: [u8; 32]) -> Self {
        Self {
            ids: Vec::new(),
            vectors: Vec::new(),
            id_set: HashSet::new(),
            fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        EMBEDDING_DIM
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint)
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(|s| s.as_str())
    }

    /// Append an entry. Insertion order is significant: it is the search
    /// tie-break and is preserved by persistence.
    pub fn add(&mut self, chunk_id: &str, vector: &EmbeddingVector) -> Result<(), IndexError> {
        if self.id_set.contains(chunk_id) {
            return Err(IndexError::DuplicateChunkId(chunk_id.to_string()));
        }
        if chunk_id.len() > u16::MAX as usize {
            return Err(IndexError::ChunkIdTooLong(chunk_id.len()));
        }
        self.ids.push(chunk_id.to_string());
        self.id_set.insert(chunk_id.to_string());
        self.vectors.extend_from_slice(vector.as_slice());
        Ok(())
    }

    /// Exact k-nearest-neighbor search: min(k, len) hits by ascending L2
    /// distance, ties broken by insertion order.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = Vec::with_capacity(self.len());
        for (i, row) in self.vectors.chunks_exact(EMBEDDING_DIM).enumerate() {
            // Squared distance, accumulated in f64.
            let mut acc = 0f64;
            for (a, b) in row.iter().zip(q) {
                let d = (*a as f64) - (*b as f64);
                acc += d * d;
            }
            scored.push((acc, i));
        }
        scored.sort_by(|(da, ia), (db, ib)| da.total_cmp(db).then(ia.cmp(ib)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (sq, i))| SearchHit {
                chunk_id: self.ids[i].clone(),
                distance: sq.sqrt(),
                rank: rank + 1,
            })
            .collect())
    }

    /// Write the index to `path` in the binary format described in the
    /// module docs.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let file = std::fs::File::create(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut writer = ChecksumWriter::new(BufWriter::new(file));
        let io_err = |source| IndexError::Io {
            path: path.display().to_string(),
            source,
        };

        writer.write_all(MAGIC).map_err(io_err)?;
        writer
            .write_all(&FORMAT_VERSION.to_le_bytes())
            .map_err(io_err)?;
        writer
            .write_all(&(EMBEDDING_DIM as u32).to_le_bytes())
            .map_err(io_err)?;
        writer
            .write_all(&(self.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        writer.write_all(&self.fingerprint).map_err(io_err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let id_bytes = id.as_bytes();
            writer
                .write_all(&(id_bytes.len() as u16).to_le_bytes())
                .map_err(io_err)?;
            writer.write_all(id_bytes).map_err(io_err)?;
            let row = &self.vectors[i * EMBEDDING_DIM..(i + 1) * EMBEDDING_DIM];
            for value in row {
                writer.write_all(&value.to_le_bytes()).map_err(io_err)?;
            }
        }
        let checksum = writer.checksum();
        let mut inner = writer.into_inner();
        inner.write_all(&checksum.to_le_bytes()).map_err(io_err)?;
        inner.flush().map_err(io_err)?;
        Ok(())
    }

    /// Load an index previously written by [`FlatIndex::save`].
    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let file = std::fs::File::open(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut reader = ChecksumReader::new(BufReader::new(file));

        let mut magic = [0u8; 4];
        reader.read_exact_or_truncated(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let version = reader.read_u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::BadVersion(version));
        }
        let dim = reader.read_u32()?;
        if dim as usize != EMBEDDING_DIM {
            return Err(IndexError::BadDimension(dim));
        }
        let count = reader.read_u64()?;
        let mut fingerprint = [0u8; 32];
        reader.read_exact_or_truncated(&mut fingerprint)?;

        let mut index = FlatIndex::new(fingerprint);
        for _ in 0..count {
            let id_len = reader.read_u16()? as usize;
            let mut id_bytes = vec![0u8; id_len];
            reader.read_exact_or_truncated(&mut id_bytes)?;
            let id = String::from_utf8(id_bytes).map_err(|_| IndexError::BadChunkIdEncoding)?;
            let mut row = vec![0f32; EMBEDDING_DIM];
            for value in &mut row {
                *value = f32::from_le_bytes(reader.read_array()?);
            }
            if index.id_set.contains(&id) {
                return Err(IndexError::DuplicateChunkId(id));
            }
            index.ids.push(id.clone());
            index.id_set.insert(id);
            index.vectors.extend_from_slice(&row);
        }

        let computed = reader.checksum();
        let mut stored = [0u8; 4];
        reader.read_exact_raw(&mut stored)?;
        if u32::from_le_bytes(stored) != computed {
            return Err(IndexError::ChecksumMismatch);
        }
        Ok(index)
    }
}

struct ChecksumWriter<W: Write> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> ChecksumWriter<W> {
    fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }

    fn write_all(&mut self, buf: &[u8]) -> std::io::Result<()> {
        self.hasher.update(buf);
        self.inner.write_all(buf)
    }

    fn checksum(&self) -> u32 {
        self.hasher.clone().finalize()
    }

    fn into_inner(self) -> W {
        self.inner
    }
}

struct ChecksumReader<R: Read> {
    inner: R,
    hasher: crc32fast::Hasher,
}

impl<R: Read> ChecksumReader<R> {
    fn new(inner: R) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }

    /// Read into `buf`, updating the checksum; EOF maps to `Truncated`.
    fn read_exact_or_truncated(&mut self, buf: &mut [u8]) -> Result<(), IndexError> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                IndexError::Truncated
            } else {
                IndexError::Io {
                    path: String::new(),
                    source: e,
                }
            }
        })?;
        self.hasher.update(buf);
        Ok(())
    }

    /// Read without updating the checksum (for the trailing CRC itself).
    fn read_exact_raw(&mut self, buf: &mut [u8]) -> Result<(), IndexError> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                IndexError::Truncated
            } else {
                IndexError::Io {
                    path: String::new(),
                    source: e,
                }
            }
        })
    }

    fn read_array<const N: usize>(&mut self) -> Result<[u8; N], IndexError> {
        let mut buf = [0u8; N];
        self.read_exact_or_truncated(&mut buf)?;
        Ok(buf)
    }

    fn read_u16(&mut self) -> Result<u16, IndexError> {
        Ok(u16::from_le_bytes(self.read_array()?))
    }

    fn read_u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.read_array()?))
    }

    fn read_u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.read_array()?))
    }

    fn checksum(&self) -> u32 {
        self.hasher.clone().finalize()
    }
}
