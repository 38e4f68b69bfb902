//! Private knowledge base: segmentation, embedding, storage and MMR retrieval.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 256;
pub const MIN_DIM: usize = 16;
pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_OVERLAP: usize = 200;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_LAMBDA: f64 = 0.5;

const MAGIC: &[u8; 4] = b"A6KB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("bad segmentation policy: overlap {overlap} must be in (0, chunk_size {chunk_size})")]
    BadPolicy { chunk_size: usize, overlap: usize },
    #[error("document {0} is empty")]
    EmptyDocument(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("document {0} already present")]
    DuplicateDocument(String),
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported knowledge-base header: {0}")]
    FormatVersionMismatch(String),
    #[error("embedder mismatch: file built with {found}, engine uses {expected}")]
    EmbedderMismatch { expected: String, found: String },
    #[error("corrupt knowledge-base file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let id = id.into();
        Self { source: id.clone(), id, text: text.into(), metadata: BTreeMap::new() }
    }
}

/// A fragment of a document. `span` is a half-open range of char offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    pub span: (usize, usize),
}

impl Chunk {
    pub fn key(&self) -> (&str, usize) {
        (&self.doc_id, self.seq)
    }
}

/// A dense vector. Vectors produced by [`Embedder`] are unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Self {
        Self(components)
    }

    /// L2-normalize; a zero vector becomes the basis vector e0.
    pub fn normalized(mut components: Vec<f64>) -> Self {
        let norm = components.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            components.iter_mut().for_each(|x| *x = 0.0);
            if let Some(first) = components.first_mut() {
                *first = 1.0;
            }
        } else {
            components.iter_mut().for_each(|x| *x /= norm);
        }
        Self(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, KnowledgeError> {
    if a.dim() != b.dim() {
        return Err(KnowledgeError::DimMismatch(a.dim(), b.dim()));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (dot / denom).clamp(-1.0, 1.0)
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic hashed character-trigram embedder.
///
/// Text is lowercased and padded with one space on each side; every
/// character trigram is hashed with FNV-1a, added to bucket `hash % dim`
/// with sign taken from the top bit of the hash, and the result is
/// L2-normalized. Empty text maps to e0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedder {
    dim: usize,
}

impl Default for Embedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl Embedder {
    /// `dim` is raised to [`MIN_DIM`] when smaller.
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(MIN_DIM) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self) -> String {
        format!("hashed-trigram-fnv1a-v1/dim={}", self.dim)
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0; self.dim];
        if text.is_empty() {
            v[0] = 1.0;
            return EmbeddingVector(v);
        }
        let chars: Vec<char> = std::iter::once(' ')
            .chain(text.chars().flat_map(char::to_lowercase))
            .chain(std::iter::once(' '))
            .collect();
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a(&buf[..len]);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        EmbeddingVector::normalized(v)
    }
}

pub fn embed_text(text: &str, dim: usize) -> EmbeddingVector {
    Embedder::new(dim).embed(text)
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\n')
}

/// Split a document into overlapping chunks.
///
/// Chunk ends are snapped back to just after the nearest sentence
/// terminator within 15% of `chunk_size`; the next chunk starts `overlap`
/// chars before the previous end, so unsnapped chunks sit at multiples of
/// `chunk_size - overlap`.
pub fn segment(doc: &Document, chunk_size: usize, overlap: usize) -> Result<Vec<Chunk>, KnowledgeError> {
    if overlap == 0 || overlap >= chunk_size {
        return Err(KnowledgeError::BadPolicy { chunk_size, overlap });
    }
    if doc.text.is_empty() {
        return Err(KnowledgeError::EmptyDocument(doc.id.clone()));
    }
    let chars: Vec<char> = doc.text.chars().collect();
    let len = chars.len();
    let window = chunk_size * 15 / 100;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let mut end = (start + chunk_size).min(len);
        if end < len {
            // Snapped end must stay past start + overlap so the next chunk advances.
            let lo = end.saturating_sub(window).max(start + overlap + 1);
            if let Some(p) = (lo - 1..end).rev().find(|&p| is_terminator(chars[p])) {
                end = p + 1;
            }
        }
        chunks.push(Chunk {
            doc_id: doc.id.clone(),
            seq: chunks.len(),
            text: chars[start..end].iter().collect(),
            span: (start, end),
        });
        if end >= len {
            break;
        }
        start = end - overlap;
    }
    Ok(chunks)
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

/// Maximal-marginal-relevance selection, returning candidate indices in
/// selection order.
///
/// The first pick maximizes similarity to the query. Each later pick
/// maximizes `lambda * sim(query, d) - (1 - lambda) * max_s sim(d, s)` over
/// the selected set `s`. Exact ties go to the lowest `(doc_id, seq)`.
pub fn mmr_select_indices(
    query: &EmbeddingVector,
    candidates: &[(Chunk, EmbeddingVector)],
    k: usize,
    lambda: f64,
) -> Result<Vec<usize>, KnowledgeError> {
    if candidates.is_empty() {
        return Err(KnowledgeError::EmptyCandidates);
    }
    if let Some((_, v)) = candidates.iter().find(|(_, v)| v.dim() != query.dim()) {
        return Err(KnowledgeError::DimMismatch(query.dim(), v.dim()));
    }
    let relevance: Vec<f64> = candidates.iter().map(|(_, v)| cosine_unchecked(query, v)).collect();
    // Highest similarity to anything already selected.
    let mut redundancy = vec![f64::NEG_INFINITY; candidates.len()];
    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    let mut selected = Vec::with_capacity(k.min(candidates.len()));

    while selected.len() < k && !remaining.is_empty() {
        let score = |i: usize| {
            if selected.is_empty() {
                relevance[i]
            } else {
                lambda * relevance[i] - (1.0 - lambda) * redundancy[i]
            }
        };
        let (pos, &best) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| {
                score(a)
                    .total_cmp(&score(b))
                    .then_with(|| candidates[b].0.key().cmp(&candidates[a].0.key()))
            })
            .expect("remaining is non-empty");
        remaining.swap_remove(pos);
        selected.push(best);
        for &i in &remaining {
            let s = cosine_unchecked(&candidates[i].1, &candidates[best].1);
            if s > redundancy[i] {
                redundancy[i] = s;
            }
        }
    }
    Ok(selected)
}

pub fn mmr_select(
    query: &EmbeddingVector,
    candidates: &[(Chunk, EmbeddingVector)],
    k: usize,
    lambda: f64,
) -> Result<Vec<Chunk>, KnowledgeError> {
    Ok(mmr_select_indices(query, candidates, k, lambda)?
        .into_iter()
        .map(|i| candidates[i].0.clone())
        .collect())
}

// ---------------------------------------------------------------------------
// Knowledge base
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub embedder_id: String,
    pub dim: usize,
    pub entries: Vec<(Chunk, EmbeddingVector)>,
    embedder: Embedder,
}

/// A retrieved chunk with its similarity to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub similarity: f64,
}

impl KnowledgeBase {
    pub fn new(embedder: Embedder) -> Self {
        Self { embedder_id: embedder.id(), dim: embedder.dim(), entries: Vec::new(), embedder }
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|(c, _)| c.doc_id.as_str()).collect()
    }

    pub fn contains_doc(&self, id: &str) -> bool {
        self.entries.iter().any(|(c, _)| c.doc_id == id)
    }

    /// Segment, embed and append a document. Returns the number of chunks added.
    pub fn add(&mut self, doc: &Document, chunk_size: usize, overlap: usize) -> Result<usize, KnowledgeError> {
        if self.contains_doc(&doc.id) {
            return Err(KnowledgeError::DuplicateDocument(doc.id.clone()));
        }
        let chunks = segment(doc, chunk_size, overlap)?;
        let n = chunks.len();
        for chunk in chunks {
            let v = self.embedder.embed(&chunk.text);
            self.entries.push((chunk, v));
        }
        Ok(n)
    }

    pub fn query(&self, query_text: &str, k: usize, lambda: f64) -> Result<Vec<Chunk>, KnowledgeError> {
        Ok(self.query_scored(query_text, k, lambda)?.into_iter().map(|s| s.chunk).collect())
    }

    pub fn query_scored(&self, query_text: &str, k: usize, lambda: f64) -> Result<Vec<ScoredChunk>, KnowledgeError> {
        if self.entries.is_empty() {
            return Err(KnowledgeError::EmptyKnowledgeBase);
        }
        let q = self.embedder.embed(query_text);
        Ok(mmr_select_indices(&q, &self.entries, k, lambda)?
            .into_iter()
            .map(|i| ScoredChunk {
                chunk: self.entries[i].0.clone(),
                similarity: cosine_unchecked(&q, &self.entries[i].1),
            })
            .collect())
    }

    /// Write the base in the versioned binary layout:
    ///
    /// ```text
    /// "A6KB" | u32 version | u32 dim | u32 len + embedder_id | u64 count
    /// count x ( u32 len + doc_id | u32 seq | u64 start | u64 end
    ///           | u32 len + text | dim x f64 )
    /// ```
    /// All integers and floats little-endian.
    pub fn persist(&self, path: &Path) -> Result<(), KnowledgeError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        write_str(&mut w, &self.embedder_id)?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (chunk, v) in &self.entries {
            write_str(&mut w, &chunk.doc_id)?;
            w.write_all(&(chunk.seq as u32).to_le_bytes())?;
            w.write_all(&(chunk.span.0 as u64).to_le_bytes())?;
            w.write_all(&(chunk.span.1 as u64).to_le_bytes())?;
            write_str(&mut w, &chunk.text)?;
            for x in v.components() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load a base with the default embedder at the dimension recorded in the file.
    pub fn open(path: &Path) -> Result<Self, KnowledgeError> {
        let mut header = [0u8; 12];
        File::open(path)?
            .read_exact(&mut header)
            .map_err(|_| KnowledgeError::FormatVersionMismatch("truncated header".into()))?;
        let dim = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        if dim < MIN_DIM {
            return Err(KnowledgeError::Corrupt(format!("dimension {dim} below {MIN_DIM}")));
        }
        Self::load(path, Embedder::new(dim))
    }

    /// Load a base written by [`persist`](Self::persist); the file's
    /// embedder must equal `embedder`.
    pub fn load(path: &Path, embedder: Embedder) -> Result<Self, KnowledgeError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| KnowledgeError::FormatVersionMismatch("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(KnowledgeError::FormatVersionMismatch(format!("bad magic {magic:02x?}")));
        }
        let version = read_u32(&mut r)
            .map_err(|_| KnowledgeError::FormatVersionMismatch("truncated header".into()))?;
        if version != FORMAT_VERSION {
            return Err(KnowledgeError::FormatVersionMismatch(format!(
                "version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let dim = read_u32(&mut r)? as usize;
        let embedder_id = read_str(&mut r)?;
        if embedder_id != embedder.id() || dim != embedder.dim() {
            return Err(KnowledgeError::EmbedderMismatch { expected: embedder.id(), found: embedder_id });
        }
        let count = read_u64(&mut r)?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let doc_id = read_str(&mut r)?;
            let seq = read_u32(&mut r)? as usize;
            let start = read_u64(&mut r)? as usize;
            let end = read_u64(&mut r)? as usize;
            let text = read_str(&mut r)?;
            let mut comps = Vec::with_capacity(dim);
            let mut buf = [0u8; 8];
            for _ in 0..dim {
                r.read_exact(&mut buf)?;
                comps.push(f64::from_le_bytes(buf));
            }
            entries.push((Chunk { doc_id, seq, text, span: (start, end) }, EmbeddingVector(comps)));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(KnowledgeError::Corrupt("trailing bytes after last record".into()));
        }
        Ok(Self { embedder_id, dim, entries, embedder })
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, KnowledgeError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 30 {
        return Err(KnowledgeError::Corrupt(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| KnowledgeError::Corrupt(e.to_string()))
}
