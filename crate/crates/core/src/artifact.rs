//! Versioned binary container for trained models and embedding tables.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0   8   magic "BOOTNER\0"
//! 8   4   format version (u32)
//! 12  8   total file length in bytes, trailer included (u64)
//! 20  4   section count (u32)
//! 24  ..  sections: 4-byte tag, u64 payload length, payload
//! end 32  SHA-256 of every preceding byte
//! ```
//!
//! Sections: `META` (string pairs), `TAGS` (entity type names), `SCOR`
//! (scorer variant and weights), `TRAN` (transition matrix), `EMBD`
//! (embedding table). Strings are a u32 byte length followed by UTF-8;
//! float arrays are a u64 count followed by IEEE-754 bit patterns, so a
//! round trip is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::crf::{CrfModel, TransitionModel};
use crate::emissions::{EmissionScorer, ScorerKind};
use crate::error::{ArtifactError, Error, Result};
use crate::linalg::Matrix;
use crate::mlm::EmbeddingTable;
use crate::tagscheme::TagSet;

pub const MAGIC: &[u8; 8] = b"BOOTNER\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const TRAILER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub model: Option<CrfModel>,
    /// Stand-alone table; embedding-scorer models carry theirs inside `model`.
    pub table: Option<EmbeddingTable>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelArtifact {
    pub fn from_model(model: CrfModel, metadata: BTreeMap<String, String>) -> Self {
        ModelArtifact {
            format_version: FORMAT_VERSION,
            model: Some(model),
            table: None,
            metadata,
        }
    }

    pub fn from_table(table: EmbeddingTable, metadata: BTreeMap<String, String>) -> Self {
        ModelArtifact {
            format_version: FORMAT_VERSION,
            model: None,
            table: Some(table),
            metadata,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.0.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
}

fn section(out: &mut Writer, tag: &[u8; 4], body: impl FnOnce(&mut Writer)) {
    let mut w = Writer(Vec::new());
    body(&mut w);
    out.0.extend_from_slice(tag);
    out.u64(w.0.len() as u64);
    out.0.extend_from_slice(&w.0);
}

fn write_table(w: &mut Writer, t: &EmbeddingTable) {
    w.u32(t.vocab_size() as u32);
    w.u32(t.dim() as u32);
    for word in t.vocab() {
        w.str(word);
    }
    w.f64s(t.vectors().as_slice());
    w.f64s(t.output().as_slice());
    w.f64s(t.output_bias());
}

pub fn encode(artifact: &ModelArtifact) -> Vec<u8> {
    let mut body = Writer(Vec::new());
    let mut count = 1;
    section(&mut body, b"META", |w| {
        w.u32(artifact.metadata.len() as u32);
        for (k, v) in &artifact.metadata {
            w.str(k);
            w.str(v);
        }
    });
    if let Some(model) = &artifact.model {
        count += 3;
        section(&mut body, b"TAGS", |w| {
            let types = model.tagset().entity_types();
            w.u32(types.len() as u32);
            types.iter().for_each(|t| w.str(t));
        });
        section(&mut body, b"SCOR", |w| {
            let scorer = model.scorer();
            match scorer.kind() {
                ScorerKind::Linear { hash_bits } => {
                    w.u8(0);
                    w.u32(scorer.num_tags() as u32);
                    w.u32(*hash_bits);
                }
                ScorerKind::Embedding { radius, .. } => {
                    w.u8(1);
                    w.u32(scorer.num_tags() as u32);
                    w.u32(*radius as u32);
                }
            }
            w.f64s(scorer.weights());
        });
        section(&mut body, b"TRAN", |w| {
            w.u32(model.transitions().matrix().rows() as u32);
            w.f64s(model.transitions().matrix().as_slice());
        });
        if let ScorerKind::Embedding { table, .. } = model.scorer().kind() {
            count += 1;
            section(&mut body, b"EMBD", |w| write_table(w, table));
        }
    }
    if let Some(table) = &artifact.table {
        count += 1;
        section(&mut body, b"EMBD", |w| write_table(w, table));
    }

    let total = HEADER_LEN + body.0.len() + TRAILER_LEN;
    let mut out = Writer(Vec::with_capacity(total));
    out.0.extend_from_slice(MAGIC);
    out.u32(artifact.format_version);
    out.u64(total as u64);
    out.u32(count);
    out.0.extend_from_slice(&body.0);
    let digest = Sha256::digest(&out.0);
    out.0.extend_from_slice(&digest);
    out.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(msg: impl Into<String>) -> ArtifactError {
    ArtifactError::Malformed(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ArtifactError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(ArtifactError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, ArtifactError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<u32, ArtifactError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, ArtifactError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> std::result::Result<String, ArtifactError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("string is not UTF-8"))
    }
    fn f64s(&mut self) -> std::result::Result<Vec<f64>, ArtifactError> {
        let n = usize::try_from(self.u64()?).map_err(|_| ArtifactError::Truncated)?;
        let bytes = self.take(n.checked_mul(8).ok_or(ArtifactError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn read_table(r: &mut Reader<'_>) -> std::result::Result<EmbeddingTable, ArtifactError> {
    let v = r.u32()? as usize;
    let d = r.u32()? as usize;
    let vocab = (0..v).map(|_| r.str()).collect::<std::result::Result<Vec<_>, _>>()?;
    let vectors = r.f64s()?;
    let output = r.f64s()?;
    let bias = r.f64s()?;
    if vectors.len() != v * d || output.len() != v * d {
        return Err(ArtifactError::Dimension(format!("embedding arrays do not match {v}x{d}")));
    }
    EmbeddingTable::from_parts(vocab, Matrix::from_vec(v, d, vectors), Matrix::from_vec(v, d, output), bias)
        .map_err(|e| ArtifactError::Dimension(e.to_string()))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<ModelArtifact, ArtifactError> {
    if bytes.len() < 12 {
        return Err(ArtifactError::Truncated);
    }
    if &bytes[..8] != MAGIC {
        return Err(ArtifactError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ArtifactError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(ArtifactError::Truncated);
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if (bytes.len() as u64) < declared {
        return Err(ArtifactError::Truncated);
    }
    if bytes.len() as u64 != declared {
        return Err(ArtifactError::Integrity);
    }
    let (content, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    if Sha256::digest(content).as_slice() != trailer {
        return Err(ArtifactError::Integrity);
    }

    let mut r = Reader {
        buf: &content[HEADER_LEN..],
        pos: 0,
    };
    let count = u32::from_le_bytes(content[20..24].try_into().unwrap());
    let mut metadata = BTreeMap::new();
    let mut tags: Option<TagSet> = None;
    let mut scorer_raw: Option<(u8, usize, u32, Vec<f64>)> = None;
    let mut trans: Option<Matrix> = None;
    let mut table: Option<EmbeddingTable> = None;
    for _ in 0..count {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let len = usize::try_from(r.u64()?).map_err(|_| ArtifactError::Truncated)?;
        let mut s = Reader {
            buf: r.take(len)?,
            pos: 0,
        };
        match &tag {
            b"META" => {
                let n = s.u32()?;
                for _ in 0..n {
                    let k = s.str()?;
                    metadata.insert(k, s.str()?);
                }
            }
            b"TAGS" => {
                let n = s.u32()?;
                let types = (0..n).map(|_| s.str()).collect::<std::result::Result<Vec<_>, _>>()?;
                tags = Some(TagSet::new(types).map_err(|e| malformed(e.to_string()))?);
            }
            b"SCOR" => {
                let variant = s.u8()?;
                let k = s.u32()? as usize;
                let param = s.u32()?;
                scorer_raw = Some((variant, k, param, s.f64s()?));
            }
            b"TRAN" => {
                let dim = s.u32()? as usize;
                let data = s.f64s()?;
                if data.len() != dim * dim {
                    return Err(ArtifactError::Dimension(format!("transition array is not {dim}x{dim}")));
                }
                trans = Some(Matrix::from_vec(dim, dim, data));
            }
            b"EMBD" => table = Some(read_table(&mut s)?),
            other => return Err(malformed(format!("unknown section {:?}", String::from_utf8_lossy(other)))),
        }
        if !s.done() {
            return Err(malformed(format!("trailing bytes in section {:?}", String::from_utf8_lossy(&tag))));
        }
    }
    if !r.done() {
        return Err(malformed("trailing bytes after sections"));
    }

    let model = match (tags, scorer_raw, trans) {
        (None, None, None) => None,
        (Some(tagset), Some((variant, k, param, weights)), Some(trans)) => {
            if k != tagset.len() {
                return Err(ArtifactError::Dimension(format!("scorer has {k} tags, tag set {}", tagset.len())));
            }
            let kind = match variant {
                0 => ScorerKind::Linear { hash_bits: param },
                1 => ScorerKind::Embedding {
                    table: Arc::new(table.take().ok_or_else(|| malformed("embedding scorer without a table"))?),
                    radius: param as usize,
                },
                v => return Err(malformed(format!("unknown scorer variant {v}"))),
            };
            let dim_err = |e: Error| ArtifactError::Dimension(e.to_string());
            let scorer = EmissionScorer::with_weights(kind, k, weights).map_err(dim_err)?;
            let trans = TransitionModel::from_matrix(trans).map_err(dim_err)?;
            Some(CrfModel::new(scorer, trans, tagset).map_err(dim_err)?)
        }
        _ => return Err(malformed("incomplete model sections")),
    };
    Ok(ModelArtifact {
        format_version: version,
        model,
        table,
        metadata,
    })
}

pub fn save(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(artifact))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes)?)
}
