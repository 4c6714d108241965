//! Exact k-nearest-neighbour index with a bit-exact file format.
//!
//! Layout of a `.dsvx` file (all integers little-endian):
//!
//! ```text
//! "DSVX"            4 bytes magic
//! version           u16 (= 1)
//! dim               u16
//! count             u32
//! encoder           u16 length + UTF-8 bytes ("{name}/{version}")
//! count x entry     u16 id length + UTF-8 id + dim x f32 (IEEE-754)
//! ```

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::encoder::{dot, Embedding, EncoderSpec};

pub const MAGIC: &[u8; 4] = b"DSVX";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("passage id {0:?} already indexed")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("encoder spec mismatch: index built with {indexed}, queried with {requested}")]
    SpecMismatch { indexed: String, requested: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub passage_id: String,
    pub score: f32,
}

/// Ranking order: score descending, then passage id ascending.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.passage_id.cmp(&b.passage_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    encoder_spec: EncoderSpec,
    scope: String,
    ids: Vec<String>,
    vectors: Vec<Embedding>,
    id_set: std::collections::HashSet<String>,
}

fn spec_label(spec: &EncoderSpec) -> String {
    format!("{}/{}", spec.name, spec.version)
}

impl VectorIndex {
    pub fn new(encoder_spec: EncoderSpec, scope: impl Into<String>) -> Self {
        Self {
            encoder_spec,
            scope: scope.into(),
            ids: Vec::new(),
            vectors: Vec::new(),
            id_set: Default::default(),
        }
    }

    pub fn encoder_spec(&self) -> &EncoderSpec {
        &self.encoder_spec
    }

    /// Label of what this index covers (a document id in the library).
    pub fn scope(&self) -> &str {
        &self.scope
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    pub fn ensure_spec(&self, spec: &EncoderSpec) -> Result<(), IndexError> {
        if *spec == self.encoder_spec {
            Ok(())
        } else {
            Err(IndexError::SpecMismatch {
                indexed: format!("{}@{}", spec_label(&self.encoder_spec), self.encoder_spec.dim),
                requested: format!("{}@{}", spec_label(spec), spec.dim),
            })
        }
    }

    fn check_dim(&self, e: &Embedding) -> Result<(), IndexError> {
        if e.dim() != self.encoder_spec.dim {
            return Err(IndexError::DimMismatch { expected: self.encoder_spec.dim, actual: e.dim() });
        }
        Ok(())
    }

    pub fn add(&mut self, passage_id: impl Into<String>, embedding: Embedding) -> Result<(), IndexError> {
        let passage_id = passage_id.into();
        self.check_dim(&embedding)?;
        if self.id_set.contains(&passage_id) {
            return Err(IndexError::DuplicateId(passage_id));
        }
        self.id_set.insert(passage_id.clone());
        self.ids.push(passage_id);
        self.vectors.push(embedding);
        Ok(())
    }

    /// Exact top-k by cosine similarity.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<Hit>, IndexError> {
        self.check_dim(query)?;
        let mut hits: Vec<Hit> = self
            .entries()
            .map(|(id, v)| Hit { passage_id: id.to_string(), score: dot(query.values(), v.values()) })
            .collect();
        let k = k.min(hits.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(hits)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IndexError> {
        let dim = u16::try_from(self.encoder_spec.dim)
            .map_err(|_| IndexError::Format(format!("dim {} exceeds u16", self.encoder_spec.dim)))?;
        let count = u32::try_from(self.len())
            .map_err(|_| IndexError::Format("entry count exceeds u32".into()))?;
        let mut out = Vec::with_capacity(16 + self.len() * (16 + 4 * self.encoder_spec.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        write_str(&mut out, &spec_label(&self.encoder_spec))?;
        for (id, vector) in self.entries() {
            write_str(&mut out, id)?;
            for v in vector.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], scope: impl Into<String>) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(IndexError::Format(format!(
                "bad magic {:?}, expected \"DSVX\"",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let dim = usize::from(r.u16()?);
        if dim == 0 {
            return Err(IndexError::Format("dim is zero".into()));
        }
        let count = r.u32()? as usize;
        let label = r.string()?;
        let (name, version) = label.rsplit_once('/').unwrap_or((label.as_str(), ""));
        let spec = EncoderSpec { name: name.to_string(), dim, version: version.to_string() };

        let mut index = Self::new(spec, scope);
        for _ in 0..count {
            let id = r.string()?;
            let raw = r.take(4 * dim)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            index.add(id, Embedding::from_values(values)).map_err(|e| match e {
                IndexError::DuplicateId(id) => IndexError::Format(format!("duplicate id {id:?}")),
                other => other,
            })?;
        }
        if r.pos != bytes.len() {
            return Err(IndexError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(index)
    }

    /// Write atomically: a temp file in the same directory is renamed into place.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)?;
        Ok(())
    }

    /// Load an index; the scope label is the file name minus `.dsvx`.
    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path)?;
        let scope = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(|n| n.strip_suffix(".dsvx").unwrap_or(n).to_string())
            .unwrap_or_default();
        Self::from_bytes(&bytes, scope)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn write_str(out: &mut Vec<u8>, s: &str) -> Result<(), IndexError> {
    let len = u16::try_from(s.len())
        .map_err(|_| IndexError::Format(format!("string of {} bytes exceeds u16 length", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            IndexError::Format(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, IndexError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = usize::from(self.u16()?);
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| IndexError::Format(format!("invalid UTF-8: {e}")))
    }
}
