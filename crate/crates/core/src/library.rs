//! On-disk document library.
//!
//! ```text
//! {root}/library.json        manifest, sorted by doc_id
//! {root}/{doc_id}.doc.json   converted Document
//! {root}/{doc_id}.dsvx       passage index
//! ```
//!
//! Both per-document files are written (atomically) before the manifest
//! names the document, so a listed document is always queryable.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::{self, Document};
use crate::encoder::{Encoder, EncoderError};
use crate::orchestrator::DocumentSink;
use crate::passages::{self, Passage};
use crate::vectorstore::{write_atomic, IndexError, VectorIndex};

const MANIFEST: &str = "library.json";

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("invalid document: {}", .0.join("; "))]
    InvalidDocument(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub doc_id: String,
    pub title: String,
    pub ingested_at: DateTime<Utc>,
}

/// A converted document with its passages and their index.
#[derive(Debug)]
pub struct IndexedDocument {
    pub document: Document,
    pub index: VectorIndex,
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl IndexedDocument {
    /// Extract passages and embed them. Passages without any token to embed
    /// are kept for lookup but not indexed.
    pub fn build(document: Document, encoder: &dyn Encoder, max_chunk_chars: usize) -> Result<Self, IndexError> {
        let passages = passages::document_passages(&document, max_chunk_chars);
        let mut index = VectorIndex::new(encoder.spec().clone(), document.doc_id.clone());
        for passage in &passages {
            match encoder.embed(&passage.text) {
                Ok(embedding) => index.add(passage.passage_id.clone(), embedding)?,
                Err(EncoderError::EmptyText | EncoderError::ZeroVector) => {
                    tracing::debug!(passage_id = passage.passage_id, "passage not embeddable, skipped");
                }
                Err(e) => return Err(IndexError::Format(e.to_string())),
            }
        }
        Ok(Self::with_passages(document, index, passages))
    }

    /// Pair a stored document with a stored index.
    pub fn from_parts(document: Document, index: VectorIndex, max_chunk_chars: usize) -> Result<Self, IndexError> {
        let passages = passages::document_passages(&document, max_chunk_chars);
        let this = Self::with_passages(document, index, passages);
        if let Some((id, _)) = this.index.entries().find(|(id, _)| !this.by_id.contains_key(*id)) {
            return Err(IndexError::Format(format!("indexed passage {id} not found in document")));
        }
        Ok(this)
    }

    fn with_passages(document: Document, index: VectorIndex, passages: Vec<Passage>) -> Self {
        let by_id = passages.iter().enumerate().map(|(i, p)| (p.passage_id.clone(), i)).collect();
        Self { document, index, passages, by_id }
    }

    pub fn doc_id(&self) -> &str {
        &self.document.doc_id
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn passage(&self, passage_id: &str) -> Option<&Passage> {
        self.by_id.get(passage_id).map(|&i| &self.passages[i])
    }
}

pub struct Library {
    root: PathBuf,
    encoder: Arc<dyn Encoder>,
    max_chunk_chars: usize,
    manifest: RwLock<Vec<LibraryEntry>>,
    cache: RwLock<HashMap<String, Arc<IndexedDocument>>>,
    write_lock: Mutex<()>,
}

impl Library {
    /// Open (or create) a library rooted at `root`.
    ///
    /// Manifest entries whose files have gone missing are dropped.
    pub fn open(root: impl Into<PathBuf>, encoder: Arc<dyn Encoder>, max_chunk_chars: usize) -> Result<Self, LibraryError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let manifest_path = root.join(MANIFEST);
        let mut manifest: Vec<LibraryEntry> = match fs::read(&manifest_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| LibraryError::Corrupt {
                path: manifest_path.display().to_string(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        manifest.retain(|e| {
            let ok = doc_path(&root, &e.doc_id).exists() && index_path(&root, &e.doc_id).exists();
            if !ok {
                tracing::warn!(doc_id = e.doc_id, "manifest entry without files, dropping");
            }
            ok
        });
        manifest.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        Ok(Self {
            root,
            encoder,
            max_chunk_chars,
            manifest: RwLock::new(manifest),
            cache: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn encoder(&self) -> &Arc<dyn Encoder> {
        &self.encoder
    }

    pub fn list(&self) -> Vec<LibraryEntry> {
        self.manifest.read().clone()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.manifest.read().iter().any(|e| e.doc_id == doc_id)
    }

    /// Index and persist a document, replacing any previous version.
    pub fn ingest(&self, document: &Document) -> Result<LibraryEntry, LibraryError> {
        let violations = docmodel::validate(document);
        if !violations.is_empty() {
            return Err(LibraryError::InvalidDocument(violations));
        }
        crate::conversion::check_doc_id(&document.doc_id)
            .map_err(|e| LibraryError::InvalidDocument(vec![e.to_string()]))?;

        let indexed = IndexedDocument::build(document.clone(), self.encoder.as_ref(), self.max_chunk_chars)?;

        let _writer = self.write_lock.lock();
        write_atomic(&doc_path(&self.root, &document.doc_id), &document.to_json_bytes())?;
        indexed.index.save(&index_path(&self.root, &document.doc_id))?;

        let entry = LibraryEntry {
            doc_id: document.doc_id.clone(),
            title: document.title.clone(),
            ingested_at: Utc::now(),
        };
        let mut next = self.manifest.read().clone();
        next.retain(|e| e.doc_id != entry.doc_id);
        next.push(entry.clone());
        next.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let bytes = serde_json::to_vec_pretty(&next).expect("manifest serializes");
        write_atomic(&self.root.join(MANIFEST), &bytes)?;

        self.cache.write().insert(entry.doc_id.clone(), Arc::new(indexed));
        *self.manifest.write() = next;
        tracing::info!(doc_id = entry.doc_id, "document ingested");
        Ok(entry)
    }

    pub fn document(&self, doc_id: &str) -> Result<Document, LibraryError> {
        Ok(self.get(doc_id)?.document.clone())
    }

    /// Raw bytes of the stored document JSON.
    pub fn document_bytes(&self, doc_id: &str) -> Result<Vec<u8>, LibraryError> {
        if !self.contains(doc_id) {
            return Err(LibraryError::UnknownDocument(doc_id.to_string()));
        }
        Ok(fs::read(doc_path(&self.root, doc_id))?)
    }

    /// Loaded document and index, cached after first use.
    pub fn get(&self, doc_id: &str) -> Result<Arc<IndexedDocument>, LibraryError> {
        if let Some(hit) = self.cache.read().get(doc_id) {
            return Ok(Arc::clone(hit));
        }
        if !self.contains(doc_id) {
            return Err(LibraryError::UnknownDocument(doc_id.to_string()));
        }
        let path = doc_path(&self.root, doc_id);
        let document: Document = serde_json::from_slice(&fs::read(&path)?)
            .map_err(|e| LibraryError::Corrupt { path: path.display().to_string(), message: e.to_string() })?;
        let index = VectorIndex::load(&index_path(&self.root, doc_id))?;
        index.ensure_spec(self.encoder.spec())?;
        let loaded = Arc::new(IndexedDocument::from_parts(document, index, self.max_chunk_chars)?);
        self.cache.write().insert(doc_id.to_string(), Arc::clone(&loaded));
        Ok(loaded)
    }
}

impl DocumentSink for Library {
    fn store(&self, document: &Document) -> Result<(), String> {
        self.ingest(document).map(|_| ()).map_err(|e| e.to_string())
    }
}

fn doc_path(root: &Path, doc_id: &str) -> PathBuf {
    root.join(format!("{doc_id}.doc.json"))
}

fn index_path(root: &Path, doc_id: &str) -> PathBuf {
    root.join(format!("{doc_id}.dsvx"))
}
