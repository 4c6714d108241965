//! Document question answering over converted reports.
//!
//! The pipeline runs in three parts:
//!
//! - **conversion**: uploads are split into pages, routed to text parsing or
//!   OCR, segmented into layout blocks and assembled in reading order by a
//!   queue-worker [`orchestrator`];
//! - **retrieval**: each document becomes [`passages`] (text chunks and one
//!   sentence per table cell), embedded by an [`encoder`] into an exact
//!   k-NN [`vectorstore`];
//! - **response generation**: [`qa`] packages the top passages into a
//!   prompt, generates a draft, and only releases it after moderation and
//!   grounding checks pass.
//!
//! [`library`] ties the parts to an on-disk store.

pub mod conversion;
pub mod docmodel;
pub mod encoder;
pub mod library;
pub mod orchestrator;
pub mod passages;
pub mod qa;
pub mod vectorstore;

pub use conversion::{FormatHint, PageSource, SourceKind, StageResult};
pub use docmodel::{BlockKind, Document, LayoutBlock, Table};
pub use encoder::{Embedding, Encoder, EncoderSpec, HashBagEncoder};
pub use library::{IndexedDocument, Library, LibraryEntry, LibraryError};
pub use orchestrator::{Orchestrator, OrchestratorConfig, TaskRecord, TaskState};
pub use passages::{Passage, PassageKind};
pub use qa::{Answer, AnswerStatus, GenerationConfig, GeneratorKind, QaEngine, QaError};
pub use vectorstore::{Hit, VectorIndex};
