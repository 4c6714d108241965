//! Retrievable passages.
//!
//! Text blocks are packed greedily into sentence-aligned chunks. Table blocks
//! are flattened to one sentence per data cell:
//!
//! ```text
//! text := [colhdr " "] [rowhdr " "] "= " cell
//! ```
//!
//! where `colhdr` joins the cell's column-header entries top-down and `rowhdr`
//! joins its row-header entries left-to-right. A cell with no header at all
//! is emitted as its bare content.

use serde::{Deserialize, Serialize};

use crate::docmodel::{Document, LayoutBlock, Table};

pub const DEFAULT_MAX_CHUNK_CHARS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageKind {
    Text,
    TableTriplet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    pub block_id: String,
    pub kind: PassageKind,
    pub text: String,
    pub ordinal: usize,
}

impl Passage {
    fn new(doc_id: &str, block_id: &str, kind: PassageKind, ordinal: usize, text: String) -> Self {
        Self {
            passage_id: format!("{doc_id}/{block_id}/{ordinal}"),
            doc_id: doc_id.to_string(),
            block_id: block_id.to_string(),
            kind,
            text,
            ordinal,
        }
    }
}

/// Split text into sentences at `". "`, `"? "` and `"! "`.
///
/// The terminator stays with its sentence; the separating space does not.
/// Results are trimmed and never empty.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            if let Some(&(j, ' ')) = chars.peek() {
                push_trimmed(&mut out, &text[start..j]);
                start = j + 1;
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Hard-split a string into pieces of at most `max` chars.
fn split_long(s: &str, max: usize) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    chars
        .chunks(max)
        .map(|c| c.iter().collect::<String>().trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

/// Greedy sentence packing: keep appending sentences (space-joined) while
/// the chunk stays within `max_chars`.
pub fn pack_sentences(text: &str, max_chars: usize) -> Vec<String> {
    let max_chars = max_chars.max(1);
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut current_len = 0;
    for sentence in split_sentences(text) {
        let len = char_len(sentence);
        if len > max_chars {
            if !current.is_empty() {
                chunks.push(std::mem::take(&mut current));
                current_len = 0;
            }
            chunks.extend(split_long(sentence, max_chars));
            continue;
        }
        if current.is_empty() {
            current.push_str(sentence);
            current_len = len;
        } else if current_len + 1 + len <= max_chars {
            current.push(' ');
            current.push_str(sentence);
            current_len += 1 + len;
        } else {
            chunks.push(std::mem::replace(&mut current, sentence.to_string()));
            current_len = len;
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

fn block_text_passages(doc_id: &str, block: &LayoutBlock, max_chars: usize) -> Vec<Passage> {
    pack_sentences(&block.text, max_chars)
        .into_iter()
        .enumerate()
        .map(|(ordinal, text)| Passage::new(doc_id, &block.block_id, PassageKind::Text, ordinal, text))
        .collect()
}

pub fn chunk_text(document: &Document, max_chunk_chars: usize) -> Vec<Passage> {
    document
        .blocks_in_reading_order()
        .into_iter()
        .filter(|b| b.kind.is_textual() && b.table.is_none())
        .flat_map(|b| block_text_passages(&document.doc_id, b, max_chunk_chars))
        .collect()
}

fn join_nonempty<'a>(parts: impl Iterator<Item = &'a str>) -> String {
    parts.filter(|p| !p.is_empty()).collect::<Vec<_>>().join(" ")
}

/// Sentence for one data cell, or `None` when the cell is empty.
pub fn triplet_sentence(table: &Table, row: usize, col: usize) -> Option<String> {
    let cell = table.cell(row, col);
    if cell.is_empty() {
        return None;
    }
    let col_header = join_nonempty((0..table.col_header_rows).map(|r| table.cell(r, col)));
    let row_header = join_nonempty((0..table.row_header_cols).map(|c| table.cell(row, c)));
    let headers = join_nonempty([col_header.as_str(), row_header.as_str()].into_iter());
    Some(if headers.is_empty() { cell.to_string() } else { format!("{headers} = {cell}") })
}

fn block_triplets(doc_id: &str, block: &LayoutBlock, table: &Table) -> Vec<Passage> {
    let mut out = Vec::new();
    for row in table.col_header_rows..table.n_rows {
        for col in table.row_header_cols..table.n_cols {
            if let Some(text) = triplet_sentence(table, row, col) {
                let ordinal = out.len();
                out.push(Passage::new(doc_id, &block.block_id, PassageKind::TableTriplet, ordinal, text));
            }
        }
    }
    out
}

pub fn serialize_table_triplets(document: &Document) -> Vec<Passage> {
    document
        .blocks_in_reading_order()
        .into_iter()
        .filter_map(|b| b.table.as_ref().map(|t| block_triplets(&document.doc_id, b, t)))
        .flatten()
        .collect()
}

/// All passages of a document, block by block in reading order.
pub fn document_passages(document: &Document, max_chunk_chars: usize) -> Vec<Passage> {
    let mut out = Vec::new();
    for block in document.blocks_in_reading_order() {
        match &block.table {
            Some(table) => out.extend(block_triplets(&document.doc_id, block, table)),
            None if block.kind.is_textual() => {
                out.extend(block_text_passages(&document.doc_id, block, max_chunk_chars))
            }
            None => {}
        }
    }
    out
}
