//! Machine-readable document model.
//!
//! A [`Document`] is an ordered list of typed layout blocks with page
//! provenance. Reading order is the lexicographic key
//! `(page_index, order_on_page)`; nothing geometric is modelled.
//!
//! The JSON form of [`Document`] is the on-disk "converted document" artifact
//! and the body served for `GET /v1/documents/{id}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DocModelError {
    #[error("invalid document: {}", .0.join("; "))]
    InvalidDocument(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Paragraph,
    Heading,
    Table,
    Caption,
    Other,
}

impl BlockKind {
    /// Kinds whose text is chunked into retrievable passages.
    pub fn is_textual(self) -> bool {
        matches!(self, Self::Paragraph | Self::Heading | Self::Caption)
    }
}

/// Dense row-major grid of cell strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub n_rows: usize,
    pub n_cols: usize,
    pub cells: Vec<String>,
    /// Leading rows that hold column headers.
    pub col_header_rows: usize,
    /// Leading columns that hold row headers.
    pub row_header_cols: usize,
}

impl Table {
    pub fn cell(&self, row: usize, col: usize) -> &str {
        &self.cells[row * self.n_cols + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[String]> {
        // `max(1)` keeps `chunks` happy on a malformed zero-width table.
        self.cells.chunks(self.n_cols.max(1))
    }

    /// Tab-separated cells, newline-separated rows.
    pub fn render_tsv(&self) -> String {
        self.rows()
            .map(|row| row.join("\t"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn violations(&self, block_id: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_rows == 0 || self.n_cols == 0 {
            out.push(format!("table in block {block_id} has zero rows or columns"));
        }
        if self.cells.len() != self.n_rows * self.n_cols {
            out.push(format!(
                "table in block {block_id} has {} cells, expected {}x{}",
                self.cells.len(),
                self.n_rows,
                self.n_cols
            ));
        }
        if self.n_rows > 0 && self.col_header_rows >= self.n_rows {
            out.push(format!(
                "table in block {block_id} has col_header_rows {} >= n_rows {}",
                self.col_header_rows, self.n_rows
            ));
        }
        if self.n_cols > 0 && self.row_header_cols >= self.n_cols {
            out.push(format!(
                "table in block {block_id} has row_header_cols {} >= n_cols {}",
                self.row_header_cols, self.n_cols
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutBlock {
    pub block_id: String,
    pub page_index: usize,
    pub order_on_page: usize,
    pub kind: BlockKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
}

impl LayoutBlock {
    pub fn block_id_for(page_index: usize, order_on_page: usize) -> String {
        format!("p{page_index}.b{order_on_page}")
    }

    pub fn text(page_index: usize, order_on_page: usize, kind: BlockKind, text: impl Into<String>) -> Self {
        Self {
            block_id: Self::block_id_for(page_index, order_on_page),
            page_index,
            order_on_page,
            kind,
            text: text.into(),
            table: None,
        }
    }

    pub fn table(page_index: usize, order_on_page: usize, table: Table) -> Self {
        Self {
            block_id: Self::block_id_for(page_index, order_on_page),
            page_index,
            order_on_page,
            kind: BlockKind::Table,
            text: String::new(),
            table: Some(table),
        }
    }

    pub fn reading_key(&self) -> (usize, usize) {
        (self.page_index, self.order_on_page)
    }

    /// Plain-text rendering used for linearization.
    pub fn plain_text(&self) -> String {
        match &self.table {
            Some(table) => table.render_tsv(),
            None => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub blocks: Vec<LayoutBlock>,
    pub page_count: usize,
}

impl Document {
    pub fn block(&self, block_id: &str) -> Option<&LayoutBlock> {
        self.blocks.iter().find(|b| b.block_id == block_id)
    }

    /// Blocks sorted by reading key, independent of storage order.
    pub fn blocks_in_reading_order(&self) -> Vec<&LayoutBlock> {
        let mut blocks: Vec<&LayoutBlock> = self.blocks.iter().collect();
        blocks.sort_by_key(|b| b.reading_key());
        blocks
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("document serializes")
    }
}

/// One entry per violated invariant; empty means valid.
pub fn validate(document: &Document) -> Vec<String> {
    let mut out = Vec::new();
    if document.doc_id.is_empty() {
        out.push("doc_id is empty".to_string());
    }
    if document.page_count == 0 {
        out.push("page_count must be positive".to_string());
    }
    out.extend(block_violations(document.blocks.iter(), document.page_count));
    out
}

fn block_violations<'a>(
    blocks: impl Iterator<Item = &'a LayoutBlock>,
    page_count: usize,
) -> Vec<String> {
    let mut out = Vec::new();
    let mut prev: Option<(usize, usize)> = None;
    for block in blocks {
        let id = &block.block_id;
        if block.page_index >= page_count {
            out.push(format!("block {id} out of page range"));
        }
        let expected_id = LayoutBlock::block_id_for(block.page_index, block.order_on_page);
        if *id != expected_id {
            out.push(format!("block {id} should be named {expected_id}"));
        }
        if let Some(prev) = prev {
            if block.reading_key() <= prev {
                out.push(format!("block {id} is not in reading order"));
            }
        }
        prev = Some(block.reading_key());

        match (block.kind, &block.table) {
            (BlockKind::Table, Some(table)) => {
                if !block.text.is_empty() {
                    out.push(format!("table block {id} has non-empty text"));
                }
                out.extend(table.violations(id));
            }
            (BlockKind::Table, None) => out.push(format!("table block {id} has no table")),
            (_, Some(_)) => out.push(format!("non-table block {id} carries a table")),
            (_, None) => {}
        }
    }
    out
}

/// `(block_id, plain_text)` pairs in reading order.
///
/// Storage order of `blocks` is irrelevant: the blocks are sorted by reading
/// key before the remaining invariants are checked.
pub fn linearize(document: &Document) -> Result<Vec<(String, String)>, DocModelError> {
    let ordered = document.blocks_in_reading_order();
    let mut violations = Vec::new();
    if document.doc_id.is_empty() {
        violations.push("doc_id is empty".to_string());
    }
    if document.page_count == 0 {
        violations.push("page_count must be positive".to_string());
    }
    violations.extend(block_violations(ordered.iter().copied(), document.page_count));
    if !violations.is_empty() {
        return Err(DocModelError::InvalidDocument(violations));
    }
    Ok(ordered
        .into_iter()
        .map(|b| (b.block_id.clone(), b.plain_text()))
        .collect())
}
