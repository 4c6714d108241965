//! Per-page document conversion stages.
//!
//! Inputs are desk-scale stand-ins for PDF bytes: a `PagesJson` submission
//! or plain text with form-feed page breaks. Each page is routed to text
//! parsing or OCR, segmented into layout blocks by line rules, and the
//! per-page results are joined into a [`Document`] in reading order.
//!
//! Segmentation rules, applied line by line:
//! - blank lines close the current paragraph;
//! - a line starting with `"# "` is a heading block on its own;
//! - a maximal run of lines that start and end with `|` is a table;
//! - everything else accumulates into a paragraph.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::docmodel::{self, BlockKind, Document, LayoutBlock, Table};

pub const PAGE_SEPARATOR: char = '\u{000C}';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConversionError {
    #[error("input is not valid UTF-8: {0}")]
    Decode(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("no pages")]
    NoPages,
    #[error("table has no content rows")]
    EmptyTable,
    #[error("missing page {0}")]
    MissingPage(usize),
    #[error("duplicate page {0}")]
    DuplicatePage(usize),
    #[error("assembled document is invalid: {}", .0.join("; "))]
    InvalidDocument(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatHint {
    PagesJson,
    PlainText,
}

impl FormatHint {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pages_json" => Some(Self::PagesJson),
            "plain_text" => Some(Self::PlainText),
            _ => None,
        }
    }

    /// Best guess for uploads without an explicit format.
    pub fn sniff(raw: &[u8]) -> Self {
        match raw.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'{') => Self::PagesJson,
            _ => Self::PlainText,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Programmatic,
    Scanned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSource {
    pub page_index: usize,
    pub source_kind: SourceKind,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub page_index: usize,
    pub blocks: Vec<LayoutBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    ParseText,
    Ocr,
}

/// A parsed upload: pages plus the identity of the document they form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub doc_id: String,
    pub title: String,
    pub pages: Vec<PageSource>,
}

#[derive(Deserialize)]
struct PagesJson {
    doc_id: String,
    #[serde(default)]
    title: String,
    pages: Vec<PageSource>,
}

fn decode(raw: &[u8]) -> Result<&str, ConversionError> {
    std::str::from_utf8(raw).map_err(|e| ConversionError::Decode(e.to_string()))
}

/// Split raw input into pages.
pub fn split_pages(raw: &[u8], format: FormatHint) -> Result<Vec<PageSource>, ConversionError> {
    Ok(parse_submission(raw, format)?.pages)
}

/// Split raw input into pages and derive the document id and title.
///
/// `PagesJson` declares its own id. Plain text gets a content-derived id so
/// resubmitting the same bytes yields the same document.
pub fn parse_submission(raw: &[u8], format: FormatHint) -> Result<Submission, ConversionError> {
    if raw.is_empty() {
        return Err(ConversionError::NoPages);
    }
    let text = decode(raw)?;
    match format {
        FormatHint::PlainText => {
            let pages: Vec<PageSource> = text
                .split(PAGE_SEPARATOR)
                .enumerate()
                .map(|(page_index, content)| PageSource {
                    page_index,
                    source_kind: SourceKind::Programmatic,
                    content: content.to_string(),
                })
                .collect();
            let title = pages
                .iter()
                .flat_map(|p| p.content.lines())
                .find_map(|line| line.strip_prefix("# "))
                .map(|t| t.trim().to_string())
                .unwrap_or_default();
            Ok(Submission { doc_id: content_doc_id(raw), title, pages })
        }
        FormatHint::PagesJson => {
            let parsed: PagesJson =
                serde_json::from_str(text).map_err(|e| ConversionError::Schema(e.to_string()))?;
            check_doc_id(&parsed.doc_id)?;
            if parsed.pages.is_empty() {
                return Err(ConversionError::NoPages);
            }
            let mut seen = HashSet::new();
            for page in &parsed.pages {
                if !seen.insert(page.page_index) {
                    return Err(ConversionError::Schema(format!(
                        "page_index {} declared twice",
                        page.page_index
                    )));
                }
            }
            Ok(Submission { doc_id: parsed.doc_id, title: parsed.title, pages: parsed.pages })
        }
    }
}

fn content_doc_id(raw: &[u8]) -> String {
    let digest = Sha256::digest(raw);
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("doc-{hex}")
}

/// Document ids double as library file names.
pub fn check_doc_id(doc_id: &str) -> Result<(), ConversionError> {
    let ok = !doc_id.is_empty()
        && doc_id.len() <= 128
        && !doc_id.starts_with('.')
        && doc_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ConversionError::Schema(format!(
            "doc_id {doc_id:?} must be 1-128 chars of [A-Za-z0-9._-] not starting with '.'"
        )))
    }
}

pub fn route_page(page: &PageSource) -> Route {
    match page.source_kind {
        SourceKind::Programmatic => Route::ParseText,
        SourceKind::Scanned => Route::Ocr,
    }
}

/// Recognition engine for scanned pages.
pub trait OcrEngine: Send + Sync {
    fn recognize(&self, page: &PageSource) -> Result<String, String>;
}

/// Bundled OCR stand-in: scanned pages already carry their text.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityOcr;

impl OcrEngine for IdentityOcr {
    fn recognize(&self, page: &PageSource) -> Result<String, String> {
        Ok(page.content.clone())
    }
}

/// Route a page and produce its post-OCR text.
pub fn extract_page_text(page: &PageSource, ocr: &dyn OcrEngine) -> Result<PageSource, String> {
    let content = match route_page(page) {
        Route::ParseText => page.content.clone(),
        Route::Ocr => ocr.recognize(page)?,
    };
    Ok(PageSource { content, ..page.clone() })
}

fn is_table_line(line: &str) -> bool {
    let t = line.trim();
    t.len() >= 2 && t.starts_with('|') && t.ends_with('|')
}

pub fn segment_layout(page: &PageSource) -> Result<StageResult, ConversionError> {
    enum Pending<'a> {
        None,
        Paragraph(Vec<&'a str>),
        Table(Vec<&'a str>),
    }

    let page_index = page.page_index;
    let mut blocks = Vec::new();
    let mut pending = Pending::None;

    let flush = |pending: &mut Pending<'_>, blocks: &mut Vec<LayoutBlock>| -> Result<(), ConversionError> {
        match std::mem::replace(pending, Pending::None) {
            Pending::None => {}
            Pending::Paragraph(lines) => {
                let order = blocks.len();
                blocks.push(LayoutBlock::text(page_index, order, BlockKind::Paragraph, lines.join("\n")));
            }
            Pending::Table(lines) => {
                let order = blocks.len();
                blocks.push(LayoutBlock::table(page_index, order, extract_table_structure(&lines)?));
            }
        }
        Ok(())
    };

    for line in page.content.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            flush(&mut pending, &mut blocks)?;
        } else if let Some(heading) = line.strip_prefix("# ") {
            flush(&mut pending, &mut blocks)?;
            let order = blocks.len();
            blocks.push(LayoutBlock::text(page_index, order, BlockKind::Heading, heading.trim()));
        } else if is_table_line(line) {
            match &mut pending {
                Pending::Table(lines) => lines.push(line),
                _ => {
                    flush(&mut pending, &mut blocks)?;
                    pending = Pending::Table(vec![line]);
                }
            }
        } else {
            match &mut pending {
                Pending::Paragraph(lines) => lines.push(line),
                _ => {
                    flush(&mut pending, &mut blocks)?;
                    pending = Pending::Paragraph(vec![line]);
                }
            }
        }
    }
    flush(&mut pending, &mut blocks)?;

    Ok(StageResult { page_index, blocks })
}

fn split_row(line: &str) -> Vec<String> {
    let t = line.trim();
    let inner = t.strip_prefix('|').unwrap_or(t);
    let inner = inner.strip_suffix('|').unwrap_or(inner);
    inner.split('|').map(|c| c.trim().to_string()).collect()
}

fn is_separator_row(cells: &[String]) -> bool {
    cells.iter().all(|c| {
        !c.is_empty() && c.contains('-') && c.chars().all(|ch| ch == '-' || ch == ':')
    })
}

/// Parse pipe-table lines into a [`Table`].
///
/// A Markdown separator row is dropped and marks the header boundary;
/// without one, the first row is the header when there are at least two
/// rows. Ragged rows are padded to the widest row.
pub fn extract_table_structure<S: AsRef<str>>(lines: &[S]) -> Result<Table, ConversionError> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header_rows: Option<usize> = None;
    for line in lines {
        let cells = split_row(line.as_ref());
        if is_separator_row(&cells) {
            header_rows.get_or_insert(rows.len());
            continue;
        }
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(ConversionError::EmptyTable);
    }

    let n_rows = rows.len();
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(1);
    let col_header_rows = match header_rows {
        // A trailing separator would leave no data rows.
        Some(h) => h.min(n_rows - 1),
        None if n_rows >= 2 => 1,
        None => 0,
    };
    let row_header_cols = usize::from(n_cols >= 2);

    let mut cells = Vec::with_capacity(n_rows * n_cols);
    for mut row in rows {
        row.resize(n_cols, String::new());
        cells.extend(row);
    }
    Ok(Table { n_rows, n_cols, cells, col_header_rows, row_header_cols })
}

/// Join per-page results into a document in reading order.
///
/// The output does not depend on the order in which `results` arrive.
pub fn assemble(
    results: impl IntoIterator<Item = StageResult>,
    page_count: usize,
    doc_id: &str,
    title: &str,
) -> Result<Document, ConversionError> {
    let mut by_page: BTreeMap<usize, StageResult> = BTreeMap::new();
    for result in results {
        let page = result.page_index;
        if by_page.insert(page, result).is_some() {
            return Err(ConversionError::DuplicatePage(page));
        }
    }
    for page in 0..page_count {
        if !by_page.contains_key(&page) {
            return Err(ConversionError::MissingPage(page));
        }
    }
    if let Some((&extra, _)) = by_page.range(page_count..).next() {
        return Err(ConversionError::Schema(format!(
            "page {extra} outside page_count {page_count}"
        )));
    }

    let document = Document {
        doc_id: doc_id.to_string(),
        title: title.to_string(),
        blocks: by_page.into_values().flat_map(|r| r.blocks).collect(),
        page_count,
    };
    let violations = docmodel::validate(&document);
    if violations.is_empty() {
        Ok(document)
    } else {
        Err(ConversionError::InvalidDocument(violations))
    }
}

/// Run every stage inline: split, route, segment, assemble.
pub fn convert(raw: &[u8], format: FormatHint, ocr: &dyn OcrEngine) -> Result<Document, ConversionError> {
    let submission = parse_submission(raw, format)?;
    let page_count = submission.pages.len();
    let mut results = Vec::with_capacity(page_count);
    for page in &submission.pages {
        let routed = extract_page_text(page, ocr).map_err(ConversionError::Schema)?;
        results.push(segment_layout(&routed)?);
    }
    assemble(results, page_count, &submission.doc_id, &submission.title)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(content: &str) -> PageSource {
        PageSource { page_index: 0, source_kind: SourceKind::Programmatic, content: content.into() }
    }

    #[test]
    fn plain_text_splits_on_form_feed() {
        let pages = split_pages("A\u{000C}B".as_bytes(), FormatHint::PlainText).unwrap();
        assert_eq!(pages.len(), 2);
        assert_eq!(pages[0].content, "A");
        assert_eq!(pages[1].content, "B");
        assert_eq!(pages[1].page_index, 1);
        assert!(pages.iter().all(|p| p.source_kind == SourceKind::Programmatic));

        let single = split_pages(b"A", FormatHint::PlainText).unwrap();
        assert_eq!(single, vec![page("A")]);
    }

    #[test]
    fn pages_json_is_passed_through() {
        let raw = br#"{"doc_id":"x","title":"T","pages":[
            {"page_index":0,"source_kind":"scanned","content":"a"},
            {"page_index":1,"source_kind":"programmatic","content":"b"}]}"#;
        let sub = parse_submission(raw, FormatHint::PagesJson).unwrap();
        assert_eq!(sub.doc_id, "x");
        assert_eq!(sub.title, "T");
        assert_eq!(sub.pages[0].source_kind, SourceKind::Scanned);
        assert_eq!(sub.pages[1].source_kind, SourceKind::Programmatic);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_pages(&[0xff, 0xfe], FormatHint::PlainText),
            Err(ConversionError::Decode(_))
        ));
        assert!(matches!(
            split_pages(br#"{"title":"T","pages":[]}"#, FormatHint::PagesJson),
            Err(ConversionError::Schema(_))
        ));
        assert!(matches!(
            split_pages(br#"{"doc_id":"a","pages":[{"page_index":0}]}"#, FormatHint::PagesJson),
            Err(ConversionError::Schema(_))
        ));
        assert_eq!(split_pages(b"", FormatHint::PlainText), Err(ConversionError::NoPages));
        assert_eq!(
            split_pages(br#"{"doc_id":"a","pages":[]}"#, FormatHint::PagesJson),
            Err(ConversionError::NoPages)
        );
        let dup = br#"{"doc_id":"a","pages":[
            {"page_index":0,"source_kind":"scanned","content":"a"},
            {"page_index":0,"source_kind":"scanned","content":"b"}]}"#;
        assert!(matches!(split_pages(dup, FormatHint::PagesJson), Err(ConversionError::Schema(_))));
        let bad_id = br#"{"doc_id":"../etc","pages":[{"page_index":0,"source_kind":"scanned","content":"a"}]}"#;
        assert!(matches!(split_pages(bad_id, FormatHint::PagesJson), Err(ConversionError::Schema(_))));
    }

    #[test]
    fn plain_text_ids_depend_on_content_only() {
        let a = parse_submission(b"# Report\nhello", FormatHint::PlainText).unwrap();
        let b = parse_submission(b"# Report\nhello", FormatHint::PlainText).unwrap();
        let c = parse_submission(b"# Report\nhello!", FormatHint::PlainText).unwrap();
        assert_eq!(a.doc_id, b.doc_id);
        assert_ne!(a.doc_id, c.doc_id);
        assert_eq!(a.title, "Report");
        assert!(check_doc_id(&a.doc_id).is_ok());
    }

    #[test]
    fn routing_follows_source_kind() {
        let mut p = page("text");
        assert_eq!(route_page(&p), Route::ParseText);
        p.source_kind = SourceKind::Scanned;
        assert_eq!(route_page(&p), Route::Ocr);
        assert_eq!(extract_page_text(&p, &IdentityOcr).unwrap(), p);
    }

    #[test]
    fn heading_and_paragraph() {
        let r = segment_layout(&page("# Energy\n\nWe cut use.")).unwrap();
        assert_eq!(r.blocks.len(), 2);
        assert_eq!(r.blocks[0].kind, BlockKind::Heading);
        assert_eq!(r.blocks[0].text, "Energy");
        assert_eq!(r.blocks[0].block_id, "p0.b0");
        assert_eq!(r.blocks[1].kind, BlockKind::Paragraph);
        assert_eq!(r.blocks[1].text, "We cut use.");
        assert_eq!(r.blocks[1].order_on_page, 1);
    }

    #[test]
    fn pipe_lines_become_one_table() {
        let r = segment_layout(&page("|Year|Value|\n|2021|5|")).unwrap();
        assert_eq!(r.blocks.len(), 1);
        assert_eq!(r.blocks[0].kind, BlockKind::Table);
        assert!(r.blocks[0].text.is_empty());
        assert_eq!(r.blocks[0].table.as_ref().unwrap().n_rows, 2);
    }

    #[test]
    fn empty_page_has_no_blocks() {
        assert!(segment_layout(&page("")).unwrap().blocks.is_empty());
        assert!(segment_layout(&page("\n  \n")).unwrap().blocks.is_empty());
    }

    #[test]
    fn table_adjacent_to_paragraph_without_blank_line() {
        let r = segment_layout(&page("Intro line\n|a|b|\n|c|d|\nOutro")).unwrap();
        let kinds: Vec<_> = r.blocks.iter().map(|b| b.kind).collect();
        assert_eq!(kinds, vec![BlockKind::Paragraph, BlockKind::Table, BlockKind::Paragraph]);
    }

    #[test]
    fn markdown_table_structure() {
        let t = extract_table_structure(&["|Year|Value|", "|---|---|", "|2021|5|"]).unwrap();
        assert_eq!((t.n_rows, t.n_cols), (2, 2));
        assert_eq!((t.col_header_rows, t.row_header_cols), (1, 1));
        assert_eq!(t.cells, vec!["Year", "Value", "2021", "5"]);

        let aligned = extract_table_structure(&["| a | b |", "|:--|--:|", "| c | d |", "| e | f |"]).unwrap();
        assert_eq!(aligned.col_header_rows, 1);
        assert_eq!(aligned.n_rows, 3);
    }

    #[test]
    fn degenerate_and_ragged_tables() {
        let t = extract_table_structure(&["|a|"]).unwrap();
        assert_eq!((t.n_rows, t.n_cols, t.col_header_rows, t.row_header_cols), (1, 1, 0, 0));

        let t = extract_table_structure(&["|a|b|", "|c|"]).unwrap();
        assert_eq!(t.cells, vec!["a", "b", "c", ""]);
        assert_eq!(t.col_header_rows, 1);

        let t = extract_table_structure(&["|a|b|", "|---|---|"]).unwrap();
        assert_eq!(t.col_header_rows, 0);

        let t = extract_table_structure(&["|h1|h2|", "|h3|h4|", "|--|--|", "|x|1|"]).unwrap();
        assert_eq!(t.col_header_rows, 2);

        assert_eq!(extract_table_structure(&["|---|"]), Err(ConversionError::EmptyTable));
        assert_eq!(extract_table_structure::<&str>(&[]), Err(ConversionError::EmptyTable));
    }

    fn result(page_index: usize, text: &str) -> StageResult {
        StageResult {
            page_index,
            blocks: vec![LayoutBlock::text(page_index, 0, BlockKind::Paragraph, text)],
        }
    }

    #[test]
    fn assemble_orders_pages() {
        let doc = assemble(vec![result(1, "B"), result(0, "A")], 2, "d", "").unwrap();
        assert_eq!(doc.blocks[0].text, "A");
        assert_eq!(doc.blocks[1].text, "B");
        assert!(docmodel::validate(&doc).is_empty());
    }

    #[test]
    fn assemble_detects_gaps_and_duplicates() {
        assert_eq!(
            assemble(vec![result(0, "A"), result(2, "C")], 3, "d", ""),
            Err(ConversionError::MissingPage(1))
        );
        assert_eq!(
            assemble(vec![result(0, "A"), result(0, "A")], 1, "d", ""),
            Err(ConversionError::DuplicatePage(0))
        );
        assert!(matches!(
            assemble(vec![result(0, "A"), result(1, "B")], 1, "d", ""),
            Err(ConversionError::Schema(_))
        ));
    }

    #[test]
    fn convert_end_to_end() {
        let doc = convert(b"# T\n\nBody.\x0c|a|b|\n|c|d|", FormatHint::PlainText, &IdentityOcr).unwrap();
        assert_eq!(doc.page_count, 2);
        assert_eq!(doc.blocks.len(), 3);
        assert_eq!(doc.title, "T");
    }
}
