//! Knowledge-base registry and the JSON summary handed to the router.
//!
//! A registry holds text documents and CSV tables. Both are loaded eagerly on
//! registration so that malformed sources fail before any query runs. Once
//! built, a [`Registry`] is never mutated by the pipeline and can be shared
//! across threads.

pub mod csv;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieve_table::{self, Table, TableError};

/// Page delimiter for text knowledge bases (form feed).
pub const PAGE_BREAK: char = '\u{000C}';

/// Number of data rows shown in a table preview.
pub const PREVIEW_ROWS: usize = 5;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid id {0:?}: ids must match [A-Za-z0-9_.-]+")]
    InvalidId(String),
    #[error("cannot read {path}: {reason}")]
    SourceUnreadable { path: PathBuf, reason: String },
    #[error("malformed CSV in {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("manifest syntax error: {0}")]
    ManifestSyntax(String),
    #[error("manifest entry {index}: {source}")]
    ManifestEntry {
        index: usize,
        #[source]
        source: Box<KbError>,
    },
}

impl KbError {
    /// Strips manifest-entry annotation, if any.
    pub fn root(&self) -> &KbError {
        match self {
            KbError::ManifestEntry { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbKind {
    Text,
    Table,
}

impl fmt::Display for KbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KbKind::Text => "text",
            KbKind::Table => "table",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBaseDescriptor {
    pub id: String,
    pub kind: KbKind,
    pub source_path: PathBuf,
    pub human_summary: String,
}

impl KnowledgeBaseDescriptor {
    pub fn new(
        id: impl Into<String>,
        kind: KbKind,
        source_path: impl Into<PathBuf>,
        human_summary: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            kind,
            source_path: source_path.into(),
            human_summary: human_summary.into(),
        }
    }
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

/// Inferred column type of a CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Integer,
    Real,
    Text,
    Boolean,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Integer => "integer",
            ColumnType::Real => "real",
            ColumnType::Text => "text",
            ColumnType::Boolean => "boolean",
        })
    }
}

pub(crate) fn parse_integer_cell(cell: &str) -> Option<i64> {
    let digits = cell.strip_prefix(['+', '-']).unwrap_or(cell);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    cell.parse().ok()
}

pub(crate) fn parse_real_cell(cell: &str) -> Option<f64> {
    // decimal notation only: rejects inf/nan spellings and hex
    if !cell
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
        || !cell.bytes().any(|b| b.is_ascii_digit())
    {
        return None;
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub(crate) fn parse_bool_cell(cell: &str) -> Option<bool> {
    if cell.eq_ignore_ascii_case("true") {
        Some(true)
    } else if cell.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

/// Infers a column type from its raw cells. Empty cells are nulls and never
/// influence the result, so a column of only empty cells is `Integer`.
pub fn infer_column_type<'a, I>(cells: I) -> ColumnType
where
    I: IntoIterator<Item = &'a str>,
    I::IntoIter: Clone,
{
    let cells = cells.into_iter().filter(|c| !c.is_empty());
    if cells.clone().all(|c| parse_integer_cell(c).is_some()) {
        ColumnType::Integer
    } else if cells.clone().all(|c| parse_real_cell(c).is_some()) {
        ColumnType::Real
    } else if cells.clone().all(|c| parse_bool_cell(c).is_some()) {
        ColumnType::Boolean
    } else {
        ColumnType::Text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchemaPreview {
    pub headers: Vec<String>,
    pub inferred_types: Vec<ColumnType>,
    pub row_count: usize,
    pub preview_rows: Vec<Vec<String>>,
}

impl TableSchemaPreview {
    pub fn of(table: &Table) -> Self {
        Self {
            headers: table.headers.clone(),
            inferred_types: table.column_types(),
            row_count: table.row_count,
            preview_rows: table.raw_rows.iter().take(PREVIEW_ROWS).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub documents: usize,
    pub pages: usize,
}

/// A text knowledge base split into pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextDocument {
    pub pages: Vec<String>,
}

impl TextDocument {
    pub fn from_text(text: &str) -> Self {
        Self {
            pages: text.split(PAGE_BREAK).map(str::to_owned).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum KbContent {
    Text(TextDocument),
    Table(Table),
}

/// A registered, loaded knowledge base.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub descriptor: KnowledgeBaseDescriptor,
    pub content: KbContent,
}

impl KnowledgeBase {
    pub fn id(&self) -> &str {
        &self.descriptor.id
    }

    pub fn kind(&self) -> KbKind {
        self.descriptor.kind
    }

    /// Loads the descriptor's source from disk.
    pub fn load(descriptor: KnowledgeBaseDescriptor) -> Result<Self, KbError> {
        if !is_valid_id(&descriptor.id) {
            return Err(KbError::InvalidId(descriptor.id));
        }
        let path = &descriptor.source_path;
        let bytes = std::fs::read(path).map_err(|e| KbError::SourceUnreadable {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let content = match descriptor.kind {
            KbKind::Text => {
                let text = String::from_utf8(bytes).map_err(|_| KbError::SourceUnreadable {
                    path: path.clone(),
                    reason: "not valid UTF-8".into(),
                })?;
                KbContent::Text(TextDocument::from_text(&text))
            }
            KbKind::Table => {
                let text = String::from_utf8(bytes).map_err(|_| KbError::MalformedCsv {
                    path: path.clone(),
                    reason: "not valid UTF-8".into(),
                })?;
                let table =
                    retrieve_table::parse_csv_table(&text, &descriptor.id).map_err(|e| KbError::MalformedCsv {
                        path: path.clone(),
                        reason: match e {
                            TableError::EmptyFile => "empty file".into(),
                            other => other.to_string(),
                        },
                    })?;
                KbContent::Table(table)
            }
        };
        Ok(Self { descriptor, content })
    }

    /// Builds a text knowledge base from in-memory text.
    pub fn text(id: &str, summary: &str, text: &str) -> Self {
        Self {
            descriptor: KnowledgeBaseDescriptor::new(id, KbKind::Text, "<memory>", summary),
            content: KbContent::Text(TextDocument::from_text(text)),
        }
    }

    /// Builds a table knowledge base from an already parsed table.
    pub fn table(summary: &str, table: Table) -> Self {
        Self {
            descriptor: KnowledgeBaseDescriptor::new(table.name.clone(), KbKind::Table, "<memory>", summary),
            content: KbContent::Table(table),
        }
    }

    pub fn as_text(&self) -> Option<&TextDocument> {
        match &self.content {
            KbContent::Text(doc) => Some(doc),
            KbContent::Table(_) => None,
        }
    }

    pub fn as_table(&self) -> Option<&Table> {
        match &self.content {
            KbContent::Table(t) => Some(t),
            KbContent::Text(_) => None,
        }
    }

    fn summary_entry(&self) -> SummaryEntry {
        let (table, text) = match &self.content {
            KbContent::Table(t) => (Some(TableSchemaPreview::of(t)), None),
            KbContent::Text(doc) => (
                None,
                Some(TextStats {
                    documents: 1,
                    pages: doc.pages.len(),
                }),
            ),
        };
        SummaryEntry {
            id: self.descriptor.id.clone(),
            kind: self.descriptor.kind,
            summary: self.descriptor.human_summary.clone(),
            table,
            text,
        }
    }
}

/// Ordered set of knowledge bases keyed by id.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: Vec<Arc<KnowledgeBase>>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads and registers a knowledge base from disk.
    pub fn register_kb(&mut self, descriptor: KnowledgeBaseDescriptor) -> Result<(), KbError> {
        if self.index.contains_key(&descriptor.id) {
            return Err(KbError::DuplicateId(descriptor.id));
        }
        let kb = KnowledgeBase::load(descriptor)?;
        self.insert(kb)
    }

    /// Registers an already loaded knowledge base.
    pub fn insert(&mut self, kb: KnowledgeBase) -> Result<(), KbError> {
        if !is_valid_id(kb.id()) {
            return Err(KbError::InvalidId(kb.id().to_owned()));
        }
        if self.index.contains_key(kb.id()) {
            return Err(KbError::DuplicateId(kb.id().to_owned()));
        }
        self.index.insert(kb.id().to_owned(), self.entries.len());
        self.entries.push(Arc::new(kb));
        Ok(())
    }

    pub fn with(mut self, kb: KnowledgeBase) -> Result<Self, KbError> {
        self.insert(kb)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeBase> {
        self.index.get(id).map(|&i| self.entries[i].as_ref())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &KnowledgeBase> {
        self.entries.iter().map(Arc::as_ref)
    }

    /// Restricts the registry to `ids`, keeping registration order. Unknown
    /// ids are returned as the error.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Registry, String> {
        let mut out = Registry::new();
        for id in ids {
            let id = id.as_ref();
            if !self.contains(id) {
                return Err(id.to_owned());
            }
        }
        for kb in &self.entries {
            if ids.iter().any(|id| id.as_ref() == kb.id()) {
                out.index.insert(kb.id().to_owned(), out.entries.len());
                out.entries.push(Arc::clone(kb));
            }
        }
        Ok(out)
    }

    pub fn build_summary(&self) -> Result<KnowledgeBaseSummary, KbError> {
        if self.is_empty() {
            return Err(KbError::EmptyRegistry);
        }
        Ok(KnowledgeBaseSummary {
            entries: self.iter().map(KnowledgeBase::summary_entry).collect(),
        })
    }

    /// Loads a JSON manifest. Relative paths resolve against the manifest's
    /// directory.
    pub fn load_manifest(path: &Path) -> Result<Registry, KbError> {
        let text = std::fs::read_to_string(path).map_err(|e| KbError::SourceUnreadable {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let entries = parse_manifest(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut registry = Registry::new();
        for (index, entry) in entries.into_iter().enumerate() {
            let descriptor = entry.into_descriptor(base);
            registry.register_kb(descriptor).map_err(|e| KbError::ManifestEntry {
                index,
                source: Box::new(e),
            })?;
        }
        Ok(registry)
    }
}

/// One line of the manifest file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub kind: KbKind,
    pub path: PathBuf,
    pub summary: String,
}

impl ManifestEntry {
    pub fn into_descriptor(self, base: &Path) -> KnowledgeBaseDescriptor {
        let source_path = if self.path.is_absolute() {
            self.path
        } else {
            base.join(self.path)
        };
        KnowledgeBaseDescriptor {
            id: self.id,
            kind: self.kind,
            source_path,
            human_summary: self.summary,
        }
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, KbError> {
    serde_json::from_str(text).map_err(|e| KbError::ManifestSyntax(e.to_string()))
}

pub fn render_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = serde_json::to_string_pretty(entries).expect("manifest serializes");
    out.push('\n');
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub id: String,
    pub kind: KbKind,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableSchemaPreview>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<TextStats>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBaseSummary {
    pub entries: Vec<SummaryEntry>,
}

impl KnowledgeBaseSummary {
    /// Canonical JSON: pretty-printed with two-space indent, fields in
    /// declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
