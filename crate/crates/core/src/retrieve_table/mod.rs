//! Tabular retrieval: CSV tables plus a read-only SQL subset.
//!
//! The grammar is small on purpose. One table, no joins, no subqueries, no
//! mutation. Queries pass through [`parse_sql`], [`validate_sql`] and
//! [`execute_sql`]; [`generate_sql`] wraps the three around an LLM call.
//! The canonical grammar lives in `docs/sql-grammar.md`.

mod exec;
mod generate;
mod lexer;
mod parser;
mod print;
mod validate;

pub mod ast;

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{self, csv, ColumnType};

pub use ast::{Aggregate, CompareOp, Expr, Literal, Operand, OrderKey, SelectExpr, SelectItem, Selection, SqlQuery};
pub use exec::{execute_sql, like_matches, QueryResult};
pub use generate::{
    build_sql_prompt, extract_sql, generate_sql, SqlAttemptError, SqlGenerationError, SqlGenerationOptions, SqlPrompt,
    DEFAULT_SQL_RETRIES,
};
pub use parser::parse_sql;
pub use print::print_sql;
pub use validate::validate_sql;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("empty file")]
    EmptyFile,
    #[error("malformed CSV at line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

/// SQL parse failure with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at line {line}, column {column}: found {found}, expected {}", expected.join(" | "))]
pub struct SqlSyntaxError {
    pub line: usize,
    pub column: usize,
    pub found: String,
    pub expected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlValidationError {
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("type mismatch in {0}")]
    TypeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error(transparent)]
    Syntax(#[from] SqlSyntaxError),
    #[error(transparent)]
    Validation(#[from] SqlValidationError),
}

/// A typed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Ordering between two non-null values of compatible types. Integers
    /// and reals compare numerically; mismatched kinds are unordered.
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Boolean(a), Value::Boolean(b)) => Some(a.cmp(b)),
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x.partial_cmp(&y),
                _ => None,
            },
        }
    }

    /// Sort order used by ORDER BY: nulls after every value.
    pub fn sort_cmp(&self, other: &Value) -> Ordering {
        match (self.is_null(), other.is_null()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            (false, false) => self.compare(other).unwrap_or(Ordering::Equal),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => f.write_str(&format_real(*r)),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// Shortest round-tripping decimal form, always with a `.` or exponent.
pub fn format_real(r: f64) -> String {
    format!("{r:?}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub ty: ColumnType,
    pub values: Vec<Value>,
}

/// An in-memory typed table. `raw_rows` keeps the source strings for
/// previews.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    pub columns: Vec<Column>,
    pub row_count: usize,
    pub raw_rows: Vec<Vec<String>>,
}

impl Table {
    /// Builds a table from typed columns. Panics if the columns are ragged
    /// or a header repeats.
    pub fn from_columns(name: &str, columns: Vec<(String, ColumnType, Vec<Value>)>) -> Table {
        let row_count = columns.first().map_or(0, |c| c.2.len());
        assert!(columns.iter().all(|c| c.2.len() == row_count), "ragged columns");
        let headers: Vec<String> = columns.iter().map(|c| c.0.clone()).collect();
        for (i, h) in headers.iter().enumerate() {
            assert!(!headers[..i].contains(h), "duplicate header {h}");
        }
        let raw_rows = (0..row_count)
            .map(|r| {
                columns
                    .iter()
                    .map(|c| match &c.2[r] {
                        Value::Null => String::new(),
                        v => v.to_string(),
                    })
                    .collect()
            })
            .collect();
        Table {
            name: name.to_owned(),
            headers,
            columns: columns
                .into_iter()
                .map(|(_, ty, values)| Column { ty, values })
                .collect(),
            row_count,
            raw_rows,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn column_type(&self, name: &str) -> Option<ColumnType> {
        self.column_index(name).map(|i| self.columns[i].ty)
    }

    pub fn column_types(&self) -> Vec<ColumnType> {
        self.columns.iter().map(|c| c.ty).collect()
    }

    pub fn value(&self, row: usize, col: usize) -> &Value {
        &self.columns[col].values[row]
    }
}

/// Reads a CSV file into a typed table named `kb_id`.
pub fn load_csv(path: &Path, kb_id: &str) -> Result<Table, TableError> {
    let bytes = std::fs::read(path).map_err(|e| TableError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let text = String::from_utf8(bytes).map_err(|e| {
        let prefix = &e.as_bytes()[..e.utf8_error().valid_up_to()];
        TableError::MalformedCsv {
            line: 1 + prefix.iter().filter(|&&b| b == b'\n').count(),
            message: "not valid UTF-8".into(),
        }
    })?;
    parse_csv_table(&text, kb_id)
}

/// Parses CSV text (header row first) into a typed table.
pub fn parse_csv_table(text: &str, name: &str) -> Result<Table, TableError> {
    let records = csv::parse_records(text).map_err(|e| TableError::MalformedCsv {
        line: e.line,
        message: e.message,
    })?;
    let mut records = records.into_iter();
    let header = records.next().ok_or(TableError::EmptyFile)?;
    let headers = header.fields;
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(TableError::MalformedCsv {
                line: header.line,
                message: format!("duplicate header {h:?}"),
            });
        }
    }
    let mut raw_rows = Vec::new();
    for rec in records {
        if rec.fields.len() != headers.len() {
            return Err(TableError::MalformedCsv {
                line: rec.line,
                message: format!("expected {} fields, found {}", headers.len(), rec.fields.len()),
            });
        }
        raw_rows.push(rec.fields);
    }

    let columns = (0..headers.len())
        .map(|c| {
            let ty = kb::infer_column_type(raw_rows.iter().map(|r| r[c].as_str()));
            let values = raw_rows.iter().map(|r| typed_cell(&r[c], ty)).collect();
            Column { ty, values }
        })
        .collect();

    Ok(Table {
        name: name.to_owned(),
        headers,
        columns,
        row_count: raw_rows.len(),
        raw_rows,
    })
}

fn typed_cell(cell: &str, ty: ColumnType) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    match ty {
        ColumnType::Integer => kb::parse_integer_cell(cell).map_or(Value::Null, Value::Integer),
        ColumnType::Real => kb::parse_real_cell(cell).map_or(Value::Null, Value::Real),
        ColumnType::Boolean => kb::parse_bool_cell(cell).map_or(Value::Null, Value::Boolean),
        ColumnType::Text => Value::Text(cell.to_owned()),
    }
}
