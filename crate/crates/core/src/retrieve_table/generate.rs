//! LLM-backed SQL generation with parse/validate feedback.

use std::fmt::Write;

use thiserror::Error;

use super::ast::SqlQuery;
use super::print::ident;
use super::{parse_sql, validate_sql, SqlError, Table};
use crate::kb::TableSchemaPreview;
use crate::llm::{ChatRequest, LlmClient, LlmError};

/// Retries after the first attempt; three completions in total.
pub const DEFAULT_SQL_RETRIES: usize = 2;

const GRAMMAR: &str = "\
query     := SELECT select FROM table [WHERE cond] [GROUP BY col {, col}]
             [ORDER BY name [ASC|DESC] {, name [ASC|DESC]}] [LIMIT n] [;]
select    := * | item {, item}
item      := (col | agg) [AS alias]
agg       := COUNT(*) | COUNT(col) | SUM(col) | AVG(col) | MIN(col) | MAX(col)
cond      := cond OR cond | cond AND cond | NOT cond | ( cond )
           | operand (= | != | < | <= | > | >=) operand
           | operand [NOT] LIKE 'pattern' | operand [NOT] IN (literal {, literal})
           | operand IS [NOT] NULL
operand   := col | literal
literal   := integer | real | 'text' | TRUE | FALSE | NULL
Identifiers that are not plain words must be written in double quotes.
With GROUP BY, select at least one grouping column; every plain column in
the select list must be grouped. No joins, subqueries, or data changes.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlPrompt {
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SqlAttemptError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Sql(#[from] SqlError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("SQL generation failed after {attempts} attempt(s): {last}")]
pub struct SqlGenerationError {
    pub attempts: usize,
    pub last: SqlAttemptError,
    /// Text of the last completion, when one was received.
    pub last_sql: Option<String>,
}

/// Builds the generation prompt. `feedback` carries the previous attempt and
/// the reason it was rejected.
pub fn build_sql_prompt(
    subquery: &str,
    preview: &TableSchemaPreview,
    table_name: &str,
    feedback: Option<(&str, &str)>,
) -> SqlPrompt {
    let mut system = String::new();
    system.push_str(
        "You translate questions about a CSV table into one read-only SQL query.\n\
         Reply with the SQL statement only.\n\n",
    );
    let _ = writeln!(system, "Table: {}", ident(table_name));
    let _ = writeln!(system, "Rows: {}", preview.row_count);
    system.push_str("Columns:\n");
    for (h, t) in preview.headers.iter().zip(&preview.inferred_types) {
        let _ = writeln!(system, "  {} ({t})", ident(h));
    }
    let _ = writeln!(system, "First {} rows (CSV):", preview.preview_rows.len());
    let _ = writeln!(system, "{}", preview.headers.join(","));
    for row in &preview.preview_rows {
        let _ = writeln!(system, "{}", row.join(","));
    }
    system.push_str("\nGrammar:\n");
    system.push_str(GRAMMAR);
    system.push_str("\nText equality is case-sensitive; LIKE is case-insensitive with % and _ wildcards.");

    let mut user = format!("Question: {subquery}");
    if let Some((previous, error)) = feedback {
        let _ = write!(
            user,
            "\n\nYour previous query was rejected.\nQuery: {previous}\nError: {error}\n\
             Return a corrected query."
        );
    }
    SqlPrompt {
        system_text: system,
        user_text: user,
    }
}

/// Pulls the SQL statement out of a completion: the first fenced code block
/// if there is one, then everything from the first SELECT keyword up to the
/// first unquoted semicolon.
pub fn extract_sql(raw: &str) -> String {
    let mut text = raw;
    if let Some(open) = text.find("```") {
        let after = &text[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        // a fence opened and closed on one line has no language tag
        let same_line = after[..body_start].find("```");
        text = match same_line {
            Some(close) => &after[..close],
            None => {
                let body = &after[body_start..];
                &body[..body.find("```").unwrap_or(body.len())]
            }
        };
    }
    if let Some(pos) = find_select(text) {
        text = &text[pos..];
    }
    let mut quote: Option<char> = None;
    for (i, c) in text.char_indices() {
        match (quote, c) {
            (None, '\'' | '"') => quote = Some(c),
            (Some(q), c) if c == q => quote = None,
            (None, ';') => return text[..=i].trim().to_owned(),
            _ => {}
        }
    }
    text.trim().to_owned()
}

fn find_select(text: &str) -> Option<usize> {
    let lower = text.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    lower
        .match_indices("select")
        .map(|(i, _)| i)
        .find(|&i| (i == 0 || !word(bytes[i - 1])) && bytes.get(i + 6).is_none_or(|&b| !word(b)))
}

#[derive(Debug, Clone)]
pub struct SqlGenerationOptions {
    pub model_id: String,
    pub max_retries: usize,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl SqlGenerationOptions {
    pub fn new(model_id: &str) -> Self {
        Self {
            model_id: model_id.to_owned(),
            max_retries: DEFAULT_SQL_RETRIES,
            max_tokens: 512,
            temperature: 0.0,
        }
    }
}

/// Asks the model for SQL answering `subquery` over `table`; parse or
/// validation failures are fed back for up to `max_retries` more attempts.
pub fn generate_sql(
    subquery: &str,
    table: &Table,
    llm: &dyn LlmClient,
    options: &SqlGenerationOptions,
) -> Result<SqlQuery, SqlGenerationError> {
    let preview = TableSchemaPreview::of(table);
    let mut feedback: Option<(String, String)> = None;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let prompt = build_sql_prompt(
            subquery,
            &preview,
            &table.name,
            feedback.as_ref().map(|(s, e)| (s.as_str(), e.as_str())),
        );
        let mut request = ChatRequest::new(&options.model_id, prompt.system_text, prompt.user_text);
        request.temperature = options.temperature;
        request.max_tokens = options.max_tokens;
        let response = llm.complete(&request).map_err(|e| SqlGenerationError {
            attempts,
            last: e.into(),
            last_sql: None,
        })?;
        let sql = extract_sql(&response.text);
        let checked = parse_sql(&sql)
            .map_err(SqlError::from)
            .and_then(|q| validate_sql(q, table).map_err(SqlError::from));
        match checked {
            Ok(q) => return Ok(q),
            Err(e) if attempts > options.max_retries => {
                return Err(SqlGenerationError {
                    attempts,
                    last: e.into(),
                    last_sql: Some(sql),
                })
            }
            Err(e) => feedback = Some((sql, e.to_string())),
        }
    }
}
