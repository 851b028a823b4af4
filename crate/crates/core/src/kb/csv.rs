//! Strict RFC 4180 reader.
//!
//! Comma delimiter, double-quote quoting with `""` escapes, CRLF or LF record
//! terminators. A single trailing line terminator is allowed; anything else
//! that does not fit the grammar is reported with its 1-based line number.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSyntaxError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for CsvSyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// A parsed record together with the line it started on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub line: usize,
    pub fields: Vec<String>,
}

/// Splits `input` into records. Does not check that records share a width;
/// the caller decides what a ragged row means.
pub fn parse_records(input: &str) -> Result<Vec<Record>, CsvSyntaxError> {
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let mut records = Vec::new();
    if input.is_empty() {
        return Ok(records);
    }

    let mut chars = input.chars().peekable();
    let mut line = 1usize;
    let mut record_line = 1usize;
    let mut fields: Vec<String> = Vec::new();
    let mut field = String::new();
    // true once the current field began with a quote and the quote closed
    let mut closed_quote = false;

    loop {
        let Some(c) = chars.next() else {
            fields.push(std::mem::take(&mut field));
            records.push(Record {
                line: record_line,
                fields: std::mem::take(&mut fields),
            });
            break;
        };
        match c {
            '"' if field.is_empty() && !closed_quote => {
                // quoted field
                loop {
                    match chars.next() {
                        None => {
                            return Err(CsvSyntaxError {
                                line: record_line,
                                message: "unterminated quoted field".into(),
                            })
                        }
                        Some('"') => {
                            if chars.peek() == Some(&'"') {
                                chars.next();
                                field.push('"');
                            } else {
                                break;
                            }
                        }
                        Some('\n') => {
                            line += 1;
                            field.push('\n');
                        }
                        Some(other) => field.push(other),
                    }
                }
                closed_quote = true;
            }
            '"' => {
                return Err(CsvSyntaxError {
                    line,
                    message: "unexpected quote inside field".into(),
                })
            }
            ',' => {
                fields.push(std::mem::take(&mut field));
                closed_quote = false;
            }
            '\r' | '\n' => {
                if c == '\r' {
                    if chars.peek() == Some(&'\n') {
                        chars.next();
                    } else {
                        return Err(CsvSyntaxError {
                            line,
                            message: "bare carriage return".into(),
                        });
                    }
                }
                fields.push(std::mem::take(&mut field));
                closed_quote = false;
                records.push(Record {
                    line: record_line,
                    fields: std::mem::take(&mut fields),
                });
                line += 1;
                record_line = line;
                if chars.peek().is_none() {
                    break;
                }
            }
            other => {
                if closed_quote {
                    return Err(CsvSyntaxError {
                        line,
                        message: "characters after closing quote".into(),
                    });
                }
                field.push(other);
            }
        }
    }
    Ok(records)
}
