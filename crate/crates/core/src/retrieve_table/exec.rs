//! Query execution: filter, group, aggregate, order, limit.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::print;
use super::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub row_count: usize,
}

impl QueryResult {
    /// Plain-text table with space-padded columns.
    pub fn render_aligned(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Value::to_string).collect())
            .collect();
        let widths: Vec<usize> = self
            .headers
            .iter()
            .enumerate()
            .map(|(i, h)| {
                cells
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain([h.chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |row: &[String]| {
            let padded: Vec<String> = row.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            padded.join(" | ").trim_end().to_owned()
        };
        let mut out = line(&self.headers);
        out.push('\n');
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w.max(1))).collect();
        out.push_str(&rule.join("-+-"));
        for row in &cells {
            out.push('\n');
            out.push_str(&line(row));
        }
        out
    }
}

/// Runs a validated query. Behavior on an unvalidated query is unspecified
/// but never panics on well-formed tables.
pub fn execute_sql(query: &SqlQuery, table: &Table) -> QueryResult {
    let selected: Vec<usize> = (0..table.row_count)
        .filter(|&r| query.filter.as_ref().is_none_or(|f| eval(f, table, r) == Some(true)))
        .collect();

    let (headers, mut rows) = if query.is_aggregate() {
        aggregate_rows(query, table, &selected)
    } else {
        plain_rows(query, table, &selected)
    };

    if !query.order_by.is_empty() {
        // stable: ties keep input order
        rows.sort_by(|a, b| {
            for (i, key) in query.order_by.iter().enumerate() {
                let ord = a.1[i].sort_cmp(&b.1[i]);
                let ord = if key.descending { ord.reverse() } else { ord };
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        });
    }

    let mut rows: Vec<Vec<Value>> = rows.into_iter().map(|(out, _)| out).collect();
    if let Some(limit) = query.limit {
        rows.truncate(usize::try_from(limit).unwrap_or(usize::MAX));
    }
    QueryResult {
        headers,
        row_count: rows.len(),
        rows,
    }
}

type KeyedRow = (Vec<Value>, Vec<Value>);

fn item_header(item: &SelectItem) -> String {
    if let Some(a) = &item.alias {
        return a.clone();
    }
    match &item.expr {
        SelectExpr::Column(c) => c.clone(),
        SelectExpr::Aggregate(a) => print::aggregate_text(a),
    }
}

fn alias_index(query: &SqlQuery, name: &str) -> Option<usize> {
    match &query.select {
        Selection::Star => None,
        Selection::Items(items) => items.iter().position(|i| i.alias.as_deref() == Some(name)),
    }
}

fn plain_rows(query: &SqlQuery, table: &Table, selected: &[usize]) -> (Vec<String>, Vec<KeyedRow>) {
    let (headers, cols): (Vec<String>, Vec<usize>) = match &query.select {
        Selection::Star => (table.headers.clone(), (0..table.headers.len()).collect()),
        Selection::Items(items) => items
            .iter()
            .map(|i| {
                let SelectExpr::Column(c) = &i.expr else {
                    unreachable!("plain query has no aggregates")
                };
                (item_header(i), table.column_index(c).unwrap_or(0))
            })
            .unzip(),
    };
    let key_sources: Vec<KeySource> = query
        .order_by
        .iter()
        .map(|k| match alias_index(query, &k.name) {
            Some(i) => KeySource::Output(i),
            None => KeySource::Column(table.column_index(&k.name).unwrap_or(0)),
        })
        .collect();
    let rows = selected
        .iter()
        .map(|&r| {
            let out: Vec<Value> = cols.iter().map(|&c| table.value(r, c).clone()).collect();
            let keys = key_sources
                .iter()
                .map(|s| match *s {
                    KeySource::Output(i) => out[i].clone(),
                    KeySource::Column(c) => table.value(r, c).clone(),
                })
                .collect();
            (out, keys)
        })
        .collect();
    (headers, rows)
}

enum KeySource {
    Output(usize),
    Column(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum GroupKey {
    Null,
    Boolean(bool),
    Integer(i64),
    Real(u64),
    Text(String),
}

fn group_key(v: &Value) -> GroupKey {
    match v {
        Value::Null => GroupKey::Null,
        Value::Boolean(b) => GroupKey::Boolean(*b),
        Value::Integer(i) => GroupKey::Integer(*i),
        Value::Real(r) => GroupKey::Real(if *r == 0.0 { 0 } else { r.to_bits() }),
        Value::Text(s) => GroupKey::Text(s.clone()),
    }
}

fn aggregate_rows(query: &SqlQuery, table: &Table, selected: &[usize]) -> (Vec<String>, Vec<KeyedRow>) {
    let Selection::Items(items) = &query.select else {
        unreachable!("aggregate query never selects *")
    };
    let key_cols: Vec<usize> = query
        .group_by
        .iter()
        .map(|g| table.column_index(g).unwrap_or(0))
        .collect();

    let mut groups: Vec<Vec<usize>> = Vec::new();
    if key_cols.is_empty() {
        groups.push(selected.to_vec());
    } else {
        let mut index: HashMap<Vec<GroupKey>, usize> = HashMap::new();
        for &r in selected {
            let key: Vec<GroupKey> = key_cols.iter().map(|&c| group_key(table.value(r, c))).collect();
            let g = *index.entry(key).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(r);
        }
    }

    let headers = items.iter().map(item_header).collect();
    let rows = groups
        .iter()
        .map(|rows| {
            let out: Vec<Value> = items
                .iter()
                .map(|item| match &item.expr {
                    SelectExpr::Column(c) => {
                        let ci = table.column_index(c).unwrap_or(0);
                        rows.first().map_or(Value::Null, |&r| table.value(r, ci).clone())
                    }
                    SelectExpr::Aggregate(a) => aggregate(a, table, rows),
                })
                .collect();
            let keys = query
                .order_by
                .iter()
                .map(|k| match alias_index(query, &k.name) {
                    Some(i) => out[i].clone(),
                    None => {
                        let ci = table.column_index(&k.name).unwrap_or(0);
                        rows.first().map_or(Value::Null, |&r| table.value(r, ci).clone())
                    }
                })
                .collect();
            (out, keys)
        })
        .collect();
    (headers, rows)
}

fn aggregate(agg: &Aggregate, table: &Table, rows: &[usize]) -> Value {
    let Some(col) = agg.column() else {
        return Value::Integer(rows.len() as i64);
    };
    let ci = table.column_index(col).unwrap_or(0);
    let values = rows.iter().map(|&r| table.value(r, ci)).filter(|v| !v.is_null());
    match agg {
        Aggregate::CountStar => unreachable!(),
        Aggregate::Count(_) => Value::Integer(values.count() as i64),
        Aggregate::Sum(_) => sum(values),
        Aggregate::Avg(_) => {
            let (total, n) = values.fold((0.0, 0usize), |(s, n), v| (s + numeric(v), n + 1));
            if n == 0 {
                Value::Null
            } else {
                Value::Real(total / n as f64)
            }
        }
        Aggregate::Min(_) => values
            .reduce(|a, b| if b.sort_cmp(a) == Ordering::Less { b } else { a })
            .cloned()
            .unwrap_or(Value::Null),
        Aggregate::Max(_) => values
            .reduce(|a, b| if b.sort_cmp(a) == Ordering::Greater { b } else { a })
            .cloned()
            .unwrap_or(Value::Null),
    }
}

fn numeric(v: &Value) -> f64 {
    match v {
        Value::Integer(i) => *i as f64,
        Value::Real(r) => *r,
        _ => 0.0,
    }
}

/// Integer sums stay integral when the exact total fits in i64; otherwise
/// the sum is recomputed in floating point.
fn sum<'a>(values: impl Iterator<Item = &'a Value> + Clone) -> Value {
    let mut any = false;
    let mut int_total: i128 = 0;
    let mut all_int = true;
    for v in values.clone() {
        any = true;
        match v {
            Value::Integer(i) => int_total += i128::from(*i),
            _ => all_int = false,
        }
    }
    if !any {
        return Value::Null;
    }
    match i64::try_from(int_total) {
        Ok(t) if all_int => Value::Integer(t),
        _ => Value::Real(values.map(numeric).sum()),
    }
}

fn operand_value<'a>(o: &'a Operand, table: &'a Table, row: usize) -> Value {
    match o {
        Operand::Column(c) => table
            .column_index(c)
            .map_or(Value::Null, |i| table.value(row, i).clone()),
        Operand::Literal(l) => literal_value(l),
    }
}

pub(crate) fn literal_value(l: &Literal) -> Value {
    match l {
        Literal::Null => Value::Null,
        Literal::Boolean(b) => Value::Boolean(*b),
        Literal::Integer(i) => Value::Integer(*i),
        Literal::Real(r) => Value::Real(*r),
        Literal::Text(s) => Value::Text(s.clone()),
    }
}

/// Three-valued evaluation; `None` is SQL's unknown.
fn eval(e: &Expr, table: &Table, row: usize) -> Option<bool> {
    match e {
        Expr::Compare { op, left, right } => {
            let a = operand_value(left, table, row);
            let b = operand_value(right, table, row);
            if a.is_null() || b.is_null() {
                return None;
            }
            let ord = a.compare(&b)?;
            Some(match op {
                CompareOp::Eq => ord == Ordering::Equal,
                CompareOp::NotEq => ord != Ordering::Equal,
                CompareOp::Lt => ord == Ordering::Less,
                CompareOp::LtEq => ord != Ordering::Greater,
                CompareOp::Gt => ord == Ordering::Greater,
                CompareOp::GtEq => ord != Ordering::Less,
            })
        }
        Expr::Like {
            operand,
            pattern,
            negated,
        } => match operand_value(operand, table, row) {
            Value::Text(s) => Some(like_matches(&s, pattern) != *negated),
            _ => None,
        },
        Expr::InList { operand, list, negated } => {
            let v = operand_value(operand, table, row);
            if v.is_null() {
                return None;
            }
            let mut saw_null = false;
            for l in list {
                let item = literal_value(l);
                if item.is_null() {
                    saw_null = true;
                } else if v.compare(&item) == Some(Ordering::Equal) {
                    return Some(!negated);
                }
            }
            if saw_null {
                None
            } else {
                Some(*negated)
            }
        }
        Expr::IsNull { operand, negated } => Some(operand_value(operand, table, row).is_null() != *negated),
        Expr::And(a, b) => match (eval(a, table, row), eval(b, table, row)) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        Expr::Or(a, b) => match (eval(a, table, row), eval(b, table, row)) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        Expr::Not(inner) => eval(inner, table, row).map(|b| !b),
    }
}

/// Case-insensitive LIKE: `%` matches any run of characters, `_` exactly
/// one.
pub fn like_matches(text: &str, pattern: &str) -> bool {
    let t: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let p: Vec<char> = pattern.chars().flat_map(char::to_lowercase).collect();
    // greedy matcher with single-star backtracking
    let (mut ti, mut pi) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '%' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && (p[pi] == '_' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '%')
}
