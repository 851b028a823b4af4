//! Canonical SQL text for an AST. `parse_sql(&print_sql(q)) == q` for every
//! query the parser can produce.

use std::fmt::Write;

use super::ast::*;
use super::format_real;
use super::lexer::keyword;

pub fn print_sql(q: &SqlQuery) -> String {
    let mut out = String::from("SELECT ");
    match &q.select {
        Selection::Star => out.push('*'),
        Selection::Items(items) => {
            let parts: Vec<String> = items.iter().map(select_item).collect();
            out.push_str(&parts.join(", "));
        }
    }
    out.push_str(" FROM ");
    out.push_str(&ident(&q.from));
    if let Some(f) = &q.filter {
        out.push_str(" WHERE ");
        out.push_str(&expr(f));
    }
    if !q.group_by.is_empty() {
        out.push_str(" GROUP BY ");
        let keys: Vec<String> = q.group_by.iter().map(|g| ident(g)).collect();
        out.push_str(&keys.join(", "));
    }
    if !q.order_by.is_empty() {
        out.push_str(" ORDER BY ");
        let keys: Vec<String> = q
            .order_by
            .iter()
            .map(|k| format!("{} {}", ident(&k.name), if k.descending { "DESC" } else { "ASC" }))
            .collect();
        out.push_str(&keys.join(", "));
    }
    if let Some(n) = q.limit {
        let _ = write!(out, " LIMIT {n}");
    }
    out
}

fn select_item(item: &SelectItem) -> String {
    let mut s = match &item.expr {
        SelectExpr::Column(c) => ident(c),
        SelectExpr::Aggregate(a) => aggregate_text(a),
    };
    if let Some(alias) = &item.alias {
        s.push_str(" AS ");
        s.push_str(&ident(alias));
    }
    s
}

/// Printed form of an aggregate, also used as its default output header.
pub fn aggregate_text(a: &Aggregate) -> String {
    match a.column() {
        None => "COUNT(*)".to_owned(),
        Some(c) => format!("{}({})", a.function_name(), ident(c)),
    }
}

/// Identifier, double-quoted unless it is a plain non-keyword word.
pub fn ident(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && keyword(name).is_none();
    if plain {
        name.to_owned()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

pub fn literal(l: &Literal) -> String {
    match l {
        Literal::Null => "NULL".into(),
        Literal::Boolean(true) => "TRUE".into(),
        Literal::Boolean(false) => "FALSE".into(),
        Literal::Integer(i) => i.to_string(),
        Literal::Real(r) => format_real(*r),
        Literal::Text(s) => quote_str(s),
    }
}

fn quote_str(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn operand(o: &Operand) -> String {
    match o {
        Operand::Column(c) => ident(c),
        Operand::Literal(l) => literal(l),
    }
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Compare { op, left, right } => {
            format!("{} {} {}", operand(left), op.symbol(), operand(right))
        }
        Expr::Like {
            operand: o,
            pattern,
            negated,
        } => format!(
            "{} {}LIKE {}",
            operand(o),
            if *negated { "NOT " } else { "" },
            quote_str(pattern)
        ),
        Expr::InList {
            operand: o,
            list,
            negated,
        } => {
            let items: Vec<String> = list.iter().map(literal).collect();
            format!(
                "{} {}IN ({})",
                operand(o),
                if *negated { "NOT " } else { "" },
                items.join(", ")
            )
        }
        Expr::IsNull { operand: o, negated } => format!("{} IS {}NULL", operand(o), if *negated { "NOT " } else { "" }),
        Expr::And(a, b) => format!("{} AND {}", nested(a), nested(b)),
        Expr::Or(a, b) => format!("{} OR {}", nested(a), nested(b)),
        Expr::Not(inner) => format!("NOT {}", nested(inner)),
    }
}

fn nested(e: &Expr) -> String {
    match e {
        Expr::And(..) | Expr::Or(..) => format!("({})", expr(e)),
        _ => expr(e),
    }
}
