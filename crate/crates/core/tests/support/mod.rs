//! Independent reference implementations and random input generators shared
//! by the integration tests. Nothing here calls into the code under test
//! except to build inputs.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::path::PathBuf;

use crossrag_core::harness::{RunRecord, Runner, Scenario};
use crossrag_core::kb::{ColumnType, KbKind, KnowledgeBase, KnowledgeBaseDescriptor, Registry};
use crossrag_core::llm::{RecordingClient, ReplayBackend, ReplayEntry, ScriptRule, ScriptedBackend};
use crossrag_core::metrics::porter_stem;
use crossrag_core::retrieve_table::{
    Aggregate, CompareOp, Expr, Literal, Operand, OrderKey, SelectExpr, SelectItem, Selection, SqlQuery, Table, Value,
};
use crossrag_core::router::{RoutingPlan, Subquery};
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// ---------------------------------------------------------------- tokens

/// Lowercased maximal alphanumeric runs, written without iterator adapters.
pub fn naive_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            for l in c.to_lowercase() {
                cur.push(l);
            }
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

// ---------------------------------------------------------------- BLEU

fn count_ngram(tokens: &[String], gram: &[String]) -> usize {
    let mut n = 0;
    let mut i = 0;
    while i + gram.len() <= tokens.len() {
        if &tokens[i..i + gram.len()] == gram {
            n += 1;
        }
        i += 1;
    }
    n
}

/// Clipped precision by counting every candidate n-gram position against
/// both sequences.
pub fn oracle_precision(cand: &[String], reference: &[String], n: usize) -> f64 {
    let total = cand.len() + 1 - n;
    let mut seen: Vec<&[String]> = Vec::new();
    let mut clipped = 0;
    for i in 0..total {
        let gram = &cand[i..i + n];
        if seen.contains(&gram) {
            continue;
        }
        seen.push(gram);
        let c = count_ngram(cand, gram);
        let r = count_ngram(reference, gram);
        clipped += if c < r { c } else { r };
    }
    clipped as f64 / total as f64
}

pub fn oracle_bleu(candidate: &str, reference: &str) -> f64 {
    let cand = naive_tokens(candidate);
    let reference = naive_tokens(reference);
    if cand.is_empty() {
        return 0.0;
    }
    let orders = if cand.len() < 4 { cand.len() } else { 4 };
    let mut product = 1.0f64;
    let mut logs = 0.0;
    for n in 1..=orders {
        let mut p = oracle_precision(&cand, &reference, n);
        if p == 0.0 {
            p = 1e-9;
        }
        product *= p;
        logs += p.ln();
    }
    let _ = product;
    let geo = (logs / orders as f64).exp();
    let c = cand.len() as f64;
    let r = reference.len() as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * geo
}

// ---------------------------------------------------------------- METEOR

/// Enumerates every one-to-one alignment and keeps the best by
/// (exact, stem, synonym) counts, then fewest chunks.
pub fn oracle_meteor(candidate: &str, reference: &str, synonyms: &[(&str, &str)]) -> f64 {
    let cand = naive_tokens(candidate);
    let reference = naive_tokens(reference);
    let stage = |c: &str, r: &str| -> Option<usize> {
        if c == r {
            Some(0)
        } else if porter_stem(c) == porter_stem(r) {
            Some(1)
        } else if synonyms.iter().any(|&(a, b)| (a == c && b == r) || (a == r && b == c)) {
            Some(2)
        } else {
            None
        }
    };
    let mut best: Option<([usize; 3], usize)> = None;
    let mut assign: Vec<Option<usize>> = vec![None; cand.len()];
    let mut used = vec![false; reference.len()];

    fn walk(
        i: usize,
        cand: &[String],
        reference: &[String],
        stage: &dyn Fn(&str, &str) -> Option<usize>,
        assign: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut Option<([usize; 3], usize)>,
    ) {
        if i == cand.len() {
            let mut counts = [0usize; 3];
            let mut chunks = 0;
            for k in 0..assign.len() {
                if let Some(j) = assign[k] {
                    counts[stage(&cand[k], &reference[j]).unwrap()] += 1;
                    let continues = k > 0 && assign[k - 1].is_some() && assign[k - 1].unwrap() + 1 == j;
                    if !continues {
                        chunks += 1;
                    }
                }
            }
            let better = match best {
                None => true,
                Some((bc, bch)) => counts > *bc || (counts == *bc && chunks < *bch),
            };
            if better {
                *best = Some((counts, chunks));
            }
            return;
        }
        assign[i] = None;
        walk(i + 1, cand, reference, stage, assign, used, best);
        for j in 0..reference.len() {
            if !used[j] && stage(&cand[i], &reference[j]).is_some() {
                used[j] = true;
                assign[i] = Some(j);
                walk(i + 1, cand, reference, stage, assign, used, best);
                assign[i] = None;
                used[j] = false;
            }
        }
    }
    walk(0, &cand, &reference, &stage, &mut assign, &mut used, &mut best);
    let (counts, chunks) = best.unwrap();
    let m = (counts[0] + counts[1] + counts[2]) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks as f64 / m).powi(3))
}

/// Twenty candidate/reference pairs for metric golden checks.
pub const GOLDEN_PAIRS: [(&str, &str); 20] = [
    ("the cat sat on the mat", "the cat is on the mat"),
    ("replace the filter", "replace the filter"),
    ("replacing filters", "replace filter"),
    ("alpha beta", "gamma delta"),
    ("the pump is offline now", "the pump is offline now"),
    (
        "Close valve V-12 before removing the pump.",
        "Close valve V-12, then remove the pump.",
    ),
    ("Torque the bolts to 45 Nm.", "Tighten the bolts to 45 Nm."),
    (
        "There are 14 F-200 filters in stock.",
        "14 units of filter F-200 are in stock.",
    ),
    ("a b", "a x a b"),
    ("filter", "filters filter"),
    ("the the the the", "the cat the mat"),
    ("Stock: 3 belts", "Belt B-7 stock is 3."),
    (
        "drain the oil and replace the oil filter",
        "replace the oil filter after draining the oil",
    ),
    ("machines 1 and 3 are running hot", "machine 1 and machine 3 run hot"),
    (
        "operating temperature above 90 degrees",
        "temperature exceeds 90 degrees during operation",
    ),
    ("", "any reference"),
    ("x", "x y z w v"),
    ("check check check", "check"),
    (
        "the seal must be inspected weekly and replaced yearly",
        "inspect the seal weekly; replace it yearly",
    ),
    (
        "The average temperature of hot machines is 97.0",
        "Hot machines average 97 degrees.",
    ),
];

// ---------------------------------------------------------------- BM25

pub fn oracle_bm25(query: &[String], docs: &[Vec<String>], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let mut total_len = 0.0;
    for d in docs {
        total_len += d.len() as f64;
    }
    let avgdl = total_len / n;
    let mut scores = Vec::new();
    for d in docs {
        let mut s = 0.0;
        for q in query {
            let mut tf = 0.0;
            for t in d {
                if t == q {
                    tf += 1.0;
                }
            }
            if tf == 0.0 {
                continue;
            }
            let mut df = 0.0;
            for other in docs {
                if other.contains(q) {
                    df += 1.0;
                }
            }
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            let len_norm = if avgdl == 0.0 { 0.0 } else { d.len() as f64 / avgdl };
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_norm));
        }
        scores.push(s);
    }
    scores
}

// ---------------------------------------------------------------- SQL

fn num(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Real(r) => Some(*r),
        _ => None,
    }
}

/// `None` for unknown (a null operand or incomparable kinds).
fn oracle_cmp(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Null, _) | (_, Value::Null) => None,
        (Value::Integer(x), Value::Integer(y)) => Some(x.cmp(y)),
        (Value::Text(x), Value::Text(y)) => Some(x.as_bytes().cmp(y.as_bytes())),
        (Value::Boolean(x), Value::Boolean(y)) => Some((*x as u8).cmp(&(*y as u8))),
        _ => match (num(a), num(b)) {
            (Some(x), Some(y)) => x.partial_cmp(&y),
            _ => None,
        },
    }
}

fn lit(l: &Literal) -> Value {
    match l {
        Literal::Null => Value::Null,
        Literal::Boolean(b) => Value::Boolean(*b),
        Literal::Integer(i) => Value::Integer(*i),
        Literal::Real(r) => Value::Real(*r),
        Literal::Text(s) => Value::Text(s.clone()),
    }
}

fn cell(table: &Table, row: usize, name: &str) -> Value {
    let c = table.headers.iter().position(|h| h == name).unwrap();
    table.value(row, c).clone()
}

fn operand(o: &Operand, table: &Table, row: usize) -> Value {
    match o {
        Operand::Column(c) => cell(table, row, c),
        Operand::Literal(l) => lit(l),
    }
}

/// Recursive LIKE over characters, both sides lowercased.
fn like(text: &[char], pat: &[char]) -> bool {
    match pat.first() {
        None => text.is_empty(),
        Some('%') => (0..=text.len()).any(|k| like(&text[k..], &pat[1..])),
        Some('_') => !text.is_empty() && like(&text[1..], &pat[1..]),
        Some(c) => text.first() == Some(c) && like(&text[1..], &pat[1..]),
    }
}

fn lower_chars(s: &str) -> Vec<char> {
    s.to_lowercase().chars().collect()
}

/// Kleene three-valued logic encoded as 0 = false, 1 = unknown, 2 = true.
fn truth(e: &Expr, table: &Table, row: usize) -> u8 {
    let of = |b: bool| if b { 2 } else { 0 };
    match e {
        Expr::Compare { op, left, right } => {
            let (a, b) = (operand(left, table, row), operand(right, table, row));
            match oracle_cmp(&a, &b) {
                None => 1,
                Some(o) => of(match op {
                    CompareOp::Eq => o.is_eq(),
                    CompareOp::NotEq => o.is_ne(),
                    CompareOp::Lt => o.is_lt(),
                    CompareOp::LtEq => o.is_le(),
                    CompareOp::Gt => o.is_gt(),
                    CompareOp::GtEq => o.is_ge(),
                }),
            }
        }
        Expr::Like {
            operand: o,
            pattern,
            negated,
        } => match operand(o, table, row) {
            Value::Text(s) => of(like(&lower_chars(&s), &lower_chars(pattern)) != *negated),
            _ => 1,
        },
        Expr::InList {
            operand: o,
            list,
            negated,
        } => {
            let v = operand(o, table, row);
            if v == Value::Null {
                return 1;
            }
            let hits = list
                .iter()
                .filter(|l| oracle_cmp(&v, &lit(l)) == Some(Ordering::Equal))
                .count();
            let nulls = list.iter().filter(|l| matches!(l, Literal::Null)).count();
            if hits > 0 {
                of(!negated)
            } else if nulls > 0 {
                1
            } else {
                of(*negated)
            }
        }
        Expr::IsNull { operand: o, negated } => of((operand(o, table, row) == Value::Null) != *negated),
        Expr::And(a, b) => truth(a, table, row).min(truth(b, table, row)),
        Expr::Or(a, b) => truth(a, table, row).max(truth(b, table, row)),
        Expr::Not(a) => 2 - truth(a, table, row),
    }
}

fn same_group_value(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => true,
        _ => oracle_cmp(a, b) == Some(Ordering::Equal),
    }
}

fn agg_header(a: &Aggregate) -> String {
    match a {
        Aggregate::CountStar => "COUNT(*)".into(),
        Aggregate::Count(c) => format!("COUNT({c})"),
        Aggregate::Sum(c) => format!("SUM({c})"),
        Aggregate::Avg(c) => format!("AVG({c})"),
        Aggregate::Min(c) => format!("MIN({c})"),
        Aggregate::Max(c) => format!("MAX({c})"),
    }
}

fn oracle_aggregate(a: &Aggregate, table: &Table, rows: &[usize]) -> Value {
    let col = match a {
        Aggregate::CountStar => return Value::Integer(rows.len() as i64),
        Aggregate::Count(c) | Aggregate::Sum(c) | Aggregate::Avg(c) | Aggregate::Min(c) | Aggregate::Max(c) => c,
    };
    let mut vals = Vec::new();
    for &r in rows {
        let v = cell(table, r, col);
        if v != Value::Null {
            vals.push(v);
        }
    }
    match a {
        Aggregate::Count(_) => Value::Integer(vals.len() as i64),
        Aggregate::Sum(_) => {
            if vals.is_empty() {
                return Value::Null;
            }
            if vals.iter().all(|v| matches!(v, Value::Integer(_))) {
                let mut t: i128 = 0;
                for v in &vals {
                    if let Value::Integer(i) = v {
                        t += *i as i128;
                    }
                }
                if t >= i64::MIN as i128 && t <= i64::MAX as i128 {
                    return Value::Integer(t as i64);
                }
            }
            let mut s = 0.0;
            for v in &vals {
                s += num(v).unwrap();
            }
            Value::Real(s)
        }
        Aggregate::Avg(_) => {
            if vals.is_empty() {
                return Value::Null;
            }
            let mut s = 0.0;
            for v in &vals {
                s += num(v).unwrap();
            }
            Value::Real(s / vals.len() as f64)
        }
        Aggregate::Min(_) | Aggregate::Max(_) => {
            let want = if matches!(a, Aggregate::Min(_)) {
                Ordering::Less
            } else {
                Ordering::Greater
            };
            let mut best: Option<Value> = None;
            for v in vals {
                best = match best {
                    None => Some(v),
                    Some(b) => Some(if oracle_cmp(&v, &b) == Some(want) { v } else { b }),
                };
            }
            best.unwrap_or(Value::Null)
        }
        Aggregate::CountStar => unreachable!(),
    }
}

/// Ascending order with nulls last; `descending` reverses everything.
fn order_cmp(a: &Value, b: &Value, descending: bool) -> Ordering {
    let asc = match (a, b) {
        (Value::Null, Value::Null) => Ordering::Equal,
        (Value::Null, _) => Ordering::Greater,
        (_, Value::Null) => Ordering::Less,
        _ => oracle_cmp(a, b).unwrap_or(Ordering::Equal),
    };
    if descending {
        asc.reverse()
    } else {
        asc
    }
}

/// Row-at-a-time interpreter: returns headers and rows.
pub fn oracle_execute(q: &SqlQuery, table: &Table) -> (Vec<String>, Vec<Vec<Value>>) {
    let mut kept = Vec::new();
    for r in 0..table.row_count {
        if q.filter.as_ref().is_none_or(|f| truth(f, table, r) == 2) {
            kept.push(r);
        }
    }
    let items: Vec<SelectItem> = match &q.select {
        Selection::Star => table
            .headers
            .iter()
            .map(|h| SelectItem {
                expr: SelectExpr::Column(h.clone()),
                alias: None,
            })
            .collect(),
        Selection::Items(items) => items.clone(),
    };
    let headers: Vec<String> = items
        .iter()
        .map(|i| match (&i.alias, &i.expr) {
            (Some(a), _) => a.clone(),
            (None, SelectExpr::Column(c)) => c.clone(),
            (None, SelectExpr::Aggregate(a)) => agg_header(a),
        })
        .collect();
    let aggregate = !q.group_by.is_empty() || items.iter().any(|i| matches!(i.expr, SelectExpr::Aggregate(_)));

    // each output row carries the representative input row used for
    // ORDER BY names that are not aliases
    let mut out: Vec<(Vec<Value>, Option<usize>)> = Vec::new();
    if aggregate {
        let mut groups: Vec<(Vec<Value>, Vec<usize>)> = Vec::new();
        if q.group_by.is_empty() {
            groups.push((Vec::new(), kept.clone()));
        } else {
            for &r in &kept {
                let key: Vec<Value> = q.group_by.iter().map(|g| cell(table, r, g)).collect();
                let mut found = false;
                for g in groups.iter_mut() {
                    if g.0.iter().zip(&key).all(|(a, b)| same_group_value(a, b)) {
                        g.1.push(r);
                        found = true;
                        break;
                    }
                }
                if !found {
                    groups.push((key, vec![r]));
                }
            }
        }
        for (_, rows) in &groups {
            let row: Vec<Value> = items
                .iter()
                .map(|i| match &i.expr {
                    SelectExpr::Column(c) => rows.first().map_or(Value::Null, |&r| cell(table, r, c)),
                    SelectExpr::Aggregate(a) => oracle_aggregate(a, table, rows),
                })
                .collect();
            out.push((row, rows.first().copied()));
        }
    } else {
        for &r in &kept {
            let row = items
                .iter()
                .map(|i| match &i.expr {
                    SelectExpr::Column(c) => cell(table, r, c),
                    SelectExpr::Aggregate(_) => unreachable!(),
                })
                .collect();
            out.push((row, Some(r)));
        }
    }

    let key_of = |row: &(Vec<Value>, Option<usize>), k: &OrderKey| -> Value {
        if let Some(pos) = items.iter().position(|i| i.alias.as_deref() == Some(k.name.as_str())) {
            return row.0[pos].clone();
        }
        row.1.map_or(Value::Null, |r| cell(table, r, &k.name))
    };
    // insertion sort: stable by construction
    for i in 1..out.len() {
        let mut j = i;
        while j > 0 {
            let mut ord = Ordering::Equal;
            for k in &q.order_by {
                ord = order_cmp(&key_of(&out[j - 1], k), &key_of(&out[j], k), k.descending);
                if ord != Ordering::Equal {
                    break;
                }
            }
            if ord == Ordering::Greater {
                out.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    let mut rows: Vec<Vec<Value>> = out.into_iter().map(|(r, _)| r).collect();
    if let Some(l) = q.limit {
        while rows.len() as u64 > l {
            rows.pop();
        }
    }
    (headers, rows)
}

pub fn values_close(a: &[Vec<Value>], b: &[Vec<Value>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.len() == y.len()
                && x.iter().zip(y).all(|(p, q)| match (p, q) {
                    (Value::Real(u), Value::Real(v)) => (u - v).abs() <= 1e-9 * (1.0 + u.abs().max(v.abs())),
                    _ => p == q,
                })
        })
}

// ---------------------------------------------------------------- random SQL inputs

const TEXTS: [&str; 8] = ["alpha", "Beta", "gamma", "ALPHA", "a_b", "x%y", "delta", "beta"];
const REALS: [f64; 7] = [-1.5, 0.0, 0.25, 2.0, 3.5, 97.25, -0.0];

fn random_value<R: Rng>(rng: &mut R, ty: ColumnType) -> Value {
    if rng.random_bool(0.15) {
        return Value::Null;
    }
    match ty {
        ColumnType::Integer => Value::Integer(rng.random_range(-5..=5)),
        ColumnType::Real => Value::Real(*REALS.choose(rng).unwrap()),
        ColumnType::Text => Value::Text(TEXTS.choose(rng).unwrap().to_string()),
        ColumnType::Boolean => Value::Boolean(rng.random_bool(0.5)),
    }
}

pub fn random_table<R: Rng>(rng: &mut R) -> Table {
    let ncols = rng.random_range(1..=5);
    let nrows = rng.random_range(0..=50);
    let types = [
        ColumnType::Integer,
        ColumnType::Real,
        ColumnType::Text,
        ColumnType::Boolean,
    ];
    let cols = (0..ncols)
        .map(|c| {
            let ty = *types.choose(rng).unwrap();
            let values = (0..nrows).map(|_| random_value(rng, ty)).collect();
            (format!("c{c}"), ty, values)
        })
        .collect();
    Table::from_columns("t", cols)
}

fn random_literal<R: Rng>(rng: &mut R, ty: ColumnType) -> Literal {
    if rng.random_bool(0.05) {
        return Literal::Null;
    }
    match ty {
        ColumnType::Integer | ColumnType::Real => {
            if rng.random_bool(0.5) {
                Literal::Integer(rng.random_range(-5..=5))
            } else {
                Literal::Real(*REALS.choose(rng).unwrap())
            }
        }
        ColumnType::Text => Literal::Text(TEXTS.choose(rng).unwrap().to_string()),
        ColumnType::Boolean => Literal::Boolean(rng.random_bool(0.5)),
    }
}

fn same_class(a: ColumnType, b: ColumnType) -> bool {
    let class = |t| match t {
        ColumnType::Integer | ColumnType::Real => 0,
        ColumnType::Text => 1,
        ColumnType::Boolean => 2,
    };
    class(a) == class(b)
}

fn random_predicate<R: Rng>(rng: &mut R, table: &Table, depth: u32) -> Expr {
    let types = table.column_types();
    let pick = |rng: &mut R| rng.random_range(0..table.headers.len());
    let choice = if depth == 0 {
        rng.random_range(0..4)
    } else {
        rng.random_range(0..7)
    };
    let ops = [
        CompareOp::Eq,
        CompareOp::NotEq,
        CompareOp::Lt,
        CompareOp::LtEq,
        CompareOp::Gt,
        CompareOp::GtEq,
    ];
    match choice {
        0 => {
            let c = pick(rng);
            let left = Operand::Column(table.headers[c].clone());
            let others: Vec<usize> = (0..types.len()).filter(|&o| same_class(types[o], types[c])).collect();
            let right = if rng.random_bool(0.3) {
                Operand::Column(table.headers[*others.choose(rng).unwrap()].clone())
            } else {
                Operand::Literal(random_literal(rng, types[c]))
            };
            let (left, right) = if rng.random_bool(0.2) {
                (right, left)
            } else {
                (left, right)
            };
            Expr::Compare {
                op: *ops.choose(rng).unwrap(),
                left,
                right,
            }
        }
        1 => {
            let c = pick(rng);
            if types[c] == ColumnType::Text {
                let pats = ["a%", "%a", "_eta", "%", "alpha", "x\\%y", "%_%", "A_B", ""];
                Expr::Like {
                    operand: Operand::Column(table.headers[c].clone()),
                    pattern: pats.choose(rng).unwrap().to_string(),
                    negated: rng.random_bool(0.3),
                }
            } else {
                Expr::IsNull {
                    operand: Operand::Column(table.headers[c].clone()),
                    negated: rng.random_bool(0.5),
                }
            }
        }
        2 => {
            let c = pick(rng);
            let n = rng.random_range(1..=3);
            Expr::InList {
                operand: Operand::Column(table.headers[c].clone()),
                list: (0..n).map(|_| random_literal(rng, types[c])).collect(),
                negated: rng.random_bool(0.3),
            }
        }
        3 => Expr::IsNull {
            operand: Operand::Column(table.headers[pick(rng)].clone()),
            negated: rng.random_bool(0.5),
        },
        4 => Expr::And(
            Box::new(random_predicate(rng, table, depth - 1)),
            Box::new(random_predicate(rng, table, depth - 1)),
        ),
        5 => Expr::Or(
            Box::new(random_predicate(rng, table, depth - 1)),
            Box::new(random_predicate(rng, table, depth - 1)),
        ),
        _ => Expr::Not(Box::new(random_predicate(rng, table, depth - 1))),
    }
}

/// A query that validates against `table`.
pub fn random_query<R: Rng>(rng: &mut R, table: &Table) -> SqlQuery {
    let types = table.column_types();
    let n = table.headers.len();
    let mut alias_n = 0;
    let mut alias = |rng: &mut R| {
        if rng.random_bool(0.4) {
            alias_n += 1;
            Some(format!("a{alias_n}"))
        } else {
            None
        }
    };
    let mut group_by = Vec::new();
    let mut order_names: Vec<String> = Vec::new();
    let select = if rng.random_bool(0.4) {
        // aggregate query
        let groups = rng.random_range(0..=n.min(2));
        let mut cols: Vec<usize> = (0..n).collect();
        for i in 0..groups {
            let j = rng.random_range(i..n);
            cols.swap(i, j);
        }
        group_by = cols[..groups].iter().map(|&c| table.headers[c].clone()).collect();
        let mut items = Vec::new();
        for g in &group_by {
            if items.is_empty() || rng.random_bool(0.5) {
                items.push(SelectItem {
                    expr: SelectExpr::Column(g.clone()),
                    alias: alias(rng),
                });
            }
        }
        order_names.extend(group_by.iter().cloned());
        let numeric: Vec<usize> = (0..n)
            .filter(|&c| matches!(types[c], ColumnType::Integer | ColumnType::Real))
            .collect();
        for _ in 0..rng.random_range(1..=3) {
            let any = table.headers[rng.random_range(0..n)].clone();
            let agg = match rng.random_range(0..6) {
                0 => Aggregate::CountStar,
                1 => Aggregate::Count(any),
                2 if !numeric.is_empty() => Aggregate::Sum(table.headers[*numeric.choose(rng).unwrap()].clone()),
                3 if !numeric.is_empty() => Aggregate::Avg(table.headers[*numeric.choose(rng).unwrap()].clone()),
                4 => Aggregate::Min(any),
                _ => Aggregate::Max(any),
            };
            items.push(SelectItem {
                expr: SelectExpr::Aggregate(agg),
                alias: alias(rng),
            });
        }
        Selection::Items(items)
    } else if rng.random_bool(0.2) {
        order_names.extend(table.headers.iter().cloned());
        Selection::Star
    } else {
        order_names.extend(table.headers.iter().cloned());
        let items = (0..rng.random_range(1..=3))
            .map(|_| SelectItem {
                expr: SelectExpr::Column(table.headers[rng.random_range(0..n)].clone()),
                alias: alias(rng),
            })
            .collect();
        Selection::Items(items)
    };
    if let Selection::Items(items) = &select {
        order_names.extend(items.iter().filter_map(|i| i.alias.clone()));
    }
    let filter = rng.random_bool(0.7).then(|| random_predicate(rng, table, 2));
    let order_by = if order_names.is_empty() || rng.random_bool(0.3) {
        Vec::new()
    } else {
        (0..rng.random_range(1..=2))
            .map(|_| OrderKey {
                name: order_names.choose(rng).unwrap().clone(),
                descending: rng.random_bool(0.5),
            })
            .collect()
    };
    let limit = rng.random_bool(0.3).then(|| rng.random_range(0..10));
    SqlQuery {
        select,
        from: table.name.clone(),
        filter,
        group_by,
        order_by,
        limit,
    }
}

/// Token soup containing at least one mutation keyword.
pub fn random_mutation_statement<R: Rng>(rng: &mut R) -> String {
    const MUTATIONS: [&str; 7] = ["INSERT", "UPDATE", "DELETE", "DROP", "CREATE", "ALTER", "ATTACH"];
    const OTHERS: [&str; 16] = [
        "SELECT", "FROM", "WHERE", "INTO", "TABLE", "t", "c0", "*", "=", "1", "'x'", ",", "(", ")", "SET", "VALUES",
    ];
    let len = rng.random_range(1..=10);
    let mut toks: Vec<&str> = (0..len).map(|_| *OTHERS.choose(rng).unwrap()).collect();
    let at = rng.random_range(0..=toks.len());
    let kw = *MUTATIONS.choose(rng).unwrap();
    let kw_case = match rng.random_range(0..3) {
        0 => kw.to_owned(),
        1 => kw.to_lowercase(),
        _ => kw[..1].to_owned() + &kw[1..].to_lowercase(),
    };
    let mut out: Vec<String> = toks.drain(..).map(str::to_owned).collect();
    out.insert(at, kw_case);
    out.join(" ")
}

// ---------------------------------------------------------------- pipeline fixtures

pub fn fixture_registry() -> Registry {
    Registry::load_manifest(&fixture("manifest.json")).expect("fixture manifest loads")
}

pub fn fixture_script() -> ScriptedBackend {
    ScriptedBackend::load(&fixture("script.json")).expect("fixture script loads")
}

pub fn fixture_scenario(id: &str, registry: &Registry) -> Scenario {
    Scenario::load(&fixture(&format!("scenarios/{id}.json")), registry).expect("fixture scenario loads")
}

/// Tasks whose synthesized answer misses a required fact, and tasks whose
/// routing reply is never valid JSON.
pub const MIX_PARTIAL: [usize; 3] = [10, 20, 30];
pub const MIX_ERROR: [usize; 2] = [25, 50];

fn mix_task(n: usize) -> serde_json::Value {
    serde_json::json!({
        "query": format!("Task {n:02}: how do I replace filter F-200?"),
        "reference": "Close valve V-12, swap the element and tighten the cover to 45 Nm.",
        "rubric": {"required": [{"kind": "substring", "value": "V-12"}, {"kind": "substring", "value": "45 Nm"}]},
        "kbs": ["manual"]
    })
}

/// 50 distinct single-KB tasks plus a replay file recorded from a scripted
/// session in which 45 answers are complete, 3 partial and 2 routings
/// malformed. Every replayed completion reports `latency_ms`.
pub fn replay_mix(dir: &std::path::Path, latency_ms: f64) -> (Registry, Scenario, ReplayBackend) {
    let registry = Registry::new()
        .with(
            KnowledgeBase::load(KnowledgeBaseDescriptor::new(
                "manual",
                KbKind::Text,
                fixture("manual.txt"),
                "press maintenance manual",
            ))
            .unwrap(),
        )
        .unwrap();
    let text = serde_json::json!({"id": "A", "tasks": (1..=50).map(mix_task).collect::<Vec<_>>()}).to_string();
    let scenario = Scenario::parse(&text, dir, &registry).unwrap();

    let mut script = ScriptedBackend::new();
    for n in MIX_ERROR {
        script = script.rule(
            ScriptRule::new("I am not sure which source applies here.")
                .and_system_contains("route maintenance questions")
                .and_user_contains(&format!("Task {n:02}:")),
        );
    }
    for n in MIX_PARTIAL {
        script = script.rule(
            ScriptRule::new("Close valve V-12 first, then swap the element.")
                .and_system_contains("answer maintenance questions")
                .and_user_contains(&format!("Task {n:02}:")),
        );
    }
    script = script
        .rule(
            ScriptRule::new(r#"{"subqueries":[{"kb":"manual","query":"procedure for replacing filter F-200"}]}"#)
                .and_system_contains("route maintenance questions"),
        )
        .rule(
            ScriptRule::new("Close valve V-12, replace the F-200 element and tighten the cover to 45 Nm.")
                .and_system_contains("answer maintenance questions"),
        );

    let path = dir.join("mix.jsonl");
    let recorder = RecordingClient::new(&script, &path).unwrap();
    Runner::new(&registry, &recorder, "mix-model")
        .run_scenario(&scenario, 1)
        .unwrap();
    let entries: Vec<ReplayEntry> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut e: ReplayEntry = serde_json::from_str(l).unwrap();
            e.latency_ms = latency_ms;
            e
        })
        .collect();
    (registry, scenario, ReplayBackend::from_entries(entries))
}

/// Records with timing zeroed, for run-to-run comparison.
pub fn untimed(records: &[RunRecord]) -> Vec<RunRecord> {
    records.iter().map(RunRecord::without_timing).collect()
}

// ---------------------------------------------------------------- routing fuzz

const PROSE: [&str; 6] = [
    "Sure, here is the plan:",
    "Routing result follows.",
    "",
    "I considered the manual and the tables.",
    "Hope this helps!",
    "Note: ids are case sensitive.",
];

/// One fuzzed routing reply and, when it should be accepted, the plan the
/// router must return after removing duplicates.
pub fn random_routing_reply<R: Rng>(rng: &mut R, known: &[&str]) -> (String, Option<RoutingPlan>) {
    let words = [
        "stock",
        "torque",
        "filter F-200",
        "line of machine 3",
        "belt",
        "\"quoted\" part",
        "naïve ü",
    ];
    let mut subs: Vec<Subquery> = (0..rng.random_range(1..=4))
        .map(|_| Subquery::new(known.choose(rng).unwrap(), words.choose(rng).unwrap()))
        .collect();
    if rng.random_bool(0.3) && !subs.is_empty() {
        let dup = subs[0].clone();
        subs.push(dup);
    }
    let mut dedup: Vec<Subquery> = Vec::new();
    for s in &subs {
        if !dedup.contains(s) {
            dedup.push(s.clone());
        }
    }
    let plan = RoutingPlan { subqueries: subs };
    let json = plan.to_json();
    let wrap = |rng: &mut R, body: &str| {
        let fence = rng.random_bool(0.3);
        format!(
            "{} {}{}{} {}",
            PROSE.choose(rng).unwrap(),
            if fence { "```json\n" } else { "" },
            body,
            if fence { "\n```" } else { "" },
            PROSE.choose(rng).unwrap()
        )
    };
    match rng.random_range(0..8) {
        0..=2 => {
            let body = wrap(rng, &json);
            (body, Some(RoutingPlan { subqueries: dedup }))
        }
        3 => {
            // truncated somewhere inside the object
            let cuts: Vec<usize> = json.char_indices().map(|(i, _)| i).filter(|&i| i > 0).collect();
            let cut = *cuts.choose(rng).unwrap();
            (wrap(rng, &json[..cut]), None)
        }
        4 => {
            let bad = json.replacen(&format!("\"{}\"", plan.subqueries[0].kb_id), "\"warehouse\"", 1);
            (wrap(rng, &bad), None)
        }
        5 => (wrap(rng, r#"{"subqueries":[]}"#), None),
        6 => {
            let body = [
                r#"{"subqueries":"manual"}"#,
                r#"{"plan":[{"kb":"manual","query":"x"}]}"#,
                r#"{"subqueries":[{"kb":"manual"}]}"#,
                r#"[{"kb":"manual","query":"x"}]"#,
            ]
            .choose(rng)
            .unwrap()
            .to_string();
            (wrap(rng, &body), None)
        }
        _ => (PROSE.choose(rng).unwrap().to_string(), None),
    }
}
