//! Recursive-descent parser for the SQL subset.

use super::ast::*;
use super::lexer::{keyword_text, tokenize, Keyword, Tok, Token};
use super::SqlSyntaxError;

/// Parses one SELECT statement. Keywords are case-insensitive, identifiers
/// case-sensitive, and a trailing semicolon is optional.
pub fn parse_sql(text: &str) -> Result<SqlQuery, SqlSyntaxError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let query = p.query()?;
    check_grouping(&query, &p.tokens[0])?;
    Ok(query)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

const AGGREGATES: &[&str] = &["COUNT", "SUM", "AVG", "MIN", "MAX"];

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> SqlSyntaxError {
        let t = self.peek();
        SqlSyntaxError {
            line: t.line,
            column: t.column,
            found: t.describe(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn at_keyword(&self, kw: Keyword) -> bool {
        self.peek().tok == Tok::Keyword(kw)
    }

    fn eat_keyword(&mut self, kw: Keyword) -> bool {
        if self.at_keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: Keyword) -> Result<(), SqlSyntaxError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(&[keyword_text(kw)]))
        }
    }

    fn expect(&mut self, tok: Tok, label: &str) -> Result<(), SqlSyntaxError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[label]))
        }
    }

    fn identifier(&mut self) -> Result<String, SqlSyntaxError> {
        match &self.peek().tok {
            Tok::Ident(s) | Tok::QuotedIdent(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn query(&mut self) -> Result<SqlQuery, SqlSyntaxError> {
        self.expect_keyword(Keyword::Select)?;
        let select = if self.peek().tok == Tok::Star {
            self.bump();
            Selection::Star
        } else {
            let mut items = vec![self.select_item()?];
            while self.peek().tok == Tok::Comma {
                self.bump();
                items.push(self.select_item()?);
            }
            Selection::Items(items)
        };
        self.expect_keyword(Keyword::From)?;
        let from = self.identifier()?;

        let filter = if self.eat_keyword(Keyword::Where) {
            Some(self.or_expr()?)
        } else {
            None
        };

        let mut group_by = Vec::new();
        if self.eat_keyword(Keyword::Group) {
            self.expect_keyword(Keyword::By)?;
            group_by.push(self.identifier()?);
            while self.peek().tok == Tok::Comma {
                self.bump();
                group_by.push(self.identifier()?);
            }
        }

        let mut order_by = Vec::new();
        if self.eat_keyword(Keyword::Order) {
            self.expect_keyword(Keyword::By)?;
            loop {
                let name = self.identifier()?;
                let descending = if self.eat_keyword(Keyword::Desc) {
                    true
                } else {
                    self.eat_keyword(Keyword::Asc);
                    false
                };
                order_by.push(OrderKey { name, descending });
                if self.peek().tok != Tok::Comma {
                    break;
                }
                self.bump();
            }
        }

        let limit = if self.eat_keyword(Keyword::Limit) {
            match &self.peek().tok {
                Tok::Number(n) if n.bytes().all(|b| b.is_ascii_digit()) => match n.parse() {
                    Ok(v) => {
                        self.bump();
                        Some(v)
                    }
                    Err(_) => return Err(self.error(&["non-negative integer"])),
                },
                _ => return Err(self.error(&["non-negative integer"])),
            }
        } else {
            None
        };

        if self.peek().tok == Tok::Semicolon {
            self.bump();
        }
        if self.peek().tok != Tok::Eof {
            let mut expected = Vec::new();
            if filter.is_none() && group_by.is_empty() && order_by.is_empty() && limit.is_none() {
                expected.push("WHERE");
            }
            if group_by.is_empty() && order_by.is_empty() && limit.is_none() {
                expected.push("GROUP BY");
            }
            if order_by.is_empty() && limit.is_none() {
                expected.push("ORDER BY");
            }
            if limit.is_none() {
                expected.push("LIMIT");
            }
            expected.push("end of input");
            return Err(self.error(&expected));
        }

        Ok(SqlQuery {
            select,
            from,
            filter,
            group_by,
            order_by,
            limit,
        })
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlSyntaxError> {
        let expr = match self.peek().tok.clone() {
            Tok::Ident(name)
                if self.peek_at(1) == &Tok::LParen && AGGREGATES.iter().any(|a| a.eq_ignore_ascii_case(&name)) =>
            {
                self.bump();
                self.bump();
                let func = name.to_ascii_uppercase();
                let agg = if func == "COUNT" && self.peek().tok == Tok::Star {
                    self.bump();
                    Aggregate::CountStar
                } else {
                    let col = self.identifier()?;
                    match func.as_str() {
                        "COUNT" => Aggregate::Count(col),
                        "SUM" => Aggregate::Sum(col),
                        "AVG" => Aggregate::Avg(col),
                        "MIN" => Aggregate::Min(col),
                        _ => Aggregate::Max(col),
                    }
                };
                self.expect(Tok::RParen, ")")?;
                SelectExpr::Aggregate(agg)
            }
            Tok::Ident(_) | Tok::QuotedIdent(_) => SelectExpr::Column(self.identifier()?),
            _ => return Err(self.error(&["column", "aggregate", "*"])),
        };
        let alias = if self.eat_keyword(Keyword::As) {
            Some(self.identifier()?)
        } else {
            None
        };
        Ok(SelectItem { expr, alias })
    }

    fn or_expr(&mut self) -> Result<Expr, SqlSyntaxError> {
        let mut left = self.and_expr()?;
        while self.eat_keyword(Keyword::Or) {
            let right = self.and_expr()?;
            left = Expr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlSyntaxError> {
        let mut left = self.not_expr()?;
        while self.eat_keyword(Keyword::And) {
            let right = self.not_expr()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, SqlSyntaxError> {
        if self.eat_keyword(Keyword::Not) {
            Ok(Expr::Not(Box::new(self.not_expr()?)))
        } else {
            self.predicate()
        }
    }

    fn predicate(&mut self) -> Result<Expr, SqlSyntaxError> {
        if self.peek().tok == Tok::LParen {
            self.bump();
            let e = self.or_expr()?;
            self.expect(Tok::RParen, ")")?;
            return Ok(e);
        }
        let left = self.operand()?;
        match self.peek().tok.clone() {
            Tok::Op(op) => {
                self.bump();
                let op = match op {
                    "=" => CompareOp::Eq,
                    "!=" => CompareOp::NotEq,
                    "<" => CompareOp::Lt,
                    "<=" => CompareOp::LtEq,
                    ">" => CompareOp::Gt,
                    _ => CompareOp::GtEq,
                };
                let right = self.operand()?;
                Ok(Expr::Compare { op, left, right })
            }
            Tok::Keyword(Keyword::Is) => {
                self.bump();
                let negated = self.eat_keyword(Keyword::Not);
                self.expect_keyword(Keyword::Null)?;
                Ok(Expr::IsNull { operand: left, negated })
            }
            Tok::Keyword(Keyword::Not) => {
                self.bump();
                match self.peek().tok {
                    Tok::Keyword(Keyword::Like) => self.like_tail(left, true),
                    Tok::Keyword(Keyword::In) => self.in_tail(left, true),
                    _ => Err(self.error(&["LIKE", "IN"])),
                }
            }
            Tok::Keyword(Keyword::Like) => self.like_tail(left, false),
            Tok::Keyword(Keyword::In) => self.in_tail(left, false),
            _ => Err(self.error(&["=", "!=", "<", "<=", ">", ">=", "LIKE", "IN", "IS", "NOT"])),
        }
    }

    fn like_tail(&mut self, operand: Operand, negated: bool) -> Result<Expr, SqlSyntaxError> {
        self.expect_keyword(Keyword::Like)?;
        match self.peek().tok.clone() {
            Tok::Str(pattern) => {
                self.bump();
                Ok(Expr::Like {
                    operand,
                    pattern,
                    negated,
                })
            }
            _ => Err(self.error(&["string pattern"])),
        }
    }

    fn in_tail(&mut self, operand: Operand, negated: bool) -> Result<Expr, SqlSyntaxError> {
        self.expect_keyword(Keyword::In)?;
        self.expect(Tok::LParen, "(")?;
        let mut list = vec![self.literal()?];
        while self.peek().tok == Tok::Comma {
            self.bump();
            list.push(self.literal()?);
        }
        self.expect(Tok::RParen, ")")?;
        Ok(Expr::InList { operand, list, negated })
    }

    fn operand(&mut self) -> Result<Operand, SqlSyntaxError> {
        match &self.peek().tok {
            Tok::Ident(_) | Tok::QuotedIdent(_) => Ok(Operand::Column(self.identifier()?)),
            _ => match self.literal() {
                Ok(l) => Ok(Operand::Literal(l)),
                Err(_) => Err(self.error(&["column", "literal"])),
            },
        }
    }

    fn literal(&mut self) -> Result<Literal, SqlSyntaxError> {
        let lit = match self.peek().tok.clone() {
            Tok::Str(s) => Literal::Text(s),
            Tok::Keyword(Keyword::Null) => Literal::Null,
            Tok::Keyword(Keyword::True) => Literal::Boolean(true),
            Tok::Keyword(Keyword::False) => Literal::Boolean(false),
            Tok::Number(n) => number_literal(&n, false),
            Tok::Minus => match self.peek_at(1).clone() {
                Tok::Number(n) => {
                    self.bump();
                    number_literal(&n, true)
                }
                _ => {
                    self.bump();
                    return Err(self.error(&["number"]));
                }
            },
            _ => return Err(self.error(&["literal"])),
        };
        self.bump();
        Ok(lit)
    }
}

fn number_literal(text: &str, negative: bool) -> Literal {
    let signed = if negative { format!("-{text}") } else { text.to_owned() };
    if text.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(i) = signed.parse::<i64>() {
            return Literal::Integer(i);
        }
    }
    // the lexer only admits decimal digits, '.', and exponents
    Literal::Real(signed.parse().unwrap_or(f64::NAN))
}

/// Grouping rules, checked after a successful parse:
/// - in an aggregate query every plain column in the select list must be a
///   GROUP BY key, and `*` is not allowed;
/// - with GROUP BY, at least one key must appear in the select list.
fn check_grouping(q: &SqlQuery, first: &Token) -> Result<(), SqlSyntaxError> {
    if !q.is_aggregate() {
        return Ok(());
    }
    let fail = |found: String, expected: &str| SqlSyntaxError {
        line: first.line,
        column: first.column,
        found,
        expected: vec![expected.to_owned()],
    };
    let items = match &q.select {
        Selection::Star => return Err(fail("*".into(), "column list with GROUP BY")),
        Selection::Items(items) => items,
    };
    let plain: Vec<&str> = items
        .iter()
        .filter_map(|i| match &i.expr {
            SelectExpr::Column(c) => Some(c.as_str()),
            SelectExpr::Aggregate(_) => None,
        })
        .collect();
    for c in &plain {
        if !q.group_by.iter().any(|g| g == c) {
            return Err(fail(
                format!("column {c} outside GROUP BY"),
                "aggregate or GROUP BY column",
            ));
        }
    }
    if !q.group_by.is_empty() && !q.group_by.iter().any(|g| plain.contains(&g.as_str())) {
        return Err(fail(
            format!("GROUP BY {} with no key in the select list", q.group_by.join(", ")),
            "GROUP BY key in select list",
        ));
    }
    Ok(())
}
