use super::SqlSyntaxError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Keyword(Keyword),
    Ident(String),
    /// Double-quoted identifier; never a keyword.
    QuotedIdent(String),
    Str(String),
    Number(String),
    Comma,
    LParen,
    RParen,
    Star,
    Minus,
    Semicolon,
    Op(&'static str),
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Keyword {
    Select,
    From,
    Where,
    Group,
    Order,
    By,
    Asc,
    Desc,
    Limit,
    As,
    And,
    Or,
    Not,
    Like,
    In,
    Is,
    Null,
    True,
    False,
    // mutation and DDL words are reserved so they can never slip through as
    // bare identifiers
    Insert,
    Update,
    Delete,
    Drop,
    Create,
    Alter,
    Attach,
}

pub(crate) const KEYWORDS: &[(&str, Keyword)] = &[
    ("SELECT", Keyword::Select),
    ("FROM", Keyword::From),
    ("WHERE", Keyword::Where),
    ("GROUP", Keyword::Group),
    ("ORDER", Keyword::Order),
    ("BY", Keyword::By),
    ("ASC", Keyword::Asc),
    ("DESC", Keyword::Desc),
    ("LIMIT", Keyword::Limit),
    ("AS", Keyword::As),
    ("AND", Keyword::And),
    ("OR", Keyword::Or),
    ("NOT", Keyword::Not),
    ("LIKE", Keyword::Like),
    ("IN", Keyword::In),
    ("IS", Keyword::Is),
    ("NULL", Keyword::Null),
    ("TRUE", Keyword::True),
    ("FALSE", Keyword::False),
    ("INSERT", Keyword::Insert),
    ("UPDATE", Keyword::Update),
    ("DELETE", Keyword::Delete),
    ("DROP", Keyword::Drop),
    ("CREATE", Keyword::Create),
    ("ALTER", Keyword::Alter),
    ("ATTACH", Keyword::Attach),
];

pub(crate) fn keyword(word: &str) -> Option<Keyword> {
    KEYWORDS
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(word))
        .map(|&(_, kw)| kw)
}

pub(crate) fn keyword_text(kw: Keyword) -> &'static str {
    KEYWORDS.iter().find(|(_, k)| *k == kw).map(|(s, _)| *s).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

impl Token {
    pub fn describe(&self) -> String {
        match &self.tok {
            Tok::Keyword(k) => keyword_text(*k).to_owned(),
            Tok::Ident(s) => s.clone(),
            Tok::QuotedIdent(s) => format!("\"{s}\""),
            Tok::Str(s) => format!("'{s}'"),
            Tok::Number(n) => n.clone(),
            Tok::Comma => ",".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::Star => "*".into(),
            Tok::Minus => "-".into(),
            Tok::Semicolon => ";".into(),
            Tok::Op(o) => (*o).into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, SqlSyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    let err = |line, column, found: String, expected: &[&str]| SqlSyntaxError {
        line,
        column,
        found,
        expected: expected.iter().map(|s| s.to_string()).collect(),
    };

    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        let push = |tok, out: &mut Vec<Token>| {
            out.push(Token {
                tok,
                line: tl,
                column: tc,
            })
        };
        match c {
            ',' => {
                push(Tok::Comma, &mut out);
                advance(1, &mut i, &mut col);
            }
            '(' => {
                push(Tok::LParen, &mut out);
                advance(1, &mut i, &mut col);
            }
            ')' => {
                push(Tok::RParen, &mut out);
                advance(1, &mut i, &mut col);
            }
            '*' => {
                push(Tok::Star, &mut out);
                advance(1, &mut i, &mut col);
            }
            '-' => {
                push(Tok::Minus, &mut out);
                advance(1, &mut i, &mut col);
            }
            ';' => {
                push(Tok::Semicolon, &mut out);
                advance(1, &mut i, &mut col);
            }
            '=' => {
                push(Tok::Op("="), &mut out);
                advance(1, &mut i, &mut col);
            }
            '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('!', Some('=')) => ("!=", 2),
                    ('<', Some('=')) => ("<=", 2),
                    ('<', Some('>')) => ("!=", 2),
                    ('>', Some('=')) => (">=", 2),
                    ('<', _) => ("<", 1),
                    ('>', _) => (">", 1),
                    _ => return Err(err(tl, tc, "!".into(), &["!="])),
                };
                push(Tok::Op(op), &mut out);
                advance(len, &mut i, &mut col);
            }
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                let mut j = i + 1;
                let (mut l, mut cc) = (line, col + 1);
                loop {
                    match chars.get(j) {
                        None => {
                            let what = if quote == '\'' { "string" } else { "identifier" };
                            return Err(err(
                                tl,
                                tc,
                                format!("unterminated {what}"),
                                &[if quote == '\'' { "'" } else { "\"" }],
                            ));
                        }
                        Some(&q) if q == quote => {
                            if chars.get(j + 1) == Some(&quote) {
                                s.push(quote);
                                j += 2;
                                cc += 2;
                            } else {
                                j += 1;
                                cc += 1;
                                break;
                            }
                        }
                        Some('\n') => {
                            s.push('\n');
                            j += 1;
                            l += 1;
                            cc = 1;
                        }
                        Some(&other) => {
                            s.push(other);
                            j += 1;
                            cc += 1;
                        }
                    }
                }
                push(
                    if quote == '\'' {
                        Tok::Str(s)
                    } else {
                        Tok::QuotedIdent(s)
                    },
                    &mut out,
                );
                i = j;
                line = l;
                col = cc;
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '.' {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                if j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    return Err(err(line, col + (j - start), chars[j].to_string(), &["number"]));
                }
                let text: String = chars[start..j].iter().collect();
                push(Tok::Number(text), &mut out);
                advance(j - start, &mut i, &mut col);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[start..j].iter().collect();
                let tok = match keyword(&word) {
                    Some(kw) => Tok::Keyword(kw),
                    None => Tok::Ident(word),
                };
                push(tok, &mut out);
                advance(j - start, &mut i, &mut col);
            }
            other => {
                return Err(err(tl, tc, other.to_string(), &["token"]));
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}
