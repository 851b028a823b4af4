//! Syntax tree for the read-only SQL subset.

#[derive(Debug, Clone, PartialEq)]
pub struct SqlQuery {
    pub select: Selection,
    pub from: String,
    pub filter: Option<Expr>,
    /// Empty when the query has no GROUP BY clause.
    pub group_by: Vec<String>,
    pub order_by: Vec<OrderKey>,
    pub limit: Option<u64>,
}

impl SqlQuery {
    /// True when the query produces one row per group rather than per input
    /// row.
    pub fn is_aggregate(&self) -> bool {
        !self.group_by.is_empty()
            || match &self.select {
                Selection::Star => false,
                Selection::Items(items) => items.iter().any(|i| matches!(i.expr, SelectExpr::Aggregate(_))),
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Star,
    Items(Vec<SelectItem>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectItem {
    pub expr: SelectExpr,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectExpr {
    Column(String),
    Aggregate(Aggregate),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Aggregate {
    CountStar,
    Count(String),
    Sum(String),
    Avg(String),
    Min(String),
    Max(String),
}

impl Aggregate {
    pub fn function_name(&self) -> &'static str {
        match self {
            Aggregate::CountStar | Aggregate::Count(_) => "COUNT",
            Aggregate::Sum(_) => "SUM",
            Aggregate::Avg(_) => "AVG",
            Aggregate::Min(_) => "MIN",
            Aggregate::Max(_) => "MAX",
        }
    }

    pub fn column(&self) -> Option<&str> {
        match self {
            Aggregate::CountStar => None,
            Aggregate::Count(c) | Aggregate::Sum(c) | Aggregate::Avg(c) | Aggregate::Min(c) | Aggregate::Max(c) => {
                Some(c)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderKey {
    /// Output alias or column name.
    pub name: String,
    pub descending: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::NotEq => "!=",
            CompareOp::Lt => "<",
            CompareOp::LtEq => "<=",
            CompareOp::Gt => ">",
            CompareOp::GtEq => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Compare {
        op: CompareOp,
        left: Operand,
        right: Operand,
    },
    Like {
        operand: Operand,
        pattern: String,
        negated: bool,
    },
    InList {
        operand: Operand,
        list: Vec<Literal>,
        negated: bool,
    },
    IsNull {
        operand: Operand,
        negated: bool,
    },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(String),
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Expr {
    /// Every column name referenced by the expression, in source order.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        let operand = |o: &'a Operand, out: &mut Vec<&'a str>| {
            if let Operand::Column(c) = o {
                out.push(c.as_str());
            }
        };
        match self {
            Expr::Compare { left, right, .. } => {
                operand(left, out);
                operand(right, out);
            }
            Expr::Like { operand: o, .. } | Expr::InList { operand: o, .. } | Expr::IsNull { operand: o, .. } => {
                operand(o, out)
            }
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_columns(out);
                b.collect_columns(out);
            }
            Expr::Not(e) => e.collect_columns(out),
        }
    }
}
