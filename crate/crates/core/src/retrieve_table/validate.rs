use super::ast::*;
use super::print;
use super::{SqlValidationError, Table};
use crate::kb::ColumnType;

/// Static type of an operand. `None` is the NULL literal, compatible with
/// everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Numeric,
    Text,
    Boolean,
}

fn column_ty(t: ColumnType) -> Ty {
    match t {
        ColumnType::Integer | ColumnType::Real => Ty::Numeric,
        ColumnType::Text => Ty::Text,
        ColumnType::Boolean => Ty::Boolean,
    }
}

fn literal_ty(l: &Literal) -> Option<Ty> {
    match l {
        Literal::Null => None,
        Literal::Boolean(_) => Some(Ty::Boolean),
        Literal::Integer(_) | Literal::Real(_) => Some(Ty::Numeric),
        Literal::Text(_) => Some(Ty::Text),
    }
}

/// Checks a parsed query against a table's schema and returns it unchanged.
pub fn validate_sql(query: SqlQuery, table: &Table) -> Result<SqlQuery, SqlValidationError> {
    if query.from != table.name {
        return Err(SqlValidationError::UnknownTable(query.from));
    }
    let col = |name: &str| {
        table
            .column_type(name)
            .ok_or_else(|| SqlValidationError::UnknownColumn(name.to_owned()))
    };

    let mut aliases = Vec::new();
    let mut selected_columns = Vec::new();
    if let Selection::Items(items) = &query.select {
        for item in items {
            match &item.expr {
                SelectExpr::Column(c) => {
                    col(c)?;
                    selected_columns.push(c.as_str());
                }
                SelectExpr::Aggregate(agg) => {
                    if let Some(c) = agg.column() {
                        let ty = col(c)?;
                        if matches!(agg, Aggregate::Sum(_) | Aggregate::Avg(_)) && column_ty(ty) != Ty::Numeric {
                            return Err(SqlValidationError::TypeMismatch(print::aggregate_text(agg)));
                        }
                    }
                }
            }
            if let Some(a) = &item.alias {
                aliases.push(a.as_str());
            }
        }
    }

    if let Some(filter) = &query.filter {
        check_expr(filter, table)?;
    }
    for g in &query.group_by {
        col(g)?;
    }
    let aggregate = query.is_aggregate();
    for key in &query.order_by {
        let name = key.name.as_str();
        let ok = aliases.contains(&name)
            || if aggregate {
                query.group_by.iter().any(|g| g == name)
            } else {
                table.column_index(name).is_some()
            };
        if !ok {
            return Err(SqlValidationError::UnknownColumn(key.name.clone()));
        }
    }
    Ok(query)
}

fn operand_ty(o: &Operand, table: &Table) -> Result<Option<Ty>, SqlValidationError> {
    match o {
        Operand::Column(c) => table
            .column_type(c)
            .map(|t| Some(column_ty(t)))
            .ok_or_else(|| SqlValidationError::UnknownColumn(c.clone())),
        Operand::Literal(l) => Ok(literal_ty(l)),
    }
}

fn compatible(a: Option<Ty>, b: Option<Ty>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

fn check_expr(e: &Expr, table: &Table) -> Result<(), SqlValidationError> {
    let mismatch = || SqlValidationError::TypeMismatch(print::expr(e));
    match e {
        Expr::Compare { left, right, .. } => {
            if !compatible(operand_ty(left, table)?, operand_ty(right, table)?) {
                return Err(mismatch());
            }
        }
        Expr::Like { operand, .. } => match operand_ty(operand, table)? {
            Some(Ty::Text) => {}
            _ => return Err(mismatch()),
        },
        Expr::InList { operand, list, .. } => {
            let ty = operand_ty(operand, table)?;
            if !list.iter().all(|l| compatible(ty, literal_ty(l))) {
                return Err(mismatch());
            }
        }
        Expr::IsNull { operand, .. } => {
            operand_ty(operand, table)?;
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            check_expr(a, table)?;
            check_expr(b, table)?;
        }
        Expr::Not(inner) => check_expr(inner, table)?,
    }
    Ok(())
}
