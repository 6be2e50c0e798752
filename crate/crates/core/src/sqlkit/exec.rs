use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{Agg, CmpOp, Direction, SelectItem, SqlAst};
use super::schema::{SchemaDef, Value};
use super::SqlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Row data for every table of one schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseInstance {
    pub schema_id: String,
    pub tables: BTreeMap<String, TableData>,
}

/// Rows of literals in select-list column order.
pub type ResultTable = Vec<Vec<Value>>;

impl DatabaseInstance {
    /// Checks tables, column names, row arity and cell types against the
    /// schema.
    pub fn validate(&self, schema: &SchemaDef) -> Result<(), SqlError> {
        let err = |msg: String| Err(SqlError::Schema { schema: self.schema_id.clone(), msg });
        if self.schema_id != schema.id {
            return err(format!("database belongs to schema `{}`, not `{}`", self.schema_id, schema.id));
        }
        if self.tables.len() != schema.tables.len() {
            return err(format!("database has {} tables, schema has {}", self.tables.len(), schema.tables.len()));
        }
        for t in &schema.tables {
            let Some(data) = self.tables.get(&t.name) else {
                return err(format!("database is missing table `{}`", t.name));
            };
            if data.columns.len() != t.columns.len() || data.columns.iter().zip(&t.columns).any(|(a, b)| *a != b.name) {
                return err(format!("columns of table `{}` differ from the schema", t.name));
            }
            for (r, row) in data.rows.iter().enumerate() {
                if row.len() != t.columns.len() {
                    return err(format!("row {r} of `{}` has {} cells, expected {}", t.name, row.len(), t.columns.len()));
                }
                for (v, c) in row.iter().zip(&t.columns) {
                    if v.col_type() != c.col_type || v.as_number().is_some_and(|n| !n.is_finite()) {
                        return err(format!("row {r} of `{}` has a bad value {v} for column `{}`", t.name, c.name));
                    }
                }
            }
        }
        Ok(())
    }

    fn table(&self, schema: &SchemaDef, t: usize) -> Result<&TableData, SqlError> {
        let name = &schema.tables[t].name;
        self.tables.get(name).ok_or_else(|| SqlError::Execution(format!("database has no table `{name}`")))
    }
}

fn aggregate(item: &SelectItem, rows: &[Vec<&Value>], pos: impl Fn(usize) -> usize) -> Option<Value> {
    let cells = || rows.iter().map(|r| r[pos(item.col.expect("aggregate over a column"))]);
    // `Sum for f64` starts from -0.0, which would not compare equal to a literal 0.
    let total = || cells().map(|v| v.as_number().expect("validated number column")).fold(0.0, |a, b| a + b);
    match item.agg {
        Agg::None => rows.first().map(|r| r[pos(item.col.expect("bare column"))].clone()),
        Agg::Count => Some(Value::Number(rows.len() as f64)),
        Agg::Sum => Some(Value::Number(total())),
        Agg::Avg if rows.is_empty() => None,
        Agg::Avg => Some(Value::Number(total() / rows.len() as f64)),
        Agg::Min => cells().min().cloned(),
        Agg::Max => cells().max().cloned(),
    }
}

/// Runs a valid query. Join, filter, group, aggregate, then order and
/// limit. Without ORDER BY the rows come back sorted, so comparing two
/// results ignores row order. Ties under ORDER BY break on the output row.
pub fn execute(ast: &SqlAst, schema: &SchemaDef, db: &DatabaseInstance) -> Result<ResultTable, SqlError> {
    let from = db.table(schema, ast.from)?;
    let from_start = schema.table_columns(ast.from).start;
    let from_width = from.columns.len();
    let join = ast.join.map(|j| Ok::<_, SqlError>((j, db.table(schema, j.table)?))).transpose()?;
    let pos = |col: usize| match (schema.column_table(col), &join) {
        (Some(t), Some((j, _))) if t == j.table => from_width + col - schema.table_columns(t).start,
        _ => col - from_start,
    };

    let mut rows: Vec<Vec<&Value>> = Vec::new();
    for r in &from.rows {
        match &join {
            None => rows.push(r.iter().collect()),
            Some((j, data)) => {
                for s in &data.rows {
                    let row: Vec<&Value> = r.iter().chain(s).collect();
                    if row[pos(j.on.0)] == row[pos(j.on.1)] {
                        rows.push(row);
                    }
                }
            }
        }
    }
    rows.retain(|row| {
        ast.conds.iter().all(|c| {
            let v = row[pos(c.col)];
            match c.op {
                CmpOp::Eq => *v == c.value,
                CmpOp::Ne => *v != c.value,
                CmpOp::Gt => v.as_number() > c.value.as_number(),
                CmpOp::Lt => v.as_number() < c.value.as_number(),
            }
        })
    });

    let grouped = ast.group_by.is_some()
        || ast.select.iter().any(SelectItem::is_aggregate)
        || ast.order_by.is_some_and(|o| o.key.is_aggregate());
    let mut out: Vec<(Option<Value>, Vec<Value>)> = Vec::new();
    let mut emit = |group: &[Vec<&Value>]| {
        let cells: Option<Vec<Value>> = ast.select.iter().map(|i| aggregate(i, group, pos)).collect();
        let key = match &ast.order_by {
            Some(o) => match aggregate(&o.key, group, pos) {
                Some(k) => Some(k),
                None => return,
            },
            None => None,
        };
        if let Some(cells) = cells {
            out.push((key, cells));
        }
    };
    if let Some(g) = ast.group_by {
        let mut groups: BTreeMap<&Value, Vec<Vec<&Value>>> = BTreeMap::new();
        for row in rows {
            groups.entry(row[pos(g)]).or_default().push(row);
        }
        for members in groups.values() {
            emit(members);
        }
    } else if grouped {
        emit(&rows);
    } else {
        for row in rows {
            emit(std::slice::from_ref(&row));
        }
    }

    match &ast.order_by {
        Some(o) => {
            out.sort_by(|a, b| {
                let k = a.0.cmp(&b.0);
                let k = if o.dir == Direction::Desc { k.reverse() } else { k };
                k.then_with(|| a.1.cmp(&b.1))
            });
            if let Some(n) = o.limit {
                out.truncate(n as usize);
            }
        }
        None => out.sort_by(|a, b| a.1.cmp(&b.1)),
    }
    Ok(out.into_iter().map(|(_, cells)| cells).collect())
}
