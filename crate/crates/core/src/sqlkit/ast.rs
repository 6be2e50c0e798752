use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::{ColType, SchemaDef, Value};
use super::SqlError;

/// Most select items a query may carry.
pub const MAX_SELECT: usize = 3;
/// Most WHERE conjuncts a query may carry.
pub const MAX_CONDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Agg {
    None,
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl Agg {
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            Agg::None => None,
            Agg::Count => Some("count"),
            Agg::Sum => Some("sum"),
            Agg::Avg => Some("avg"),
            Agg::Min => Some("min"),
            Agg::Max => Some("max"),
        }
    }
}

/// An aggregate over a column, or `count(*)` when `col` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SelectItem {
    pub agg: Agg,
    pub col: Option<usize>,
}

impl SelectItem {
    pub fn bare(col: usize) -> Self {
        Self { agg: Agg::None, col: Some(col) }
    }

    pub fn count_star() -> Self {
        Self { agg: Agg::Count, col: None }
    }

    pub fn agg(agg: Agg, col: usize) -> Self {
        Self { agg, col: Some(col) }
    }

    pub fn is_aggregate(&self) -> bool {
        self.agg != Agg::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Join {
    pub table: usize,
    pub on: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Gt,
    Lt,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 4] = [CmpOp::Eq, CmpOp::Gt, CmpOp::Lt, CmpOp::Ne];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Ne => "!=",
        }
    }

    /// `>` and `<` are restricted to number columns.
    pub fn needs_number(self) -> bool {
        matches!(self, CmpOp::Gt | CmpOp::Lt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cond {
    pub col: usize,
    pub op: CmpOp,
    pub value: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OrderBy {
    pub key: SelectItem,
    pub dir: Direction,
    pub limit: Option<u32>,
}

/// A query of the toy grammar. Tables and columns are schema indices
/// (columns use the schema's global numbering), so identifiers are resolved
/// and case-free by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SqlAst {
    pub select: Vec<SelectItem>,
    pub from: usize,
    pub join: Option<Join>,
    pub conds: Vec<Cond>,
    pub group_by: Option<usize>,
    pub order_by: Option<OrderBy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard, Difficulty::Extra];

    pub fn from_components(c: usize) -> Self {
        match c {
            0..=1 => Difficulty::Easy,
            2..=3 => Difficulty::Medium,
            4..=5 => Difficulty::Hard,
            _ => Difficulty::Extra,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Extra => "extra",
        })
    }
}

impl SqlAst {
    pub fn count_star(table: usize) -> Self {
        Self {
            select: vec![SelectItem::count_star()],
            from: table,
            join: None,
            conds: Vec::new(),
            group_by: None,
            order_by: None,
        }
    }

    pub fn tables(&self) -> Vec<usize> {
        let mut t = vec![self.from];
        if let Some(j) = &self.join {
            t.push(j.table);
        }
        t
    }

    pub fn in_scope(&self, schema: &SchemaDef, col: usize) -> bool {
        schema.column_table(col).is_some_and(|t| t == self.from || self.join.is_some_and(|j| j.table == t))
    }

    /// Component count: extra select items, conjuncts, join, group, order
    /// and aggregates (select items plus the order key).
    pub fn components(&self) -> usize {
        let aggs = self.select.iter().filter(|i| i.is_aggregate()).count()
            + self.order_by.map_or(0, |o| usize::from(o.key.is_aggregate()));
        (self.select.len().saturating_sub(1))
            + self.conds.len()
            + usize::from(self.join.is_some())
            + usize::from(self.group_by.is_some())
            + usize::from(self.order_by.is_some())
            + aggs
    }

    pub fn difficulty(&self) -> Difficulty {
        Difficulty::from_components(self.components())
    }

    /// Sorted conjuncts and an ordered JOIN ON pair. Idempotent.
    pub fn canonicalize(&self) -> SqlAst {
        let mut out = self.clone();
        out.conds.sort();
        if let Some(j) = out.join.as_mut() {
            if j.on.0 > j.on.1 {
                j.on = (j.on.1, j.on.0);
            }
        }
        out
    }

    fn check_item(&self, schema: &SchemaDef, item: &SelectItem, what: &str) -> Result<(), SqlError> {
        match item.col {
            None if item.agg != Agg::Count => {
                Err(SqlError::Validation(format!("{what}: `*` is only allowed under count")))
            }
            None => Ok(()),
            Some(c) => {
                if !self.in_scope(schema, c) {
                    return Err(SqlError::Validation(format!("{what}: column {c} is not in the FROM tables")));
                }
                if matches!(item.agg, Agg::Sum | Agg::Avg) && schema.column_type(c) != Some(ColType::Number) {
                    let name = &schema.column(c).expect("in scope").1.name;
                    return Err(SqlError::Validation(format!(
                        "{what}: {} over text column `{name}`",
                        item.agg.keyword().expect("aggregate")
                    )));
                }
                Ok(())
            }
        }
    }

    /// Schema consistency and the typing rules of the grammar.
    pub fn validate(&self, schema: &SchemaDef) -> Result<(), SqlError> {
        let v = |m: String| Err(SqlError::Validation(m));
        if self.select.is_empty() || self.select.len() > MAX_SELECT {
            return v(format!("{} select items (1..={MAX_SELECT} allowed)", self.select.len()));
        }
        if self.conds.len() > MAX_CONDS {
            return v(format!("{} conditions (at most {MAX_CONDS})", self.conds.len()));
        }
        if self.from >= schema.tables.len() {
            return v(format!("table {} does not exist", self.from));
        }
        if let Some(j) = &self.join {
            if j.table >= schema.tables.len() {
                return v(format!("table {} does not exist", j.table));
            }
            if j.table == self.from {
                return v("self-join is not supported".into());
            }
            let (a, b) = j.on;
            let (Some(ta), Some(tb)) = (schema.column_table(a), schema.column_table(b)) else {
                return v("join column does not exist".into());
            };
            let sides_ok = (ta == self.from && tb == j.table) || (ta == j.table && tb == self.from);
            if !sides_ok {
                return v("ON must compare one column from each joined table".into());
            }
            if schema.column_type(a) != schema.column_type(b) {
                return v("ON compares columns of different types".into());
            }
        }
        for item in &self.select {
            self.check_item(schema, item, "select")?;
        }
        let has_agg = self.select.iter().any(SelectItem::is_aggregate);
        let has_bare = self.select.iter().any(|i| !i.is_aggregate());
        match self.group_by {
            Some(g) => {
                if !self.in_scope(schema, g) {
                    return v(format!("GROUP BY column {g} is not in the FROM tables"));
                }
                if self.select.iter().any(|i| !i.is_aggregate() && i.col != Some(g)) {
                    return v("bare select columns must equal the GROUP BY column".into());
                }
            }
            None if has_agg && has_bare => {
                return v("mixing aggregated and bare columns needs GROUP BY".into());
            }
            None => {}
        }
        for c in &self.conds {
            if !self.in_scope(schema, c.col) {
                return v(format!("WHERE column {} is not in the FROM tables", c.col));
            }
            let ty = schema.column_type(c.col).expect("in scope");
            if c.op.needs_number() && ty != ColType::Number {
                return v(format!("`{}` needs a number column", c.op.symbol()));
            }
            if c.value.col_type() != ty {
                return v(format!("literal {} does not match the column type", c.value));
            }
        }
        if let Some(o) = &self.order_by {
            self.check_item(schema, &o.key, "order by")?;
            match self.group_by {
                Some(g) if !o.key.is_aggregate() && o.key.col != Some(g) => {
                    return v("ORDER BY on a grouped query must use an aggregate or the group column".into());
                }
                None if o.key.is_aggregate() || has_agg => {
                    return v("ORDER BY without GROUP BY needs bare select items and a bare key".into());
                }
                _ => {}
            }
            if o.limit == Some(0) {
                return v("LIMIT must be positive".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqlkit::schema::{ColumnDef, TableDef};

    fn schema() -> SchemaDef {
        SchemaDef {
            id: "s".into(),
            tables: vec![
                TableDef {
                    name: "t".into(),
                    columns: vec![
                        ColumnDef { name: "name".into(), col_type: ColType::Text },
                        ColumnDef { name: "age".into(), col_type: ColType::Number },
                    ],
                },
                TableDef {
                    name: "u".into(),
                    columns: vec![
                        ColumnDef { name: "owner".into(), col_type: ColType::Text },
                        ColumnDef { name: "size".into(), col_type: ColType::Number },
                    ],
                },
            ],
            foreign_keys: vec![],
            values: vec![Value::Number(1.0), Value::Number(2.0), Value::Text("x".into())],
        }
    }

    fn cond(col: usize, v: f64) -> Cond {
        Cond { col, op: CmpOp::Eq, value: Value::Number(v) }
    }

    #[test]
    fn difficulty_buckets() {
        let s = schema();
        let mut q = SqlAst { select: vec![SelectItem::bare(0)], ..SqlAst::count_star(0) };
        assert_eq!(q.components(), 0);
        assert_eq!(q.difficulty(), Difficulty::Easy);
        assert!(q.validate(&s).is_ok());

        // join + 2 where + group by: 1 + 2 + 1 = 4
        q.join = Some(Join { table: 1, on: (0, 2) });
        q.conds = vec![cond(1, 1.0), cond(3, 2.0)];
        q.group_by = Some(0);
        assert_eq!(q.components(), 4);
        assert_eq!(q.difficulty(), Difficulty::Hard);
        assert!(q.validate(&s).is_ok());

        // 2 aggregates + join + 2 where + group + order
        q.select = vec![SelectItem::bare(0), SelectItem::count_star(), SelectItem::agg(Agg::Max, 3)];
        q.order_by = Some(OrderBy { key: SelectItem::count_star(), dir: Direction::Desc, limit: Some(3) });
        assert!(q.components() >= 6);
        assert_eq!(q.difficulty(), Difficulty::Extra);
        assert!(q.validate(&s).is_ok());
    }

    #[test]
    fn canonicalize_sorts_and_is_idempotent() {
        let a = SqlAst { conds: vec![cond(1, 1.0), cond(1, 2.0)], ..SqlAst::count_star(0) };
        let b = SqlAst { conds: vec![cond(1, 2.0), cond(1, 1.0)], ..SqlAst::count_star(0) };
        assert_ne!(a, b);
        assert_eq!(a.canonicalize(), b.canonicalize());
        assert_eq!(a.canonicalize().canonicalize(), a.canonicalize());

        let j1 = SqlAst { join: Some(Join { table: 1, on: (0, 2) }), ..SqlAst::count_star(0) };
        let j2 = SqlAst { join: Some(Join { table: 1, on: (2, 0) }), ..SqlAst::count_star(0) };
        assert_eq!(j1.canonicalize(), j2.canonicalize());
    }

    #[test]
    fn typing_rules() {
        let s = schema();
        let sum_text = SqlAst { select: vec![SelectItem::agg(Agg::Sum, 0)], ..SqlAst::count_star(0) };
        assert!(sum_text.validate(&s).unwrap_err().to_string().contains("text column `name`"));
        let star = SqlAst { select: vec![SelectItem { agg: Agg::Max, col: None }], ..SqlAst::count_star(0) };
        assert!(star.validate(&s).is_err());
        let mixed = SqlAst { select: vec![SelectItem::bare(0), SelectItem::count_star()], ..SqlAst::count_star(0) };
        assert!(mixed.validate(&s).is_err());
        let out_of_scope = SqlAst { select: vec![SelectItem::bare(2)], ..SqlAst::count_star(0) };
        assert!(out_of_scope.validate(&s).is_err());
        let gt_text = SqlAst {
            conds: vec![Cond { col: 0, op: CmpOp::Gt, value: Value::Text("x".into()) }],
            ..SqlAst::count_star(0)
        };
        assert!(gt_text.validate(&s).is_err());
        let bad_join = SqlAst { join: Some(Join { table: 1, on: (0, 3) }), ..SqlAst::count_star(0) };
        assert!(bad_join.validate(&s).is_err());
    }
}
