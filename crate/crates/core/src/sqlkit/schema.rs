use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::SqlError;

/// Upper bound on a schema's literal inventory; value rules are indexed by
/// position in [`SchemaDef::values`].
pub const MAX_VALUES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColType {
    Text,
    Number,
}

/// A cell or literal. Numbers sort before text; numbers compare by
/// `total_cmp`, text lexicographically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Value {
    pub fn col_type(&self) -> ColType {
        match self {
            Value::Number(_) => ColType::Number,
            Value::Text(_) => ColType::Text,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            Value::Text(_) => None,
        }
    }

    /// The single lowercase token a question uses to mention this value.
    pub fn token(&self) -> String {
        match self {
            Value::Number(n) => format_number(*n),
            Value::Text(s) => s.to_lowercase(),
        }
    }
}

pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Number(a), Value::Number(b)) => a.total_cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Number(_), Value::Text(_)) => Ordering::Less,
            (Value::Text(_), Value::Number(_)) => Ordering::Greater,
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Number(n) => {
                0u8.hash(state);
                n.to_bits().hash(state);
            }
            Value::Text(s) => {
                1u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) => f.write_str(&format_number(*n)),
            Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub col_type: ColType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub table: String,
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

/// Tables, typed columns, foreign keys and the literal inventory that query
/// conditions may draw on.
///
/// Columns are addressed by a global index: tables in declaration order,
/// columns in declaration order within each table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub id: String,
    pub tables: Vec<TableDef>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default)]
    pub values: Vec<Value>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Words of an identifier, as they appear in the serialized encoder input.
pub fn name_tokens(name: &str) -> Vec<String> {
    name.split('_').filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

impl SchemaDef {
    pub fn num_columns(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Global column indices belonging to `table`.
    pub fn table_columns(&self, table: usize) -> Range<usize> {
        let start: usize = self.tables[..table].iter().map(|t| t.columns.len()).sum();
        start..start + self.tables[table].columns.len()
    }

    /// `(table index, column)` for a global column index.
    pub fn column(&self, global: usize) -> Option<(usize, &ColumnDef)> {
        let mut offset = 0;
        for (t, table) in self.tables.iter().enumerate() {
            if global < offset + table.columns.len() {
                return Some((t, &table.columns[global - offset]));
            }
            offset += table.columns.len();
        }
        None
    }

    pub fn column_table(&self, global: usize) -> Option<usize> {
        self.column(global).map(|(t, _)| t)
    }

    pub fn column_type(&self, global: usize) -> Option<ColType> {
        self.column(global).map(|(_, c)| c.col_type)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn column_index(&self, table: usize, name: &str) -> Option<usize> {
        let range = self.table_columns(table);
        self.tables[table]
            .columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
            .map(|i| range.start + i)
    }

    pub fn has_literal_of(&self, ty: ColType) -> bool {
        self.values.iter().any(|v| v.col_type() == ty)
    }

    pub fn value_index(&self, v: &Value) -> Option<usize> {
        self.values.iter().position(|x| x == v)
    }

    /// Structural checks: identifiers, uniqueness, foreign keys and the
    /// literal inventory.
    pub fn validate(&self) -> Result<(), SqlError> {
        let err = |msg: String| Err(SqlError::Schema { schema: self.id.clone(), msg });
        if self.tables.is_empty() {
            return err("no tables".into());
        }
        for (i, t) in self.tables.iter().enumerate() {
            if !is_identifier(&t.name) {
                return err(format!("table name `{}` is not a lowercase identifier", t.name));
            }
            if self.tables[..i].iter().any(|o| o.name == t.name) {
                return err(format!("duplicate table `{}`", t.name));
            }
            if t.columns.is_empty() {
                return err(format!("table `{}` has no columns", t.name));
            }
            for (j, c) in t.columns.iter().enumerate() {
                if !is_identifier(&c.name) {
                    return err(format!("column name `{}` is not a lowercase identifier", c.name));
                }
                if t.columns[..j].iter().any(|o| o.name == c.name) {
                    return err(format!("duplicate column `{}.{}`", t.name, c.name));
                }
            }
        }
        for fk in &self.foreign_keys {
            let lookup = |table: &str, col: &str| {
                let t = self.tables.iter().find(|t| t.name == table)?;
                t.columns.iter().find(|c| c.name == col).map(|c| c.col_type)
            };
            match (lookup(&fk.table, &fk.column), lookup(&fk.ref_table, &fk.ref_column)) {
                (Some(a), Some(b)) if a == b => {}
                (Some(_), Some(_)) => {
                    return err(format!(
                        "foreign key {}.{} -> {}.{} joins different types",
                        fk.table, fk.column, fk.ref_table, fk.ref_column
                    ))
                }
                _ => {
                    return err(format!(
                        "foreign key {}.{} -> {}.{} names a missing column",
                        fk.table, fk.column, fk.ref_table, fk.ref_column
                    ))
                }
            }
        }
        if self.values.len() > MAX_VALUES {
            return err(format!("{} literals exceed the limit of {MAX_VALUES}", self.values.len()));
        }
        for (i, v) in self.values.iter().enumerate() {
            if let Value::Number(n) = v {
                if !n.is_finite() {
                    return err("non-finite literal".into());
                }
            }
            if self.values[..i].contains(v) {
                return err(format!("duplicate literal {v}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SchemaDef {
        SchemaDef {
            id: "s".into(),
            tables: vec![
                TableDef {
                    name: "t".into(),
                    columns: vec![
                        ColumnDef { name: "a".into(), col_type: ColType::Text },
                        ColumnDef { name: "n".into(), col_type: ColType::Number },
                    ],
                },
                TableDef {
                    name: "u".into(),
                    columns: vec![ColumnDef { name: "birth_date".into(), col_type: ColType::Text }],
                },
            ],
            foreign_keys: vec![],
            values: vec![Value::Text("x".into()), Value::Number(3.0)],
        }
    }

    #[test]
    fn global_column_indexing() {
        let s = tiny();
        assert_eq!(s.num_columns(), 3);
        assert_eq!(s.table_columns(1), 2..3);
        assert_eq!(s.column(2).unwrap().1.name, "birth_date");
        assert_eq!(s.column_index(0, "N"), Some(1));
        assert!(s.column(3).is_none());
        assert_eq!(name_tokens("birth_date"), vec!["birth", "date"]);
    }

    #[test]
    fn validation_catches_bad_schemas() {
        assert!(tiny().validate().is_ok());
        let mut s = tiny();
        s.tables[1].columns.clear();
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.foreign_keys.push(ForeignKey {
            table: "t".into(),
            column: "n".into(),
            ref_table: "u".into(),
            ref_column: "birth_date".into(),
        });
        assert!(s.validate().unwrap_err().to_string().contains("different types"));
        let mut s = tiny();
        s.values.push(Value::Number(3.0));
        assert!(s.validate().is_err());
    }

    #[test]
    fn value_order_and_display() {
        let mut v = vec![Value::Text("b".into()), Value::Number(2.0), Value::Text("a".into()), Value::Number(-1.0)];
        v.sort();
        assert_eq!(v[0], Value::Number(-1.0));
        assert_eq!(v[3], Value::Text("b".into()));
        assert_eq!(Value::Text("o'k".into()).to_string(), "'o''k'");
        assert_eq!(Value::Number(30.0).to_string(), "30");
        assert_eq!(Value::Number(2.5).to_string(), "2.5");
    }
}
