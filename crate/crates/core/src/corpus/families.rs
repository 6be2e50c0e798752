use crate::sqlkit::{ColType, ColumnDef, ForeignKey, SchemaDef, TableDef, Value, MAX_VALUES};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Pool {
    /// Primary key, numbered from 1.
    Id,
    /// Foreign key into the named table's id column.
    Ref(&'static str),
    Text(&'static [&'static str]),
    Num(&'static [f64]),
}

pub(crate) struct ColSpec {
    pub name: &'static str,
    pub pool: Pool,
}

pub(crate) struct TableSpec {
    pub name: &'static str,
    pub cols: &'static [ColSpec],
}

pub(crate) struct Family {
    pub name: &'static str,
    pub tables: &'static [TableSpec],
}

const fn c(name: &'static str, pool: Pool) -> ColSpec {
    ColSpec { name, pool }
}

use Pool::{Id, Num, Ref, Text};

pub(crate) const FAMILIES: [Family; 4] = [
    Family {
        name: "music",
        tables: &[
            TableSpec {
                name: "singer",
                cols: &[
                    c("singer_id", Id),
                    c("singer_name", Text(&["adele", "drake", "shakira", "sting", "bjork"])),
                    c("country", Text(&["usa", "france", "japan", "brazil"])),
                    c("age", Num(&[25.0, 30.0, 35.0, 40.0, 45.0])),
                ],
            },
            TableSpec {
                name: "song",
                cols: &[
                    c("song_id", Id),
                    c("singer_id", Ref("singer")),
                    c("title", Text(&["hello", "halo", "roar", "yesterday", "imagine"])),
                    c("genre", Text(&["pop", "rock", "jazz", "soul"])),
                    c("sales", Num(&[100.0, 200.0, 300.0, 500.0])),
                ],
            },
        ],
    },
    Family {
        name: "school",
        tables: &[
            TableSpec {
                name: "student",
                cols: &[
                    c("student_id", Id),
                    c("student_name", Text(&["alice", "bruno", "chen", "dana", "emil"])),
                    c("major", Text(&["math", "physics", "history", "art"])),
                    c("age", Num(&[18.0, 19.0, 20.0, 21.0, 22.0])),
                ],
            },
            TableSpec {
                name: "enrollment",
                cols: &[
                    c("enrollment_id", Id),
                    c("student_id", Ref("student")),
                    c("course", Text(&["algebra", "optics", "poetry", "drawing"])),
                    c("grade", Num(&[60.0, 70.0, 80.0, 90.0])),
                    c("credits", Num(&[2.0, 3.0, 4.0])),
                ],
            },
        ],
    },
    Family {
        name: "shop",
        tables: &[
            TableSpec {
                name: "product",
                cols: &[
                    c("product_id", Id),
                    c("product_name", Text(&["lamp", "chair", "desk", "sofa", "shelf"])),
                    c("category", Text(&["office", "home", "garden"])),
                    c("price", Num(&[10.0, 20.0, 50.0, 100.0])),
                ],
            },
            TableSpec {
                name: "purchase",
                cols: &[
                    c("purchase_id", Id),
                    c("product_id", Ref("product")),
                    c("city", Text(&["paris", "berlin", "madrid", "rome"])),
                    c("quantity", Num(&[1.0, 2.0, 3.0, 5.0])),
                ],
            },
        ],
    },
    Family {
        name: "sports",
        tables: &[
            TableSpec {
                name: "team",
                cols: &[
                    c("team_id", Id),
                    c("team_name", Text(&["lions", "tigers", "bears", "wolves"])),
                    c("home_city", Text(&["boston", "denver", "miami", "seattle"])),
                    c("founded", Num(&[1950.0, 1970.0, 1990.0, 2005.0])),
                ],
            },
            TableSpec {
                name: "player",
                cols: &[
                    c("player_id", Id),
                    c("team_id", Ref("team")),
                    c("player_name", Text(&["ivan", "jose", "kofi", "liam", "marco"])),
                    c("position", Text(&["guard", "forward", "center"])),
                    c("goals", Num(&[0.0, 5.0, 10.0, 20.0])),
                ],
            },
        ],
    },
];

impl Pool {
    pub fn col_type(self) -> ColType {
        match self {
            Pool::Text(_) => ColType::Text,
            _ => ColType::Number,
        }
    }

    /// Whether the column carries content a question can talk about.
    pub fn is_content(self) -> bool {
        matches!(self, Pool::Text(_) | Pool::Num(_))
    }

    pub fn literals(self) -> Vec<Value> {
        match self {
            Pool::Text(xs) => xs.iter().map(|s| Value::Text((*s).to_owned())).collect(),
            Pool::Num(xs) => xs.iter().map(|n| Value::Number(*n)).collect(),
            Pool::Id | Pool::Ref(_) => Vec::new(),
        }
    }
}

impl Family {
    pub fn schema(&self, id: String) -> SchemaDef {
        let tables = self
            .tables
            .iter()
            .map(|t| TableDef {
                name: t.name.to_owned(),
                columns: t.cols.iter().map(|c| ColumnDef { name: c.name.to_owned(), col_type: c.pool.col_type() }).collect(),
            })
            .collect();
        let mut foreign_keys = Vec::new();
        for t in self.tables {
            for col in t.cols {
                if let Pool::Ref(target) = col.pool {
                    let key = self.table(target).cols.iter().find(|c| matches!(c.pool, Pool::Id)).expect("id column");
                    foreign_keys.push(ForeignKey {
                        table: t.name.to_owned(),
                        column: col.name.to_owned(),
                        ref_table: target.to_owned(),
                        ref_column: key.name.to_owned(),
                    });
                }
            }
        }
        let mut values: Vec<Value> = Vec::new();
        for v in self.tables.iter().flat_map(|t| t.cols).flat_map(|c| c.pool.literals()) {
            if !values.contains(&v) && values.len() < MAX_VALUES {
                values.push(v);
            }
        }
        SchemaDef { id, tables, foreign_keys, values }
    }

    pub fn table(&self, name: &str) -> &TableSpec {
        self.tables.iter().find(|t| t.name == name).expect("family table")
    }

    /// Pool of a global column index.
    pub fn pool(&self, col: usize) -> Pool {
        self.tables.iter().flat_map(|t| t.cols).nth(col).expect("family column").pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_yield_valid_schemas() {
        for f in &FAMILIES {
            let s = f.schema(format!("{}_0", f.name));
            s.validate().unwrap();
            assert_eq!(s.foreign_keys.len(), 1);
            let content: Vec<&str> =
                f.tables.iter().flat_map(|t| t.cols).filter(|c| c.pool.is_content()).map(|c| c.name).collect();
            for (i, a) in content.iter().enumerate() {
                assert!(!content[..i].contains(a), "content column `{a}` is ambiguous across tables");
            }
        }
    }
}
