#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use sun::sqlkit::{
    Agg, CmpOp, ColType, ColumnDef, Cond, DatabaseInstance, Direction, ForeignKey, Join, OrderBy, SchemaDef,
    SelectItem, SqlAst, TableData, TableDef, Value, LIMITS,
};

fn col(name: &str, col_type: ColType) -> ColumnDef {
    ColumnDef { name: name.into(), col_type }
}

fn text(s: &str) -> Value {
    Value::Text(s.into())
}

/// Three tables, two foreign keys, a mixed literal inventory.
pub fn concert_schema() -> SchemaDef {
    use ColType::{Number, Text};
    SchemaDef {
        id: "concerts".into(),
        tables: vec![
            TableDef {
                name: "singer".into(),
                columns: vec![col("singer_id", Number), col("name", Text), col("country", Text), col("age", Number)],
            },
            TableDef {
                name: "concert".into(),
                columns: vec![col("concert_id", Number), col("singer_id", Number), col("venue", Text), col("year", Number)],
            },
            TableDef { name: "stadium".into(), columns: vec![col("venue", Text), col("capacity", Number)] },
        ],
        foreign_keys: vec![
            ForeignKey {
                table: "concert".into(),
                column: "singer_id".into(),
                ref_table: "singer".into(),
                ref_column: "singer_id".into(),
            },
            ForeignKey {
                table: "concert".into(),
                column: "venue".into(),
                ref_table: "stadium".into(),
                ref_column: "venue".into(),
            },
        ],
        values: vec![
            Value::Number(1.0),
            Value::Number(2.0),
            Value::Number(30.0),
            Value::Number(2014.0),
            text("usa"),
            text("france"),
            text("arena"),
        ],
    }
}

/// pets(owner, kind, weight) with five rows and owners(name, city) with two.
pub fn pets_schema() -> SchemaDef {
    use ColType::{Number, Text};
    SchemaDef {
        id: "pets".into(),
        tables: vec![
            TableDef { name: "pets".into(), columns: vec![col("owner", Text), col("kind", Text), col("weight", Number)] },
            TableDef { name: "owners".into(), columns: vec![col("name", Text), col("city", Text)] },
        ],
        foreign_keys: vec![ForeignKey {
            table: "pets".into(),
            column: "owner".into(),
            ref_table: "owners".into(),
            ref_column: "name".into(),
        }],
        values: vec![text("cat"), text("dog"), text("ann"), Value::Number(4.0), Value::Number(100.0)],
    }
}

pub fn pets_db() -> DatabaseInstance {
    let row = |o: &str, k: &str, w: f64| vec![text(o), text(k), Value::Number(w)];
    let mut tables = BTreeMap::new();
    tables.insert(
        "pets".to_owned(),
        TableData {
            columns: vec!["owner".into(), "kind".into(), "weight".into()],
            rows: vec![
                row("ann", "cat", 3.0),
                row("bob", "dog", 10.0),
                row("ann", "dog", 7.0),
                row("cy", "cat", 2.0),
                row("bob", "cat", 5.0),
            ],
        },
    );
    tables.insert(
        "owners".to_owned(),
        TableData {
            columns: vec!["name".into(), "city".into()],
            rows: vec![vec![text("ann"), text("rome")], vec![text("bob"), text("oslo")]],
        },
    );
    DatabaseInstance { schema_id: "pets".into(), tables }
}

fn pick<T: Copy, R: Rng>(rng: &mut R, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn random_item<R: Rng>(rng: &mut R, scope: &[usize], group: Option<usize>, aggregate: Option<bool>) -> SelectItem {
    let agg = match aggregate {
        Some(false) => Agg::None,
        Some(true) => pick(rng, &[Agg::Count, Agg::Sum, Agg::Avg, Agg::Min, Agg::Max]),
        None => pick(rng, &[Agg::None, Agg::Count, Agg::Sum, Agg::Avg, Agg::Min, Agg::Max]),
    };
    if agg == Agg::Count && rng.random_bool(0.3) {
        return SelectItem { agg, col: None };
    }
    let col = match (agg, group) {
        (Agg::None, Some(g)) if rng.random_bool(0.8) => g,
        _ => pick(rng, scope),
    };
    SelectItem { agg, col: Some(col) }
}

/// Draws a query by sampling each clause independently and keeping the
/// first draw that passes `SqlAst::validate`. Knows nothing about actions.
pub fn random_ast<R: Rng>(rng: &mut R, schema: &SchemaDef) -> SqlAst {
    loop {
        let from = rng.random_range(0..schema.tables.len());
        let mut join = None;
        if schema.tables.len() > 1 && rng.random_bool(0.35) {
            let table = loop {
                let u = rng.random_range(0..schema.tables.len());
                if u != from {
                    break u;
                }
            };
            let both: Vec<usize> = schema.table_columns(from).chain(schema.table_columns(table)).collect();
            let a = pick(rng, &both);
            let other = if schema.column_table(a) == Some(from) { table } else { from };
            let b = pick(rng, &schema.table_columns(other).collect::<Vec<_>>());
            join = Some(Join { table, on: (a, b) });
        }
        let mut scope: Vec<usize> = schema.table_columns(from).collect();
        if let Some(j) = &join {
            scope.extend(schema.table_columns(j.table));
        }
        let group_by = rng.random_bool(0.3).then(|| pick(rng, &scope));
        let ordered = rng.random_bool(0.4);
        let aggregate = match (group_by, ordered) {
            (Some(_), _) => None,
            (None, true) => Some(false),
            (None, false) => Some(rng.random_bool(0.5)),
        };
        let n_select = rng.random_range(1..=3);
        let select = (0..n_select).map(|_| random_item(rng, &scope, group_by, aggregate)).collect();
        let n_conds = rng.random_range(0..=3);
        let conds = (0..n_conds)
            .filter(|_| !schema.values.is_empty())
            .map(|_| Cond {
                col: pick(rng, &scope),
                op: pick(rng, &CmpOp::ALL),
                value: schema.values[rng.random_range(0..schema.values.len())].clone(),
            })
            .collect();
        let key_aggregate = match group_by {
            Some(_) => rng.random_bool(0.7),
            None => false,
        };
        let order_by = ordered.then(|| OrderBy {
            key: random_item(rng, &scope, group_by, Some(key_aggregate)),
            dir: pick(rng, &[Direction::Asc, Direction::Desc]),
            limit: pick(rng, &LIMITS),
        });
        let ast = SqlAst { select, from, join, conds, group_by, order_by };
        if ast.validate(schema).is_ok() {
            return ast;
        }
    }
}
