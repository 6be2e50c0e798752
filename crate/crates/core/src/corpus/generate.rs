use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::families::{Family, Pool, FAMILIES};
use super::phrase::realize;
use super::{Corpus, CorpusError, ExampleRecord, Profile, Split};
use crate::sqlkit::{
    ast_to_actions, execute, render_sql, Agg, CmpOp, ColType, Cond, DatabaseInstance, Direction, Join, OrderBy,
    SchemaDef, SelectItem, SqlAst, TableData, Value, LIMITS,
};

const INTENT_ATTEMPTS: usize = 200;
const DB_REROLLS: usize = 10;
const PARAPHRASE_ATTEMPTS: usize = 60;

fn pick<T: Clone, R: Rng>(rng: &mut R, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())].clone()
}

struct Scope<'a> {
    family: &'a Family,
    schema: &'a SchemaDef,
    cols: Vec<usize>,
}

impl Scope<'_> {
    fn content(&self) -> Vec<usize> {
        self.cols.iter().copied().filter(|&c| self.family.pool(c).is_content()).collect()
    }

    fn of_type(&self, ty: ColType) -> Vec<usize> {
        self.content().into_iter().filter(|&c| self.schema.column_type(c) == Some(ty)).collect()
    }

    fn distinct<R: Rng>(&self, rng: &mut R, from: &[usize], k: usize) -> Vec<usize> {
        let mut xs = from.to_vec();
        xs.shuffle(rng);
        xs.truncate(k);
        xs
    }

    fn cond<R: Rng>(&self, rng: &mut R, col: usize) -> Cond {
        let pool = self.family.pool(col);
        let op = match pool.col_type() {
            ColType::Text => pick(rng, &[CmpOp::Eq, CmpOp::Eq, CmpOp::Ne]),
            ColType::Number => pick(rng, &CmpOp::ALL),
        };
        Cond { col, op, value: pick(rng, &pool.literals()) }
    }

    fn conds<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<Cond> {
        self.distinct(rng, &self.content(), n).into_iter().map(|c| self.cond(rng, c)).collect()
    }

    fn aggregate<R: Rng>(&self, rng: &mut R) -> SelectItem {
        let nums = self.of_type(ColType::Number);
        match rng.random_range(0..6) {
            0 | 1 => SelectItem::count_star(),
            2 => SelectItem::agg(pick(rng, &[Agg::Count, Agg::Min, Agg::Max]), pick(rng, &self.content())),
            _ if nums.is_empty() => SelectItem::count_star(),
            _ => SelectItem::agg(pick(rng, &[Agg::Sum, Agg::Avg, Agg::Min, Agg::Max]), pick(rng, &nums)),
        }
    }
}

fn table_scope<'a>(family: &'a Family, schema: &'a SchemaDef, tables: &[usize]) -> Scope<'a> {
    Scope { family, schema, cols: tables.iter().flat_map(|&t| schema.table_columns(t)).collect() }
}

/// A random foreign-key join: `(from, join)` with ON written from-side first.
fn fk_join<R: Rng>(rng: &mut R, schema: &SchemaDef) -> Option<(usize, Join)> {
    let fk = schema.foreign_keys.get(rng.random_range(0..schema.foreign_keys.len().max(1)))?;
    let a = schema.table_index(&fk.table)?;
    let b = schema.table_index(&fk.ref_table)?;
    let ca = schema.column_index(a, &fk.column)?;
    let cb = schema.column_index(b, &fk.ref_column)?;
    Some(if rng.random_bool(0.5) {
        (a, Join { table: b, on: (ca, cb) })
    } else {
        (b, Join { table: a, on: (cb, ca) })
    })
}

/// One intent drawn from the template kinds: select, aggregate, where,
/// join, group-by, order-limit.
fn intent<R: Rng>(rng: &mut R, family: &Family, schema: &SchemaDef) -> SqlAst {
    let single = rng.random_range(0..schema.tables.len());
    let base = |from| SqlAst { select: Vec::new(), from, join: None, conds: Vec::new(), group_by: None, order_by: None };
    match rng.random_range(0..6) {
        0 => {
            let s = table_scope(family, schema, &[single]);
            let k = rng.random_range(1..=2);
            let n = usize::from(rng.random_bool(0.3));
            SqlAst {
                select: s.distinct(rng, &s.content(), k).into_iter().map(SelectItem::bare).collect(),
                conds: s.conds(rng, n),
                ..base(single)
            }
        }
        1 => {
            let s = table_scope(family, schema, &[single]);
            let mut select = vec![s.aggregate(rng)];
            if rng.random_bool(0.25) {
                select.push(s.aggregate(rng));
            }
            let n = rng.random_range(0..=2);
            SqlAst { select, conds: s.conds(rng, n), ..base(single) }
        }
        2 => {
            let s = table_scope(family, schema, &[single]);
            let select = if rng.random_bool(0.3) {
                vec![SelectItem::count_star()]
            } else {
                vec![SelectItem::bare(pick(rng, &s.content()))]
            };
            let n = rng.random_range(1..=3);
            SqlAst { select, conds: s.conds(rng, n), ..base(single) }
        }
        3 => {
            let Some((from, join)) = fk_join(rng, schema) else { return intent(rng, family, schema) };
            let s = table_scope(family, schema, &[from, join.table]);
            let k = rng.random_range(1..=2);
            let n = usize::from(rng.random_bool(0.4));
            SqlAst {
                select: s.distinct(rng, &s.content(), k).into_iter().map(SelectItem::bare).collect(),
                join: Some(join),
                conds: s.conds(rng, n),
                ..base(from)
            }
        }
        4 => {
            let (from, join) = match rng.random_bool(0.25).then(|| fk_join(rng, schema)).flatten() {
                Some((f, j)) => (f, Some(j)),
                None => (single, None),
            };
            let tables: Vec<usize> = std::iter::once(from).chain(join.map(|j| j.table)).collect();
            let s = table_scope(family, schema, &tables);
            let g = pick(rng, &s.of_type(ColType::Text));
            let agg = s.aggregate(rng);
            let order_by = rng.random_bool(0.4).then(|| OrderBy {
                key: agg,
                dir: pick(rng, &[Direction::Asc, Direction::Desc]),
                limit: pick(rng, &[None, Some(1), Some(3)]),
            });
            let n = usize::from(rng.random_bool(0.3));
            SqlAst {
                select: vec![SelectItem::bare(g), agg],
                join,
                conds: s.conds(rng, n),
                group_by: Some(g),
                order_by,
                ..base(from)
            }
        }
        _ => {
            let s = table_scope(family, schema, &[single]);
            let k = rng.random_range(1..=2);
            let key = pick(rng, &s.of_type(ColType::Number));
            let n = usize::from(rng.random_bool(0.3));
            SqlAst {
                select: s.distinct(rng, &s.content(), k).into_iter().map(SelectItem::bare).collect(),
                conds: s.conds(rng, n),
                order_by: Some(OrderBy {
                    key: SelectItem::bare(key),
                    dir: pick(rng, &[Direction::Asc, Direction::Desc]),
                    limit: pick(rng, &LIMITS),
                }),
                ..base(single)
            }
        }
    }
}

fn random_db<R: Rng>(rng: &mut R, family: &Family, schema: &SchemaDef, rows: usize) -> DatabaseInstance {
    let mut tables = BTreeMap::new();
    for t in family.tables {
        let data: Vec<Vec<Value>> = (0..rows)
            .map(|r| {
                t.cols
                    .iter()
                    .map(|c| match c.pool {
                        Pool::Id => Value::Number((r + 1) as f64),
                        Pool::Ref(_) => Value::Number(rng.random_range(1..=rows) as f64),
                        Pool::Text(xs) => Value::Text(pick(rng, xs).to_owned()),
                        Pool::Num(xs) => Value::Number(pick(rng, xs)),
                    })
                    .collect()
            })
            .collect();
        tables.insert(
            t.name.to_owned(),
            TableData { columns: t.cols.iter().map(|c| c.name.to_owned()).collect(), rows: data },
        );
    }
    DatabaseInstance { schema_id: schema.id.clone(), tables }
}

/// Queries whose result coincides with another query's result.
fn collisions(asts: &[SqlAst], schema: &SchemaDef, db: &DatabaseInstance) -> usize {
    let mut counts: BTreeMap<Vec<Vec<Value>>, usize> = BTreeMap::new();
    for a in asts {
        *counts.entry(execute(a, schema, db).expect("generated query runs")).or_default() += 1;
    }
    counts.values().filter(|&&n| n > 1).sum()
}

fn group_sizes<R: Rng>(rng: &mut R, profile: &Profile) -> Vec<usize> {
    let groups = profile.groups_per_schema;
    let singles = (profile.singleton_fraction * groups as f64).round() as usize;
    let mut sizes: Vec<usize> = (0..groups)
        .map(|i| if i < singles { 1 } else { rng.random_range(profile.paraphrases_min..=profile.paraphrases_max) })
        .collect();
    sizes.shuffle(rng);
    sizes
}

/// Generates a corpus; the same seed and profile give the same corpus.
pub fn generate_corpus(seed: u64, profile: &Profile) -> Result<Corpus, CorpusError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::default();
    for s in 0..profile.num_schemas {
        let family = &FAMILIES[s % FAMILIES.len()];
        let schema = family.schema(format!("{}_{s}", family.name));
        let sizes = group_sizes(&mut rng, profile);

        let mut seen = HashSet::new();
        let mut groups: Vec<(SqlAst, Vec<Vec<String>>)> = Vec::new();
        let mut attempts = 0;
        while groups.len() < sizes.len() {
            attempts += 1;
            if attempts > INTENT_ATTEMPTS * sizes.len() {
                return Err(CorpusError::Config(format!(
                    "schema `{}`: only {} distinct intents found for {} groups",
                    schema.id,
                    groups.len(),
                    sizes.len()
                )));
            }
            let ast = intent(&mut rng, family, &schema);
            if ast.validate(&schema).is_err() || ast_to_actions(&ast, &schema).is_err() {
                continue;
            }
            if !seen.insert(ast.canonicalize()) {
                continue;
            }
            let want = sizes[groups.len()];
            let mut questions: Vec<Vec<String>> = Vec::new();
            for _ in 0..PARAPHRASE_ATTEMPTS {
                let q = realize(&mut rng, &schema, &ast);
                if !questions.contains(&q) {
                    questions.push(q);
                    if questions.len() == want {
                        break;
                    }
                }
            }
            if questions.len() == want {
                groups.push((ast, questions));
            }
        }

        let asts: Vec<SqlAst> = groups.iter().map(|(a, _)| a.clone()).collect();
        let mut best: Option<(usize, DatabaseInstance)> = None;
        for _ in 0..DB_REROLLS {
            let db = random_db(&mut rng, family, &schema, profile.rows_per_table);
            let c = collisions(&asts, &schema, &db);
            if best.as_ref().is_none_or(|(b, _)| c < *b) {
                best = Some((c, db));
            }
            if c == 0 {
                break;
            }
        }
        let db = best.expect("at least one roll").1;

        let splits = assign_splits(&mut rng, profile, &groups.iter().map(|(_, q)| q.len()).collect::<Vec<_>>());
        for (g, ((ast, questions), members)) in groups.into_iter().zip(splits).enumerate() {
            let group_id = format!("{}-g{g:04}", schema.id);
            let sql = render_sql(&ast, &schema);
            for (p, (question, split)) in questions.into_iter().zip(members).enumerate() {
                corpus.examples.push(ExampleRecord {
                    id: format!("{group_id}-p{p}"),
                    schema_id: schema.id.clone(),
                    split,
                    group_id: group_id.clone(),
                    question,
                    sql_text: sql.clone(),
                    gold_ast: ast.clone(),
                });
            }
        }
        corpus.schemas.push(schema);
        corpus.databases.push(db);
    }
    Ok(corpus)
}

/// Per-group member splits. With paraphrase hold-out, chosen multi-member
/// groups send their last paraphrase to dev or test and keep the rest in
/// train; otherwise whole groups move.
fn assign_splits<R: Rng>(rng: &mut R, profile: &Profile, sizes: &[usize]) -> Vec<Vec<Split>> {
    let mut out: Vec<Vec<Split>> = sizes.iter().map(|&n| vec![Split::Train; n]).collect();
    let mut eligible: Vec<usize> =
        (0..sizes.len()).filter(|&g| !profile.paraphrase_heldout || sizes[g] >= 2).collect();
    eligible.shuffle(rng);
    let n = eligible.len() as f64;
    let n_dev = (profile.dev_fraction * n).round() as usize;
    let n_test = ((profile.test_fraction * n).round() as usize).min(eligible.len() - n_dev);
    for (i, &g) in eligible.iter().take(n_dev + n_test).enumerate() {
        let split = if i < n_dev { Split::Dev } else { Split::Test };
        if profile.paraphrase_heldout {
            *out[g].last_mut().expect("multi-member group") = split;
        } else {
            out[g].fill(split);
        }
    }
    out
}
