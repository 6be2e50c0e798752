//! Synthetic text-to-SQL corpora with controlled groups of equivalent
//! questions, their JSON file format, and paired batching.

mod families;
mod generate;
mod phrase;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sqlkit::{ast_to_actions, parse_sql, DatabaseInstance, SchemaDef, SqlAst, SqlError};

pub use generate::generate_corpus;

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid profile: {0}")]
    Config(String),
    #[error("`{id}`: {msg}")]
    Invalid { id: String, msg: String },
    #[error("`{id}`: {source}")]
    Sql {
        id: String,
        #[source]
        source: SqlError,
    },
    #[error("malformed corpus JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(id: &str, msg: impl Into<String>) -> CorpusError {
    CorpusError::Invalid { id: id.to_owned(), msg: msg.into() }
}

/// Generator knobs. The split fields control how dev and test are carved
/// out; with `paraphrase_heldout` every held-out question keeps a sibling
/// paraphrase in train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub num_schemas: usize,
    pub groups_per_schema: usize,
    pub paraphrases_min: usize,
    pub paraphrases_max: usize,
    pub singleton_fraction: f64,
    pub rows_per_table: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub paraphrase_heldout: bool,
}

impl Default for Profile {
    fn default() -> Self {
        Self {
            num_schemas: 1,
            groups_per_schema: 500,
            paraphrases_min: 2,
            paraphrases_max: 4,
            singleton_fraction: 0.3,
            rows_per_table: 12,
            dev_fraction: 0.2,
            test_fraction: 0.2,
            paraphrase_heldout: true,
        }
    }
}

impl Profile {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Config(m.to_owned()));
        if self.num_schemas == 0 || self.groups_per_schema == 0 {
            return bad("need at least one schema and one group");
        }
        if self.paraphrases_min < 2 || self.paraphrases_max < self.paraphrases_min {
            return bad("paraphrase range must satisfy 2 <= min <= max");
        }
        if self.paraphrases_max > 12 {
            return bad("at most 12 paraphrases per group");
        }
        if !(0.0..1.0).contains(&self.singleton_fraction) {
            return bad("singleton_fraction must lie in [0, 1)");
        }
        if self.rows_per_table == 0 {
            return bad("rows_per_table must be positive");
        }
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if !frac(self.dev_fraction) || !frac(self.test_fraction) || self.dev_fraction + self.test_fraction > 1.0 {
            return bad("dev_fraction and test_fraction must be in [0, 1] and sum to at most 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One question with its gold query. Records sharing `group_id` ask the
/// same thing.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub id: String,
    pub schema_id: String,
    pub split: Split,
    pub group_id: String,
    pub question: Vec<String>,
    pub sql_text: String,
    pub gold_ast: SqlAst,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub schemas: Vec<SchemaDef>,
    pub databases: Vec<DatabaseInstance>,
    pub examples: Vec<ExampleRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleJson {
    id: String,
    schema_id: String,
    split: Split,
    group_id: String,
    question: Vec<String>,
    sql: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusJson {
    version: u32,
    schemas: Vec<SchemaDef>,
    databases: Vec<DatabaseInstance>,
    examples: Vec<ExampleJson>,
}

impl Corpus {
    pub fn schema(&self, id: &str) -> Option<&SchemaDef> {
        self.schemas.iter().find(|s| s.id == id)
    }

    pub fn database(&self, schema_id: &str) -> Option<&DatabaseInstance> {
        self.databases.iter().find(|d| d.schema_id == schema_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ExampleRecord)> + '_ {
        self.examples.iter().enumerate().filter(move |(_, e)| e.split == split)
    }

    pub fn to_json(&self) -> Result<String, CorpusError> {
        let file = CorpusJson {
            version: CORPUS_VERSION,
            schemas: self.schemas.clone(),
            databases: self.databases.clone(),
            examples: self
                .examples
                .iter()
                .map(|e| ExampleJson {
                    id: e.id.clone(),
                    schema_id: e.schema_id.clone(),
                    split: e.split,
                    group_id: e.group_id.clone(),
                    question: e.question.clone(),
                    sql: e.sql_text.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    /// Parses and fully validates a corpus file's contents.
    pub fn from_json(text: &str) -> Result<Corpus, CorpusError> {
        let file: CorpusJson = serde_json::from_str(text)?;
        if file.version != CORPUS_VERSION {
            return Err(invalid("version", format!("unsupported corpus version {}", file.version)));
        }
        let mut corpus = Corpus { schemas: file.schemas, databases: file.databases, examples: Vec::new() };
        corpus.check_schemas()?;
        for e in file.examples {
            let schema = corpus
                .schema(&e.schema_id)
                .ok_or_else(|| invalid(&e.schema_id, format!("example `{}` references a missing schema", e.id)))?;
            let gold_ast = parse_sql(&e.sql, schema).map_err(|source| CorpusError::Sql { id: e.id.clone(), source })?;
            corpus.examples.push(ExampleRecord {
                id: e.id,
                schema_id: e.schema_id,
                split: e.split,
                group_id: e.group_id,
                question: e.question,
                sql_text: e.sql,
                gold_ast,
            });
        }
        corpus.validate()?;
        Ok(corpus)
    }

    fn check_schemas(&self) -> Result<(), CorpusError> {
        let mut ids = HashSet::new();
        for s in &self.schemas {
            if !ids.insert(&s.id) {
                return Err(invalid(&s.id, "duplicate schema id"));
            }
            s.validate().map_err(|source| CorpusError::Sql { id: s.id.clone(), source })?;
            let n = self.databases.iter().filter(|d| d.schema_id == s.id).count();
            if n != 1 {
                return Err(invalid(&s.id, format!("schema has {n} databases, expected 1")));
            }
        }
        for d in &self.databases {
            let s = self.schema(&d.schema_id).ok_or_else(|| invalid(&d.schema_id, "database for a missing schema"))?;
            d.validate(s).map_err(|source| CorpusError::Sql { id: d.schema_id.clone(), source })?;
        }
        Ok(())
    }

    /// Every consistency rule: references, question tokens, encodable gold
    /// queries, and equal canonical queries within each group.
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.check_schemas()?;
        let mut ids = HashSet::new();
        let mut groups: BTreeMap<&str, (&str, &str, SqlAst)> = BTreeMap::new();
        for e in &self.examples {
            if !ids.insert(&e.id) {
                return Err(invalid(&e.id, "duplicate example id"));
            }
            let schema = self
                .schema(&e.schema_id)
                .ok_or_else(|| invalid(&e.schema_id, format!("example `{}` references a missing schema", e.id)))?;
            if e.question.is_empty() || e.question.iter().any(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
                return Err(invalid(&e.id, "question must be a nonempty list of nonempty tokens"));
            }
            if e.question.iter().any(|t| t.chars().any(char::is_uppercase)) {
                return Err(invalid(&e.id, "question tokens must be lowercase"));
            }
            ast_to_actions(&e.gold_ast, schema).map_err(|source| CorpusError::Sql { id: e.id.clone(), source })?;
            let canon = e.gold_ast.canonicalize();
            match groups.get(e.group_id.as_str()) {
                None => {
                    groups.insert(&e.group_id, (&e.schema_id, &e.id, canon));
                }
                Some((schema_id, first, other)) => {
                    if *schema_id != e.schema_id {
                        return Err(invalid(&e.group_id, format!("group spans schemas (`{first}` vs `{}`)", e.id)));
                    }
                    if *other != canon {
                        return Err(invalid(
                            &e.group_id,
                            format!("group members `{first}` and `{}` have different queries", e.id),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    fs::write(path, corpus.to_json()?)?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    Corpus::from_json(&fs::read_to_string(path)?)
}

/// Indices into `Corpus::examples`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchItem {
    /// A record with an equivalent partner from its group.
    Paired { record: usize, partner: usize },
    /// A record with no equivalent sibling in train.
    Singleton { record: usize },
}

impl BatchItem {
    pub fn record(&self) -> usize {
        match *self {
            BatchItem::Paired { record, .. } | BatchItem::Singleton { record } => record,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One epoch of batches over the train split. Order and partners are
/// deterministic in `seed`; partners are drawn uniformly from the rest of
/// the record's train group.
pub fn make_batches(corpus: &Corpus, batch_size: usize, seed: u64) -> Result<Vec<Batch>, CorpusError> {
    if batch_size == 0 {
        return Err(CorpusError::Config("batch_size must be positive".into()));
    }
    let train: Vec<usize> = corpus.split(Split::Train).map(|(i, _)| i).collect();
    if train.is_empty() {
        return Err(CorpusError::Config("the train split is empty".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &train {
        groups.entry(corpus.examples[i].group_id.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = train;
    order.shuffle(&mut rng);
    let items: Vec<BatchItem> = order
        .into_iter()
        .map(|record| {
            let members = &groups[corpus.examples[record].group_id.as_str()];
            if members.len() < 2 {
                return BatchItem::Singleton { record };
            }
            let others: Vec<usize> = members.iter().copied().filter(|&m| m != record).collect();
            BatchItem::Paired { record, partner: others[rng.random_range(0..others.len())] }
        })
        .collect();
    Ok(items.chunks(batch_size).map(|c| Batch { items: c.to_vec() }).collect())
}
