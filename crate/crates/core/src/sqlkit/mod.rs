//! The toy SQL universe: schemas, ASTs, grammar actions with exact
//! admissibility, SQL text, canonical forms and an in-memory executor.

mod ast;
mod exec;
mod grammar;
mod schema;
mod sql;

pub use ast::{Agg, CmpOp, Cond, Difficulty, Direction, Join, OrderBy, SelectItem, SqlAst, MAX_CONDS, MAX_SELECT};
pub use exec::{execute, DatabaseInstance, ResultTable, TableData};
pub use grammar::{
    actions_to_ast, admissible_actions, ast_to_actions, random_admissible_walk, Action, GrammarState, ItemKind,
    NonTerminal, QueryShape, Rule, Slot, LIMITS, NUM_RULES, VALUE_BASE,
};
pub use schema::{format_number, name_tokens, ColType, ColumnDef, ForeignKey, SchemaDef, TableDef, Value, MAX_VALUES};
pub use sql::{parse_sql, render_sql};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqlError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("invalid query: {0}")]
    Validation(String),
    #[error("action {pos}: {msg}")]
    Action { pos: usize, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("schema `{schema}`: {msg}")]
    Schema { schema: String, msg: String },
    #[error("execution: {0}")]
    Execution(String),
}
