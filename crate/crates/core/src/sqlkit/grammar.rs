use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ast::{Agg, CmpOp, Cond, Direction, Join, OrderBy, SelectItem, SqlAst, MAX_CONDS, MAX_SELECT};
use super::schema::{ColType, SchemaDef, MAX_VALUES};
use super::SqlError;

const QUERY_BASE: usize = 0;
const SELECT_BASE: usize = 48;
const ITEM_BASE: usize = 51;
const COND_BASE: usize = 58;
const ORDER_KEY_BASE: usize = 62;
const LIMIT_BASE: usize = 69;
/// First value rule; rule `VALUE_BASE + i` picks literal `i`.
pub const VALUE_BASE: usize = 75;

/// Size of the rule inventory. Value rules `VALUE_BASE + i` pick literal `i`
/// of the schema's inventory.
pub const NUM_RULES: usize = VALUE_BASE + MAX_VALUES;

/// The LIMIT choices the grammar can express.
pub const LIMITS: [Option<u32>; 6] = [None, Some(1), Some(2), Some(3), Some(5), Some(10)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    ApplyRule(usize),
    SelectTable(usize),
    SelectColumn(usize),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ApplyRule(r) => match Rule::from_id(*r) {
                Some(rule) => write!(f, "ApplyRule({rule})"),
                None => write!(f, "ApplyRule(#{r})"),
            },
            Action::SelectTable(t) => write!(f, "SelectTable({t})"),
            Action::SelectColumn(c) => write!(f, "SelectColumn({c})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NonTerminal {
    Query,
    FromTable,
    JoinTable,
    OnLeft,
    OnRight,
    GroupCol,
    Select,
    Item,
    ItemCol,
    Cond,
    CondCol,
    Value,
    OrderKey,
    OrderCol,
    Limit,
}

/// What kind of action expands a non-terminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Rules(Range<usize>),
    Table,
    Column,
}

impl NonTerminal {
    pub const ALL: [NonTerminal; 15] = [
        NonTerminal::Query,
        NonTerminal::FromTable,
        NonTerminal::JoinTable,
        NonTerminal::OnLeft,
        NonTerminal::OnRight,
        NonTerminal::GroupCol,
        NonTerminal::Select,
        NonTerminal::Item,
        NonTerminal::ItemCol,
        NonTerminal::Cond,
        NonTerminal::CondCol,
        NonTerminal::Value,
        NonTerminal::OrderKey,
        NonTerminal::OrderCol,
        NonTerminal::Limit,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn slot(self) -> Slot {
        use NonTerminal::*;
        match self {
            Query => Slot::Rules(QUERY_BASE..SELECT_BASE),
            Select => Slot::Rules(SELECT_BASE..ITEM_BASE),
            Item => Slot::Rules(ITEM_BASE..COND_BASE),
            Cond => Slot::Rules(COND_BASE..ORDER_KEY_BASE),
            OrderKey => Slot::Rules(ORDER_KEY_BASE..LIMIT_BASE),
            Limit => Slot::Rules(LIMIT_BASE..VALUE_BASE),
            Value => Slot::Rules(VALUE_BASE..NUM_RULES),
            FromTable | JoinTable => Slot::Table,
            OnLeft | OnRight | GroupCol | ItemCol | CondCol | OrderCol => Slot::Column,
        }
    }
}

/// Shape of a select item or an ORDER BY key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ItemKind {
    Bare,
    Count,
    CountStar,
    Sum,
    Avg,
    Min,
    Max,
}

impl ItemKind {
    pub const ALL: [ItemKind; 7] =
        [ItemKind::Bare, ItemKind::Count, ItemKind::CountStar, ItemKind::Sum, ItemKind::Avg, ItemKind::Min, ItemKind::Max];

    pub fn of(item: &SelectItem) -> Self {
        match (item.agg, item.col) {
            (Agg::Count, None) => ItemKind::CountStar,
            (Agg::None, _) => ItemKind::Bare,
            (Agg::Count, _) => ItemKind::Count,
            (Agg::Sum, _) => ItemKind::Sum,
            (Agg::Avg, _) => ItemKind::Avg,
            (Agg::Min, _) => ItemKind::Min,
            (Agg::Max, _) => ItemKind::Max,
        }
    }

    pub fn agg(self) -> Agg {
        match self {
            ItemKind::Bare => Agg::None,
            ItemKind::Count | ItemKind::CountStar => Agg::Count,
            ItemKind::Sum => Agg::Sum,
            ItemKind::Avg => Agg::Avg,
            ItemKind::Min => Agg::Min,
            ItemKind::Max => Agg::Max,
        }
    }

    pub fn has_column(self) -> bool {
        self != ItemKind::CountStar
    }

    pub fn needs_number(self) -> bool {
        matches!(self, ItemKind::Sum | ItemKind::Avg)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Top-level clause layout, fixed by the first action of every query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QueryShape {
    pub join: bool,
    pub n_where: usize,
    pub group: bool,
    pub order: Option<Direction>,
}

impl QueryShape {
    pub fn of(ast: &SqlAst) -> Self {
        Self {
            join: ast.join.is_some(),
            n_where: ast.conds.len(),
            group: ast.group_by.is_some(),
            order: ast.order_by.map(|o| o.dir),
        }
    }
}

/// A production of the grammar, identified by its rule id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    Query(QueryShape),
    Select(usize),
    Item(ItemKind),
    Cond(CmpOp),
    OrderKey(ItemKind),
    Limit(Option<u32>),
    Value(usize),
}

impl Rule {
    pub fn id(self) -> usize {
        match self {
            Rule::Query(s) => {
                let order = match s.order {
                    None => 0,
                    Some(Direction::Asc) => 1,
                    Some(Direction::Desc) => 2,
                };
                QUERY_BASE + usize::from(s.join) * 24 + s.n_where * 6 + usize::from(s.group) * 3 + order
            }
            Rule::Select(k) => SELECT_BASE + k - 1,
            Rule::Item(k) => ITEM_BASE + k.index(),
            Rule::Cond(op) => COND_BASE + op as usize,
            Rule::OrderKey(k) => ORDER_KEY_BASE + k.index(),
            Rule::Limit(l) => LIMIT_BASE + LIMITS.iter().position(|x| *x == l).expect("limit in inventory"),
            Rule::Value(i) => VALUE_BASE + i,
        }
    }

    pub fn from_id(id: usize) -> Option<Rule> {
        Some(match id {
            _ if id < SELECT_BASE => {
                let r = id - QUERY_BASE;
                Rule::Query(QueryShape {
                    join: r / 24 == 1,
                    n_where: (r % 24) / 6,
                    group: (r % 6) / 3 == 1,
                    order: [None, Some(Direction::Asc), Some(Direction::Desc)][r % 3],
                })
            }
            _ if id < ITEM_BASE => Rule::Select(id - SELECT_BASE + 1),
            _ if id < COND_BASE => Rule::Item(ItemKind::ALL[id - ITEM_BASE]),
            _ if id < ORDER_KEY_BASE => Rule::Cond(CmpOp::ALL[id - COND_BASE]),
            _ if id < LIMIT_BASE => Rule::OrderKey(ItemKind::ALL[id - ORDER_KEY_BASE]),
            _ if id < VALUE_BASE => Rule::Limit(LIMITS[id - LIMIT_BASE]),
            _ if id < NUM_RULES => Rule::Value(id - VALUE_BASE),
            _ => return None,
        })
    }

    /// The non-terminal this rule expands.
    pub fn lhs(self) -> NonTerminal {
        match self {
            Rule::Query(_) => NonTerminal::Query,
            Rule::Select(_) => NonTerminal::Select,
            Rule::Item(_) => NonTerminal::Item,
            Rule::Cond(_) => NonTerminal::Cond,
            Rule::OrderKey(_) => NonTerminal::OrderKey,
            Rule::Limit(_) => NonTerminal::Limit,
            Rule::Value(_) => NonTerminal::Value,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Query(s) => write!(
                f,
                "Query(join={}, where={}, group={}, order={})",
                s.join,
                s.n_where,
                s.group,
                match s.order {
                    None => "none",
                    Some(Direction::Asc) => "asc",
                    Some(Direction::Desc) => "desc",
                }
            ),
            Rule::Select(k) => write!(f, "Select({k})"),
            Rule::Item(k) => write!(f, "Item({k:?})"),
            Rule::Cond(op) => write!(f, "Cond({})", op.symbol()),
            Rule::OrderKey(k) => write!(f, "OrderKey({k:?})"),
            Rule::Limit(None) => f.write_str("Limit(none)"),
            Rule::Limit(Some(n)) => write!(f, "Limit({n})"),
            Rule::Value(i) => write!(f, "Value({i})"),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct PendingCond {
    op: Option<CmpOp>,
    col: Option<usize>,
    value: Option<usize>,
}

/// Incremental parse of an action prefix against one schema.
///
/// The frontier is a stack of pending non-terminals; its top is expanded
/// next. [`GrammarState::admissible`] returns exactly the actions after which
/// the prefix still extends to a complete, valid query.
#[derive(Debug, Clone)]
pub struct GrammarState<'s> {
    schema: &'s SchemaDef,
    stack: Vec<NonTerminal>,
    emitted: usize,
    shape: Option<QueryShape>,
    from: Option<usize>,
    join_table: Option<usize>,
    on_left: Option<usize>,
    on_right: Option<usize>,
    group: Option<usize>,
    items: Vec<(ItemKind, Option<usize>)>,
    conds: Vec<PendingCond>,
    order_kind: Option<ItemKind>,
    order_col: Option<usize>,
    limit: Option<Option<u32>>,
}

impl<'s> GrammarState<'s> {
    pub fn new(schema: &'s SchemaDef) -> Self {
        Self {
            schema,
            stack: vec![NonTerminal::Query],
            emitted: 0,
            shape: None,
            from: None,
            join_table: None,
            on_left: None,
            on_right: None,
            group: None,
            items: Vec::new(),
            conds: Vec::new(),
            order_kind: None,
            order_col: None,
            limit: None,
        }
    }

    pub fn schema(&self) -> &'s SchemaDef {
        self.schema
    }

    /// The non-terminal to expand next, `None` once complete.
    pub fn frontier(&self) -> Option<NonTerminal> {
        self.stack.last().copied()
    }

    pub fn pending(&self) -> &[NonTerminal] {
        &self.stack
    }

    pub fn is_complete(&self) -> bool {
        self.stack.is_empty()
    }

    /// Number of actions applied so far.
    pub fn len(&self) -> usize {
        self.emitted
    }

    pub fn is_empty(&self) -> bool {
        self.emitted == 0
    }

    fn scope(&self) -> Vec<usize> {
        let mut t = Vec::with_capacity(2);
        t.extend(self.from);
        t.extend(self.join_table);
        t
    }

    fn scope_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.scope().into_iter().flat_map(|t| self.schema.table_columns(t))
    }

    fn condable(&self, col: usize) -> bool {
        self.schema.column_type(col).is_some_and(|ty| self.schema.has_literal_of(ty))
    }

    fn any_condable(&self, tables: &[usize]) -> bool {
        tables.iter().flat_map(|&t| self.schema.table_columns(t)).any(|c| self.condable(c))
    }

    fn compatible(&self, a: usize, b: usize) -> bool {
        let ta: Vec<ColType> = self.schema.table_columns(a).filter_map(|c| self.schema.column_type(c)).collect();
        self.schema.table_columns(b).any(|c| self.schema.column_type(c).is_some_and(|ty| ta.contains(&ty)))
    }

    fn join_ok(&self, from: usize, other: usize, shape: &QueryShape) -> bool {
        from != other && self.compatible(from, other) && (shape.n_where == 0 || self.any_condable(&[from, other]))
    }

    fn from_ok(&self, t: usize, shape: &QueryShape) -> bool {
        if shape.join {
            (0..self.schema.tables.len()).any(|u| self.join_ok(t, u, shape))
        } else {
            shape.n_where == 0 || self.any_condable(&[t])
        }
    }

    fn number_in_scope(&self) -> bool {
        self.scope_columns().any(|c| self.schema.column_type(c) == Some(ColType::Number))
    }

    fn kind_ok(&self, k: ItemKind) -> bool {
        !k.needs_number() || self.number_in_scope()
    }

    fn columns_for(&self, kind: ItemKind) -> Vec<usize> {
        match (kind, self.group) {
            (ItemKind::Bare, Some(g)) => vec![g],
            (k, _) if k.needs_number() => {
                self.scope_columns().filter(|&c| self.schema.column_type(c) == Some(ColType::Number)).collect()
            }
            _ => self.scope_columns().collect(),
        }
    }

    fn shape(&self) -> QueryShape {
        self.shape.expect("query rule applied before its children")
    }

    /// Every action that keeps the prefix completable, in a fixed order
    /// (rules by id, tables and columns by index). Empty once complete.
    pub fn admissible(&self) -> Vec<Action> {
        let Some(nt) = self.frontier() else { return Vec::new() };
        let rules = |it: Vec<Rule>| it.into_iter().map(|r| Action::ApplyRule(r.id())).collect();
        let columns = |it: Vec<usize>| it.into_iter().map(Action::SelectColumn).collect();
        let n_tables = self.schema.tables.len();
        match nt {
            NonTerminal::Query => {
                let mut out = Vec::new();
                for id in QUERY_BASE..SELECT_BASE {
                    let Some(Rule::Query(shape)) = Rule::from_id(id) else { unreachable!() };
                    if (0..n_tables).any(|t| self.from_ok(t, &shape)) {
                        out.push(Action::ApplyRule(id));
                    }
                }
                out
            }
            NonTerminal::FromTable => {
                let shape = self.shape();
                (0..n_tables).filter(|&t| self.from_ok(t, &shape)).map(Action::SelectTable).collect()
            }
            NonTerminal::JoinTable => {
                let (shape, from) = (self.shape(), self.from.expect("from before join"));
                (0..n_tables).filter(|&u| self.join_ok(from, u, &shape)).map(Action::SelectTable).collect()
            }
            NonTerminal::OnLeft => {
                let (from, join) = (self.from.expect("from"), self.join_table.expect("join"));
                columns(
                    self.scope_columns()
                        .filter(|&c| {
                            let other = if self.schema.column_table(c) == Some(from) { join } else { from };
                            let ty = self.schema.column_type(c);
                            self.schema.table_columns(other).any(|o| self.schema.column_type(o) == ty)
                        })
                        .collect(),
                )
            }
            NonTerminal::OnRight => {
                let left = self.on_left.expect("left before right");
                let other = if self.schema.column_table(left) == self.from {
                    self.join_table.expect("join")
                } else {
                    self.from.expect("from")
                };
                let ty = self.schema.column_type(left);
                columns(self.schema.table_columns(other).filter(|&c| self.schema.column_type(c) == ty).collect())
            }
            NonTerminal::GroupCol => columns(self.scope_columns().collect()),
            NonTerminal::Select => rules((1..=MAX_SELECT).map(Rule::Select).collect()),
            NonTerminal::Item => {
                let shape = self.shape();
                let first_bare = self.items.first().map(|(k, _)| *k == ItemKind::Bare);
                rules(
                    ItemKind::ALL
                        .into_iter()
                        .filter(|&k| self.kind_ok(k))
                        .filter(|&k| {
                            if shape.group {
                                true
                            } else if shape.order.is_some() {
                                k == ItemKind::Bare
                            } else {
                                first_bare.is_none_or(|fb| fb == (k == ItemKind::Bare))
                            }
                        })
                        .map(Rule::Item)
                        .collect(),
                )
            }
            NonTerminal::ItemCol => {
                let (kind, _) = *self.items.last().expect("item kind before column");
                columns(self.columns_for(kind))
            }
            NonTerminal::Cond => {
                let eq_ok = self.scope_columns().any(|c| self.condable(c));
                let cmp_ok = self.number_in_scope() && self.schema.has_literal_of(ColType::Number);
                rules(
                    CmpOp::ALL
                        .into_iter()
                        .filter(|op| if op.needs_number() { cmp_ok } else { eq_ok })
                        .map(Rule::Cond)
                        .collect(),
                )
            }
            NonTerminal::CondCol => {
                let op = self.conds.last().and_then(|c| c.op).expect("op before column");
                columns(
                    self.scope_columns()
                        .filter(|&c| self.condable(c))
                        .filter(|&c| !op.needs_number() || self.schema.column_type(c) == Some(ColType::Number))
                        .collect(),
                )
            }
            NonTerminal::Value => {
                let col = self.conds.last().and_then(|c| c.col).expect("column before value");
                let ty = self.schema.column_type(col);
                rules(
                    (0..self.schema.values.len().min(MAX_VALUES))
                        .filter(|&i| Some(self.schema.values[i].col_type()) == ty)
                        .map(Rule::Value)
                        .collect(),
                )
            }
            NonTerminal::OrderKey => {
                let group = self.shape().group;
                rules(
                    ItemKind::ALL
                        .into_iter()
                        .filter(|&k| self.kind_ok(k) && (group || k == ItemKind::Bare))
                        .map(Rule::OrderKey)
                        .collect(),
                )
            }
            NonTerminal::OrderCol => columns(self.columns_for(self.order_kind.expect("order kind before column"))),
            NonTerminal::Limit => rules(LIMITS.into_iter().map(Rule::Limit).collect()),
        }
    }

    fn reject(&self, msg: String) -> SqlError {
        SqlError::Action { pos: self.emitted, msg }
    }

    /// Applies an action after checking it against [`Self::admissible`].
    pub fn apply(&mut self, action: Action) -> Result<(), SqlError> {
        self.check_range(action)?;
        if !self.admissible().contains(&action) {
            let nt = self.frontier().expect("range check rejects complete states");
            return Err(self.reject(format!("{action} is not admissible at {nt:?}")));
        }
        self.apply_structural(action)
    }

    fn check_range(&self, action: Action) -> Result<(), SqlError> {
        let Some(nt) = self.frontier() else {
            return Err(self.reject(format!("{action} after a complete query")));
        };
        match (nt.slot(), action) {
            (Slot::Rules(range), Action::ApplyRule(r)) if range.contains(&r) => {
                if nt == NonTerminal::Value && r - VALUE_BASE >= self.schema.values.len() {
                    return Err(self.reject(format!(
                        "literal index {} out of range (schema has {} literals)",
                        r - VALUE_BASE,
                        self.schema.values.len()
                    )));
                }
                Ok(())
            }
            (Slot::Table, Action::SelectTable(t)) => {
                if t >= self.schema.tables.len() {
                    return Err(self.reject(format!(
                        "table index {t} out of range (schema has {} tables)",
                        self.schema.tables.len()
                    )));
                }
                Ok(())
            }
            (Slot::Column, Action::SelectColumn(c)) => {
                if c >= self.schema.num_columns() {
                    return Err(self.reject(format!(
                        "column index {c} out of range (schema has {} columns)",
                        self.schema.num_columns()
                    )));
                }
                Ok(())
            }
            _ => Err(self.reject(format!("{action} cannot expand {nt:?}"))),
        }
    }

    /// Applies an action checking only that its kind fits the frontier and
    /// its index exists. Used by unconstrained decoding; the result may not
    /// validate.
    pub fn apply_structural(&mut self, action: Action) -> Result<(), SqlError> {
        self.check_range(action)?;
        let nt = self.stack.pop().expect("checked nonempty");
        use NonTerminal as N;
        let rule = match action {
            Action::ApplyRule(r) => Some(Rule::from_id(r).expect("checked range")),
            _ => None,
        };
        let index = match action {
            Action::SelectTable(i) | Action::SelectColumn(i) => i,
            Action::ApplyRule(_) => 0,
        };
        match (nt, rule) {
            (N::Query, Some(Rule::Query(shape))) => {
                self.shape = Some(shape);
                if shape.order.is_some() {
                    self.stack.extend([N::Limit, N::OrderKey]);
                }
                self.stack.extend(std::iter::repeat_n(N::Cond, shape.n_where));
                self.stack.push(N::Select);
                if shape.group {
                    self.stack.push(N::GroupCol);
                }
                if shape.join {
                    self.stack.extend([N::OnRight, N::OnLeft, N::JoinTable]);
                }
                self.stack.push(N::FromTable);
            }
            (N::FromTable, None) => self.from = Some(index),
            (N::JoinTable, None) => self.join_table = Some(index),
            (N::OnLeft, None) => self.on_left = Some(index),
            (N::OnRight, None) => self.on_right = Some(index),
            (N::GroupCol, None) => self.group = Some(index),
            (N::Select, Some(Rule::Select(k))) => self.stack.extend(std::iter::repeat_n(N::Item, k)),
            (N::Item, Some(Rule::Item(kind))) => {
                self.items.push((kind, None));
                if kind.has_column() {
                    self.stack.push(N::ItemCol);
                }
            }
            (N::ItemCol, None) => self.items.last_mut().expect("item pushed").1 = Some(index),
            (N::Cond, Some(Rule::Cond(op))) => {
                self.conds.push(PendingCond { op: Some(op), ..Default::default() });
                self.stack.extend([N::Value, N::CondCol]);
            }
            (N::CondCol, None) => self.conds.last_mut().expect("cond pushed").col = Some(index),
            (N::Value, Some(Rule::Value(i))) => self.conds.last_mut().expect("cond pushed").value = Some(i),
            (N::OrderKey, Some(Rule::OrderKey(kind))) => {
                self.order_kind = Some(kind);
                if kind.has_column() {
                    self.stack.push(N::OrderCol);
                }
            }
            (N::OrderCol, None) => self.order_col = Some(index),
            (N::Limit, Some(Rule::Limit(l))) => self.limit = Some(l),
            _ => unreachable!("slot check pairs every frontier with its action kind"),
        }
        self.emitted += 1;
        Ok(())
    }

    /// The query built by a complete sequence (not validated here).
    pub fn finish(&self) -> Result<SqlAst, SqlError> {
        if let Some(nt) = self.frontier() {
            return Err(self.reject(format!("incomplete sequence: expected {nt:?}")));
        }
        let shape = self.shape();
        let item = |(kind, col): (ItemKind, Option<usize>)| SelectItem { agg: kind.agg(), col };
        Ok(SqlAst {
            select: self.items.iter().copied().map(item).collect(),
            from: self.from.expect("complete"),
            join: self.join_table.map(|table| Join {
                table,
                on: (self.on_left.expect("complete"), self.on_right.expect("complete")),
            }),
            conds: self
                .conds
                .iter()
                .map(|c| Cond {
                    col: c.col.expect("complete"),
                    op: c.op.expect("complete"),
                    value: self.schema.values[c.value.expect("complete")].clone(),
                })
                .collect(),
            group_by: self.group,
            order_by: shape.order.map(|dir| OrderBy {
                key: item((self.order_kind.expect("complete"), self.order_col)),
                dir,
                limit: self.limit.expect("complete"),
            }),
        })
    }
}

/// Preorder action serialization of a valid query.
pub fn ast_to_actions(ast: &SqlAst, schema: &SchemaDef) -> Result<Vec<Action>, SqlError> {
    ast.validate(schema).map_err(|e| SqlError::Contract(format!("cannot serialize: {e}")))?;
    if ast.select.len() > MAX_SELECT || ast.conds.len() > MAX_CONDS {
        return Err(SqlError::Contract("query exceeds the grammar's clause limits".into()));
    }
    let rule = |r: Rule| Action::ApplyRule(r.id());
    let mut out = vec![rule(Rule::Query(QueryShape::of(ast))), Action::SelectTable(ast.from)];
    if let Some(j) = &ast.join {
        out.extend([Action::SelectTable(j.table), Action::SelectColumn(j.on.0), Action::SelectColumn(j.on.1)]);
    }
    if let Some(g) = ast.group_by {
        out.push(Action::SelectColumn(g));
    }
    out.push(rule(Rule::Select(ast.select.len())));
    for item in &ast.select {
        out.push(rule(Rule::Item(ItemKind::of(item))));
        out.extend(item.col.map(Action::SelectColumn));
    }
    for c in &ast.conds {
        let i = schema
            .value_index(&c.value)
            .filter(|&i| i < MAX_VALUES)
            .ok_or_else(|| SqlError::Contract(format!("literal {} is not in the schema inventory", c.value)))?;
        out.extend([rule(Rule::Cond(c.op)), Action::SelectColumn(c.col), rule(Rule::Value(i))]);
    }
    if let Some(o) = &ast.order_by {
        if !LIMITS.contains(&o.limit) {
            return Err(SqlError::Contract(format!("LIMIT {:?} is not expressible", o.limit)));
        }
        out.push(rule(Rule::OrderKey(ItemKind::of(&o.key))));
        out.extend(o.key.col.map(Action::SelectColumn));
        out.push(rule(Rule::Limit(o.limit)));
    }
    Ok(out)
}

/// Inverse of [`ast_to_actions`]. Errors carry the index of the failing
/// action; a truncated sequence fails at `seq.len()`.
pub fn actions_to_ast(seq: &[Action], schema: &SchemaDef) -> Result<SqlAst, SqlError> {
    let mut state = GrammarState::new(schema);
    for &a in seq {
        state.apply(a)?;
    }
    state.finish()
}

/// The admissible continuations of a prefix.
pub fn admissible_actions(prefix: &[Action], schema: &SchemaDef) -> Result<Vec<Action>, SqlError> {
    let mut state = GrammarState::new(schema);
    for &a in prefix {
        state.apply(a).map_err(|e| SqlError::Contract(format!("inadmissible prefix: {e}")))?;
    }
    Ok(state.admissible())
}

/// Picks uniformly among admissible actions until the query is complete.
pub fn random_admissible_walk<R: Rng + ?Sized>(schema: &SchemaDef, rng: &mut R) -> Result<Vec<Action>, SqlError> {
    let mut state = GrammarState::new(schema);
    let mut out = Vec::new();
    while !state.is_complete() {
        let options = state.admissible();
        if options.is_empty() {
            return Err(SqlError::Contract(format!("dead end at {:?} after {} actions", state.frontier(), out.len())));
        }
        let a = options[rng.random_range(0..options.len())];
        state.apply_structural(a)?;
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_ids_round_trip() {
        for id in 0..NUM_RULES {
            let rule = Rule::from_id(id).unwrap();
            assert_eq!(rule.id(), id, "{rule}");
            match rule.lhs().slot() {
                Slot::Rules(r) => assert!(r.contains(&id)),
                _ => panic!("rule with non-rule slot"),
            }
        }
        assert!(Rule::from_id(NUM_RULES).is_none());
    }

    #[test]
    fn slots_partition_the_inventory() {
        let mut covered = vec![0; NUM_RULES];
        for nt in NonTerminal::ALL {
            if let Slot::Rules(r) = nt.slot() {
                for id in r {
                    covered[id] += 1;
                }
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }
}
