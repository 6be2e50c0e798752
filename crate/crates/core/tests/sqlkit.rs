mod common;

use std::collections::BTreeSet;

use common::{concert_schema, pets_db, pets_schema, random_ast};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sun::sqlkit::{
    actions_to_ast, admissible_actions, ast_to_actions, execute, parse_sql, random_admissible_walk, render_sql,
    Action, Agg, CmpOp, ColType, ColumnDef, Cond, Difficulty, Direction, GrammarState, Join, NonTerminal, OrderBy,
    SchemaDef, SelectItem, SqlAst, SqlError, TableDef, Value, NUM_RULES,
};

fn num(n: f64) -> Value {
    Value::Number(n)
}

fn text(s: &str) -> Value {
    Value::Text(s.into())
}

fn one_table(cols: &[(&str, ColType)], values: Vec<Value>) -> SchemaDef {
    SchemaDef {
        id: "one".into(),
        tables: vec![TableDef {
            name: "t".into(),
            columns: cols.iter().map(|(n, ty)| ColumnDef { name: (*n).into(), col_type: *ty }).collect(),
        }],
        foreign_keys: vec![],
        values,
    }
}

fn tiny_two_tables() -> SchemaDef {
    SchemaDef {
        id: "tiny".into(),
        tables: vec![
            TableDef {
                name: "t".into(),
                columns: vec![
                    ColumnDef { name: "a".into(), col_type: ColType::Text },
                    ColumnDef { name: "n".into(), col_type: ColType::Number },
                ],
            },
            TableDef { name: "u".into(), columns: vec![ColumnDef { name: "m".into(), col_type: ColType::Number }] },
        ],
        foreign_keys: vec![],
        values: vec![text("p"), num(1.0)],
    }
}

// ---------------------------------------------------------------------------
// Brute-force admissibility oracle: try every structurally typed action and
// search for any completion that passes `SqlAst::validate`.

fn every_action(schema: &SchemaDef) -> Vec<Action> {
    let mut out: Vec<Action> = (0..NUM_RULES).map(Action::ApplyRule).collect();
    out.extend((0..schema.tables.len()).map(Action::SelectTable));
    out.extend((0..schema.num_columns()).map(Action::SelectColumn));
    out
}

fn completes(state: &GrammarState, all: &[Action], budget: &mut usize) -> Option<bool> {
    if state.is_complete() {
        let ast = state.finish().expect("complete");
        return Some(ast.validate(state.schema()).is_ok());
    }
    for &a in all {
        let mut next = state.clone();
        if next.apply_structural(a).is_err() {
            continue;
        }
        *budget = budget.checked_sub(1)?;
        if completes(&next, all, budget)? {
            return Some(true);
        }
    }
    Some(false)
}

/// `None` when the search budget runs out.
fn brute_force_admissible(state: &GrammarState, budget: usize) -> Option<BTreeSet<Action>> {
    let all = every_action(state.schema());
    let mut out = BTreeSet::new();
    let mut left = budget;
    for &a in &all {
        let mut next = state.clone();
        if next.apply_structural(a).is_err() {
            continue;
        }
        if completes(&next, &all, &mut left)? {
            out.insert(a);
        }
    }
    Some(out)
}

fn state_after<'s>(schema: &'s SchemaDef, prefix: &[Action]) -> GrammarState<'s> {
    let mut s = GrammarState::new(schema);
    for &a in prefix {
        s.apply(a).unwrap();
    }
    s
}

#[test]
fn sum_column_slot_admits_only_the_number_column() {
    use ColType::{Number, Text};
    let schema = one_table(&[("name", Text), ("age", Number), ("city", Text)], vec![]);
    let q = ast_to_actions(
        &SqlAst { select: vec![SelectItem::agg(Agg::Sum, 1)], ..SqlAst::count_star(0) },
        &schema,
    )
    .unwrap();
    let prefix = &q[..q.len() - 1];
    let state = state_after(&schema, prefix);
    assert_eq!(state.frontier(), Some(NonTerminal::ItemCol));
    let got: BTreeSet<Action> = state.admissible().into_iter().collect();
    assert_eq!(got, BTreeSet::from([Action::SelectColumn(1)]));
    assert_eq!(brute_force_admissible(&state, 1_000_000).unwrap(), got);
}

#[test]
fn root_admits_exactly_the_query_rules() {
    let schema = concert_schema();
    let root = admissible_actions(&[], &schema).unwrap();
    assert_eq!(root, (0..48).map(Action::ApplyRule).collect::<Vec<_>>());

    // No literals: every WHERE-carrying shape disappears. One table: no joins.
    let bare = one_table(&[("a", ColType::Text)], vec![]);
    let root = admissible_actions(&[], &bare).unwrap();
    assert_eq!(root.len(), 6);
    for a in root {
        let Action::ApplyRule(id) = a else { panic!() };
        assert!(id < 24 && id % 24 < 6, "rule {id} needs a join or WHERE");
    }
}

#[test]
fn admissibility_matches_brute_force_on_sampled_prefixes() {
    let schema = tiny_two_tables();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut kinds = BTreeSet::new();
    for _ in 0..60 {
        let walk = random_admissible_walk(&schema, &mut rng).unwrap();
        for cut in (0..walk.len()).rev() {
            let state = state_after(&schema, &walk[..cut]);
            let Some(oracle) = brute_force_admissible(&state, 30_000) else { break };
            let got: BTreeSet<Action> = state.admissible().into_iter().collect();
            assert_eq!(got, oracle, "prefix {:?}", &walk[..cut]);
            checked += 1;
            kinds.insert(state.frontier().unwrap());
        }
    }
    assert!(checked >= 200, "only {checked} prefixes fit the search budget");
    for nt in [
        NonTerminal::Item,
        NonTerminal::ItemCol,
        NonTerminal::Cond,
        NonTerminal::CondCol,
        NonTerminal::Value,
        NonTerminal::OrderKey,
        NonTerminal::OrderCol,
        NonTerminal::Limit,
    ] {
        assert!(kinds.contains(&nt), "{nt:?} never checked");
    }
}

#[test]
fn smallest_query_serializes_to_four_actions() {
    let schema = concert_schema();
    let ast = SqlAst::count_star(2);
    let seq = ast_to_actions(&ast, &schema).unwrap();
    assert_eq!(seq.len(), 4);
    assert_eq!(seq[1], Action::SelectTable(2));
    assert_eq!(render_sql(&ast, &schema), "SELECT count(*) FROM stadium");
    assert_eq!(actions_to_ast(&seq, &schema).unwrap(), ast);
    assert!(admissible_actions(&seq, &schema).unwrap().is_empty());
}

#[test]
fn random_asts_round_trip_through_actions_and_text() {
    let schema = concert_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut shapes = BTreeSet::new();
    for _ in 0..10_000 {
        let ast = random_ast(&mut rng, &schema);
        let seq = ast_to_actions(&ast, &schema).unwrap();
        assert_eq!(seq, ast_to_actions(&ast.clone(), &schema).unwrap());
        assert_eq!(actions_to_ast(&seq, &schema).unwrap(), ast);
        let sql = render_sql(&ast, &schema);
        assert_eq!(parse_sql(&sql, &schema).unwrap(), ast, "{sql}");
        shapes.insert((ast.join.is_some(), ast.conds.len(), ast.group_by.is_some(), ast.order_by.is_some()));
    }
    assert_eq!(shapes.len(), 32);
}

#[test]
fn random_walks_never_dead_end() {
    let schema = concert_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let seq = random_admissible_walk(&schema, &mut rng).unwrap();
        let ast = actions_to_ast(&seq, &schema).unwrap();
        ast.validate(&schema).unwrap();
        assert_eq!(ast_to_actions(&ast, &schema).unwrap(), seq);
    }
}

#[test]
fn truncated_and_out_of_range_sequences_fail_with_positions() {
    let schema = concert_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seq = ast_to_actions(&random_ast(&mut rng, &schema), &schema).unwrap();
    match actions_to_ast(&seq[..seq.len() - 1], &schema) {
        Err(SqlError::Action { pos, msg }) => {
            assert_eq!(pos, seq.len() - 1);
            assert!(msg.contains("incomplete"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
    let bad = [Action::ApplyRule(0), Action::SelectTable(0), Action::ApplyRule(48), Action::ApplyRule(51), Action::SelectColumn(99)];
    match actions_to_ast(&bad, &schema) {
        Err(SqlError::Action { pos: 4, msg }) => assert!(msg.contains("99"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(admissible_actions(&bad, &schema), Err(SqlError::Contract(_))));
}

#[test]
fn parse_rejects_type_errors_and_unknown_names() {
    let schema = concert_schema();
    assert!(matches!(parse_sql("SELECT sum(name) FROM singer", &schema), Err(SqlError::Validation(_))));
    assert!(matches!(parse_sql("SELECT nope FROM singer", &schema), Err(SqlError::Parse { pos: 7, .. })));
    assert!(matches!(parse_sql("SELECT name FROM singer WHERE", &schema), Err(SqlError::Parse { pos: 29, .. })));
}

#[test]
fn canonical_forms_identify_exactly_the_normalized_variants() {
    let base = SqlAst {
        select: vec![SelectItem::bare(1)],
        from: 0,
        join: Some(Join { table: 1, on: (0, 5) }),
        conds: vec![
            Cond { col: 3, op: CmpOp::Gt, value: num(30.0) },
            Cond { col: 2, op: CmpOp::Eq, value: text("usa") },
        ],
        group_by: None,
        order_by: None,
    };
    let mut swapped = base.clone();
    swapped.conds.reverse();
    swapped.join = Some(Join { table: 1, on: (5, 0) });
    assert_eq!(base.canonicalize(), swapped.canonicalize());
    assert_eq!(base.canonicalize().canonicalize(), base.canonicalize());

    let mut different = base.clone();
    different.conds[0].op = CmpOp::Lt;
    assert_ne!(base.canonicalize(), different.canonicalize());
    let mut different = base.clone();
    different.conds[1].value = text("france");
    assert_ne!(base.canonicalize(), different.canonicalize());
    let mut different = base.clone();
    different.select = vec![SelectItem::bare(2)];
    assert_ne!(base.canonicalize(), different.canonicalize());
}

#[test]
fn difficulty_examples() {
    let schema = concert_schema();
    let easy = SqlAst { select: vec![SelectItem::bare(1)], ..SqlAst::count_star(0) };
    assert_eq!(easy.difficulty(), Difficulty::Easy);
    let hard = SqlAst {
        select: vec![SelectItem::bare(2)],
        join: Some(Join { table: 1, on: (0, 5) }),
        conds: vec![
            Cond { col: 3, op: CmpOp::Gt, value: num(30.0) },
            Cond { col: 7, op: CmpOp::Eq, value: num(2014.0) },
        ],
        group_by: Some(2),
        ..SqlAst::count_star(0)
    };
    hard.validate(&schema).unwrap();
    assert_eq!(hard.difficulty(), Difficulty::Hard);
    let extra = SqlAst {
        select: vec![SelectItem::bare(2), SelectItem::count_star(), SelectItem::agg(Agg::Max, 3)],
        order_by: Some(OrderBy { key: SelectItem::count_star(), dir: Direction::Desc, limit: None }),
        ..hard
    };
    extra.validate(&schema).unwrap();
    assert_eq!(extra.difficulty(), Difficulty::Extra);
}

// ---------------------------------------------------------------------------
// Executor fixtures, evaluated by hand.

fn run(sql: &str) -> Vec<Vec<Value>> {
    let schema = pets_schema();
    execute(&parse_sql(sql, &schema).unwrap(), &schema, &pets_db()).unwrap()
}

#[test]
fn executor_matches_hand_evaluation() {
    let schema = pets_schema();
    pets_db().validate(&schema).unwrap();
    assert_eq!(run("SELECT count(*) FROM owners"), vec![vec![num(2.0)]]);
    assert_eq!(run("SELECT count(*) FROM pets"), vec![vec![num(5.0)]]);
    assert_eq!(
        run("SELECT owner, count(*) FROM pets GROUP BY owner"),
        vec![vec![text("ann"), num(2.0)], vec![text("bob"), num(2.0)], vec![text("cy"), num(1.0)]]
    );
    assert_eq!(
        run("SELECT kind, avg(weight), max(weight) FROM pets GROUP BY kind"),
        vec![vec![text("cat"), num(10.0 / 3.0), num(5.0)], vec![text("dog"), num(8.5), num(10.0)]]
    );
    assert_eq!(
        run("SELECT owners.city, pets.kind FROM pets JOIN owners ON pets.owner = owners.name WHERE pets.weight > 4"),
        vec![vec![text("oslo"), text("cat")], vec![text("oslo"), text("dog")], vec![text("rome"), text("dog")]]
    );
    // ann and bob tie on count; the tie breaks on the output row.
    assert_eq!(run("SELECT owner FROM pets GROUP BY owner ORDER BY count(*) DESC LIMIT 1"), vec![vec![text("ann")]]);
    assert_eq!(
        run("SELECT owner, weight FROM pets WHERE kind = 'cat' ORDER BY weight DESC LIMIT 2"),
        vec![vec![text("bob"), num(5.0)], vec![text("ann"), num(3.0)]]
    );
    assert_eq!(run("SELECT kind FROM pets WHERE owner != 'ann'"), vec![vec![text("cat")], vec![text("cat")], vec![text("dog")]]);
}

#[test]
fn executor_empty_inputs() {
    assert_eq!(run("SELECT count(*) FROM pets WHERE weight > 100"), vec![vec![num(0.0)]]);
    assert_eq!(run("SELECT sum(weight), count(owner) FROM pets WHERE weight > 100"), vec![vec![num(0.0), num(0.0)]]);
    assert!(run("SELECT max(weight) FROM pets WHERE weight > 100").is_empty());
    assert!(run("SELECT count(*), avg(weight) FROM pets WHERE weight > 100").is_empty());
    assert!(run("SELECT owner, count(*) FROM pets WHERE weight > 100 GROUP BY owner").is_empty());
}

#[test]
fn execution_is_deterministic_and_self_consistent() {
    let schema = pets_schema();
    let db = pets_db();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..2_000 {
        let ast = random_ast(&mut rng, &schema);
        let a = execute(&ast, &schema, &db).unwrap();
        assert_eq!(a, execute(&ast.clone(), &schema, &db).unwrap());
        assert_eq!(a, execute(&ast.canonicalize(), &schema, &db).unwrap(), "{}", render_sql(&ast, &schema));
    }
}
