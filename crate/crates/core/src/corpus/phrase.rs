//! Template banks that turn a query into a lowercase question. Each call
//! draws synonyms, a sentence mood and a clause order from the RNG, so
//! repeated calls on one query give its paraphrases.

use rand::Rng;

use crate::sqlkit::{name_tokens, Agg, CmpOp, Direction, SchemaDef, SelectItem, SqlAst};

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn fill(template: &str, slot: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for w in template.split_whitespace() {
        if w == "{}" {
            out.extend(slot.iter().cloned());
        } else {
            out.push(w.to_owned());
        }
    }
    out
}

fn column(schema: &SchemaDef, col: usize) -> Vec<String> {
    name_tokens(&schema.column(col).expect("valid column").1.name)
}

fn table(schema: &SchemaDef, t: usize) -> Vec<String> {
    name_tokens(&schema.tables[t].name)
}

fn item<R: Rng>(rng: &mut R, schema: &SchemaDef, from: usize, it: &SelectItem) -> Vec<String> {
    let Some(col) = it.col else {
        let t = pick(rng, &["the number of {}", "the count of {}", "the total number of {}", "how many {}"]);
        return fill(t, &table(schema, from));
    };
    let c = column(schema, col);
    let t = match it.agg {
        Agg::None => pick(rng, &["the {}", "{}", "each {}"]),
        Agg::Count => pick(rng, &["the count of {}", "the number of {} entries", "how many {} values"]),
        Agg::Sum => pick(rng, &["the total {}", "the sum of {}", "the combined {}"]),
        Agg::Avg => pick(rng, &["the average {}", "the mean {}", "the avg {}"]),
        Agg::Min => pick(rng, &["the minimum {}", "the lowest {}", "the smallest {}"]),
        Agg::Max => pick(rng, &["the maximum {}", "the highest {}", "the largest {}"]),
    };
    fill(t, &c)
}

fn items<R: Rng>(rng: &mut R, schema: &SchemaDef, ast: &SqlAst) -> Vec<String> {
    let mut out = Vec::new();
    for (i, it) in ast.select.iter().enumerate() {
        if i > 0 {
            out.push(if i + 1 == ast.select.len() { "and".into() } else { ",".into() });
        }
        out.extend(item(rng, schema, ast.from, it));
    }
    out
}

fn source<R: Rng>(rng: &mut R, schema: &SchemaDef, ast: &SqlAst) -> Vec<String> {
    let from = table(schema, ast.from);
    match &ast.join {
        None => fill(pick(rng, &["from {}", "of {}", "in {}", "among {}", "for {}"]), &from),
        Some(j) => {
            let mut out = fill(pick(rng, &["from {}", "of {}", "across {}"]), &from);
            out.extend(words(pick(rng, &["joined with", "together with", "and their", "combined with"])));
            out.extend(table(schema, j.table));
            out
        }
    }
}

fn conds<R: Rng>(rng: &mut R, schema: &SchemaDef, ast: &SqlAst) -> Vec<String> {
    let mut out = words(pick(rng, &["where", "with", "whose", "having"]));
    for (i, c) in ast.conds.iter().enumerate() {
        if i > 0 {
            out.push("and".into());
        }
        let t = match c.op {
            CmpOp::Eq => pick(rng, &["{} is", "{} equal to", "{} of"]),
            CmpOp::Ne => pick(rng, &["{} is not", "{} other than", "{} different from"]),
            CmpOp::Gt => pick(rng, &["{} above", "{} greater than", "{} more than"]),
            CmpOp::Lt => pick(rng, &["{} below", "{} less than", "{} under"]),
        };
        out.extend(fill(t, &column(schema, c.col)));
        out.push(c.value.token());
    }
    out
}

fn group<R: Rng>(rng: &mut R, schema: &SchemaDef, g: usize) -> Vec<String> {
    fill(pick(rng, &["for each {}", "per {}", "grouped by {}", "by {}"]), &column(schema, g))
}

fn order<R: Rng>(rng: &mut R, schema: &SchemaDef, ast: &SqlAst) -> Vec<String> {
    let o = ast.order_by.expect("ordered query");
    let mut key = item(rng, schema, ast.from, &o.key);
    if key.first().is_some_and(|w| w == "the" || w == "each") {
        key.remove(0);
    }
    let t = match o.dir {
        Direction::Asc => pick(rng, &["sorted by {} in ascending order", "ordered by {} ascending", "with the lowest {} first"]),
        Direction::Desc => {
            pick(rng, &["sorted by {} in descending order", "ordered by {} descending", "with the highest {} first"])
        }
    };
    let mut out = fill(t, &key);
    if let Some(n) = o.limit {
        let t = pick(rng, &["only the first {}", "limited to {} results", "keeping {} rows", "showing just {}"]);
        out.extend(fill(t, &[n.to_string()]));
    }
    out
}

/// One paraphrase of `ast` as lowercase tokens.
pub(crate) fn realize<R: Rng>(rng: &mut R, schema: &SchemaDef, ast: &SqlAst) -> Vec<String> {
    let head = items(rng, schema, ast);
    let src = source(rng, schema, ast);
    let cond = (!ast.conds.is_empty()).then(|| conds(rng, schema, ast));
    let grp = ast.group_by.map(|g| group(rng, schema, g));
    let ord = ast.order_by.is_some().then(|| order(rng, schema, ast));
    let question = rng.random_bool(0.5);
    let front = if rng.random_bool(0.35) {
        match (cond.is_some(), grp.is_some()) {
            (true, true) => Some(rng.random_bool(0.5)),
            (true, false) => Some(true),
            (false, true) => Some(false),
            (false, false) => None,
        }
    } else {
        None
    };

    let mut out = Vec::new();
    match front {
        Some(true) => {
            out.extend(src.iter().cloned());
            out.extend(cond.clone().expect("front clause"));
            out.push(",".into());
        }
        Some(false) => {
            out.extend(grp.clone().expect("front clause"));
            out.push(",".into());
        }
        None => {}
    }
    if question {
        out.extend(words(pick(rng, &["what is", "what are", "tell me"])));
    } else {
        out.extend(words(pick(rng, &["show", "list", "give me", "find", "display", "return"])));
    }
    out.extend(head);
    if front != Some(true) {
        out.extend(src);
        out.extend(cond.unwrap_or_default());
    }
    if front != Some(false) {
        out.extend(grp.unwrap_or_default());
    }
    out.extend(ord.unwrap_or_default());
    if question {
        out.push("?".into());
    }
    out
}
