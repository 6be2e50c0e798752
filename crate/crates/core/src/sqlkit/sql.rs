use std::fmt::Write as _;

use super::ast::{Agg, CmpOp, Cond, Direction, Join, OrderBy, SelectItem, SqlAst};
use super::schema::{SchemaDef, Value};
use super::SqlError;

fn column_ref(ast: &SqlAst, schema: &SchemaDef, col: usize) -> String {
    let (t, c) = schema.column(col).expect("validated column");
    if ast.join.is_some() {
        format!("{}.{}", schema.tables[t].name, c.name)
    } else {
        c.name.clone()
    }
}

fn item_text(ast: &SqlAst, schema: &SchemaDef, item: &SelectItem) -> String {
    let inner = item.col.map_or_else(|| "*".to_owned(), |c| column_ref(ast, schema, c));
    match item.agg.keyword() {
        Some(k) => format!("{k}({inner})"),
        None => inner,
    }
}

/// SQL text for a query: uppercase keywords, lowercase aggregate calls,
/// `table.column` references whenever a JOIN is present.
pub fn render_sql(ast: &SqlAst, schema: &SchemaDef) -> String {
    let items: Vec<String> = ast.select.iter().map(|i| item_text(ast, schema, i)).collect();
    let mut s = format!("SELECT {} FROM {}", items.join(", "), schema.tables[ast.from].name);
    if let Some(j) = &ast.join {
        let _ = write!(
            s,
            " JOIN {} ON {} = {}",
            schema.tables[j.table].name,
            column_ref(ast, schema, j.on.0),
            column_ref(ast, schema, j.on.1)
        );
    }
    if !ast.conds.is_empty() {
        let conds: Vec<String> = ast
            .conds
            .iter()
            .map(|c| format!("{} {} {}", column_ref(ast, schema, c.col), c.op.symbol(), c.value))
            .collect();
        let _ = write!(s, " WHERE {}", conds.join(" AND "));
    }
    if let Some(g) = ast.group_by {
        let _ = write!(s, " GROUP BY {}", column_ref(ast, schema, g));
    }
    if let Some(o) = &ast.order_by {
        let dir = match o.dir {
            Direction::Asc => "ASC",
            Direction::Desc => "DESC",
        };
        let _ = write!(s, " ORDER BY {} {dir}", item_text(ast, schema, &o.key));
        if let Some(n) = o.limit {
            let _ = write!(s, " LIMIT {n}");
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Sym(&'static str),
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, SqlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |pos: usize, msg: String| SqlError::Parse { pos, msg };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_owned()), start));
            }
            b'0'..=b'9' | b'-' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let n: f64 = text[start..i].parse().map_err(|_| err(start, format!("bad number `{}`", &text[start..i])))?;
                out.push((Tok::Number(n), start));
            }
            b'\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match text[i..].find('\'') {
                        None => return Err(err(start, "unterminated string literal".into())),
                        Some(k) => {
                            s.push_str(&text[i..i + k]);
                            i += k + 1;
                            if bytes.get(i) == Some(&b'\'') {
                                s.push('\'');
                                i += 1;
                            } else {
                                break;
                            }
                        }
                    }
                }
                out.push((Tok::Str(s), start));
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                out.push((Tok::Sym("!="), start));
                i += 2;
            }
            b'(' | b')' | b',' | b'.' | b'*' | b'=' | b'<' | b'>' => {
                let sym = match c {
                    b'(' => "(",
                    b')' => ")",
                    b',' => ",",
                    b'.' => ".",
                    b'*' => "*",
                    b'=' => "=",
                    b'<' => "<",
                    _ => ">",
                };
                out.push((Tok::Sym(sym), start));
                i += 1;
            }
            _ => {
                let ch = text[i..].chars().next().expect("in bounds");
                return Err(err(start, format!("unexpected character `{ch}`")));
            }
        }
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

#[derive(Debug, Clone)]
struct ColName {
    table: Option<String>,
    name: String,
    pos: usize,
}

#[derive(Debug, Clone)]
struct RawItem {
    agg: Agg,
    col: Option<ColName>,
    pos: usize,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, SqlError> {
        Err(SqlError::Parse { pos: self.pos(), msg: msg.into() })
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        let hit = self.is_kw(kw);
        self.at += usize::from(hit);
        hit
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.fail(format!("expected {kw}"))
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        let hit = matches!(self.peek(), Tok::Sym(s) if *s == sym);
        self.at += usize::from(hit);
        hit
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), SqlError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            self.fail(format!("expected `{sym}`"))
        }
    }

    fn ident(&mut self) -> Result<(String, usize), SqlError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(s) if !is_reserved(&s) => {
                self.at += 1;
                Ok((s, pos))
            }
            _ => self.fail("expected an identifier"),
        }
    }

    fn col_name(&mut self) -> Result<ColName, SqlError> {
        let (first, pos) = self.ident()?;
        if self.eat_sym(".") {
            let (name, _) = self.ident()?;
            Ok(ColName { table: Some(first), name, pos })
        } else {
            Ok(ColName { table: None, name: first, pos })
        }
    }

    fn item(&mut self) -> Result<RawItem, SqlError> {
        let pos = self.pos();
        let agg = match self.peek() {
            Tok::Ident(s) if matches!(self.toks[self.at + 1].0, Tok::Sym("(")) => match s.to_ascii_lowercase().as_str() {
                "count" => Agg::Count,
                "sum" => Agg::Sum,
                "avg" => Agg::Avg,
                "min" => Agg::Min,
                "max" => Agg::Max,
                other => return self.fail(format!("unknown function `{other}`")),
            },
            _ => return Ok(RawItem { agg: Agg::None, col: Some(self.col_name()?), pos }),
        };
        self.at += 2;
        let col = if self.eat_sym("*") { None } else { Some(self.col_name()?) };
        self.expect_sym(")")?;
        Ok(RawItem { agg, col, pos })
    }

    fn literal(&mut self) -> Result<Value, SqlError> {
        let v = match self.peek() {
            Tok::Number(n) => Value::Number(*n),
            Tok::Str(s) => Value::Text(s.clone()),
            _ => return self.fail("expected a literal"),
        };
        self.at += 1;
        Ok(v)
    }
}

const RESERVED: [&str; 13] =
    ["select", "from", "join", "on", "where", "and", "group", "by", "order", "asc", "desc", "limit", "as"];

fn is_reserved(s: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(s))
}

struct Scope<'a> {
    schema: &'a SchemaDef,
    tables: Vec<usize>,
}

impl Scope<'_> {
    fn resolve(&self, c: &ColName) -> Result<usize, SqlError> {
        let err = |msg: String| Err(SqlError::Parse { pos: c.pos, msg });
        match &c.table {
            Some(t) => {
                let Some(ti) = self.schema.table_index(t).filter(|ti| self.tables.contains(ti)) else {
                    return err(format!("table `{t}` is not in the FROM clause"));
                };
                match self.schema.column_index(ti, &c.name) {
                    Some(col) => Ok(col),
                    None => err(format!("table `{t}` has no column `{}`", c.name)),
                }
            }
            None => {
                let hits: Vec<usize> =
                    self.tables.iter().filter_map(|&t| self.schema.column_index(t, &c.name)).collect();
                match hits.as_slice() {
                    [col] => Ok(*col),
                    [] => err(format!("unknown column `{}`", c.name)),
                    _ => err(format!("ambiguous column `{}`", c.name)),
                }
            }
        }
    }

    fn item(&self, raw: &RawItem) -> Result<SelectItem, SqlError> {
        let col = raw.col.as_ref().map(|c| self.resolve(c)).transpose()?;
        if col.is_none() && raw.agg != Agg::Count {
            return Err(SqlError::Parse { pos: raw.pos, msg: "`*` is only allowed in count(*)".into() });
        }
        Ok(SelectItem { agg: raw.agg, col })
    }
}

/// Parses SQL text of the toy grammar against a schema and validates it.
/// Keywords and identifiers are case-insensitive; errors carry byte offsets.
pub fn parse_sql(text: &str, schema: &SchemaDef) -> Result<SqlAst, SqlError> {
    let mut p = Parser { toks: lex(text)?, at: 0 };
    p.expect_kw("select")?;
    let mut raw_items = vec![p.item()?];
    while p.eat_sym(",") {
        raw_items.push(p.item()?);
    }
    p.expect_kw("from")?;
    let table = |p: &mut Parser| -> Result<usize, SqlError> {
        let (name, pos) = p.ident()?;
        schema.table_index(&name).ok_or(SqlError::Parse { pos, msg: format!("unknown table `{name}`") })
    };
    let from = table(&mut p)?;
    let mut scope = Scope { schema, tables: vec![from] };
    let mut join = None;
    if p.eat_kw("join") {
        let t = table(&mut p)?;
        scope.tables.push(t);
        p.expect_kw("on")?;
        let left = p.col_name()?;
        p.expect_sym("=")?;
        let right = p.col_name()?;
        join = Some(Join { table: t, on: (scope.resolve(&left)?, scope.resolve(&right)?) });
    }
    let mut conds = Vec::new();
    if p.eat_kw("where") {
        loop {
            let col = scope.resolve(&p.col_name()?)?;
            let op = match p.peek() {
                Tok::Sym("=") => CmpOp::Eq,
                Tok::Sym(">") => CmpOp::Gt,
                Tok::Sym("<") => CmpOp::Lt,
                Tok::Sym("!=") => CmpOp::Ne,
                _ => return p.fail("expected a comparison operator"),
            };
            p.at += 1;
            conds.push(Cond { col, op, value: p.literal()? });
            if !p.eat_kw("and") {
                break;
            }
        }
    }
    let mut group_by = None;
    if p.eat_kw("group") {
        p.expect_kw("by")?;
        group_by = Some(scope.resolve(&p.col_name()?)?);
    }
    let mut order_by = None;
    if p.eat_kw("order") {
        p.expect_kw("by")?;
        let key = scope.item(&p.item()?)?;
        let dir = if p.eat_kw("desc") {
            Direction::Desc
        } else {
            p.eat_kw("asc");
            Direction::Asc
        };
        let mut limit = None;
        if p.eat_kw("limit") {
            match *p.peek() {
                Tok::Number(n) if n.fract() == 0.0 && n >= 1.0 && n <= f64::from(u32::MAX) => limit = Some(n as u32),
                _ => return p.fail("LIMIT needs a positive integer"),
            }
            p.at += 1;
        }
        order_by = Some(OrderBy { key, dir, limit });
    } else if p.is_kw("limit") {
        return p.fail("LIMIT requires ORDER BY");
    }
    if *p.peek() != Tok::End {
        return p.fail("unexpected trailing input");
    }
    let select = raw_items.iter().map(|r| scope.item(r)).collect::<Result<_, _>>()?;
    let ast = SqlAst { select, from, join, conds, group_by, order_by };
    ast.validate(schema)?;
    Ok(ast)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqlkit::schema::{ColType, ColumnDef, TableDef};

    fn schema() -> SchemaDef {
        let col = |name: &str, col_type| ColumnDef { name: name.into(), col_type };
        SchemaDef {
            id: "s".into(),
            tables: vec![
                TableDef { name: "t".into(), columns: vec![col("name", ColType::Text), col("age", ColType::Number)] },
                TableDef { name: "pet".into(), columns: vec![col("owner", ColType::Text), col("age", ColType::Number)] },
            ],
            foreign_keys: vec![],
            values: vec![],
        }
    }

    #[test]
    fn smallest_query() {
        let s = schema();
        assert_eq!(render_sql(&SqlAst::count_star(0), &s), "SELECT count(*) FROM t");
        assert_eq!(parse_sql("select COUNT(*) from T", &s).unwrap(), SqlAst::count_star(0));
    }

    #[test]
    fn joined_refs_are_qualified() {
        let s = schema();
        let text = "SELECT t.name, count(*) FROM t JOIN pet ON t.name = pet.owner WHERE pet.age > 3 AND t.name != 'o''k' GROUP BY t.name ORDER BY count(*) DESC LIMIT 2";
        let ast = parse_sql(text, &s).unwrap();
        assert_eq!(render_sql(&ast, &s), text);
    }

    #[test]
    fn errors_carry_positions() {
        let s = schema();
        match parse_sql("SELECT age FROM t JOIN pet ON name = owner", &s).unwrap_err() {
            SqlError::Parse { pos, msg } => {
                assert_eq!(pos, 7);
                assert!(msg.contains("ambiguous"));
            }
            e => panic!("{e}"),
        }
        assert!(matches!(parse_sql("SELECT sum(name) FROM t", &s), Err(SqlError::Validation(_))));
        assert!(matches!(parse_sql("SELECT name FROM t LIMIT 3", &s), Err(SqlError::Parse { pos: 19, .. })));
        assert!(matches!(parse_sql("SELECT name FROM t WHERE name = 'x", &s), Err(SqlError::Parse { pos: 32, .. })));
    }
}
