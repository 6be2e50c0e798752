//! Grammar-action decoder: a gated recurrent cell with dot attention over
//! the fused encoding, rule heads, pointer heads over schema-item spans,
//! teacher-forced loss and greedy/beam inference.

use std::cmp::Ordering;

use crate::error::ModelError;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::sqlkit::{Action, GrammarState, NonTerminal, SchemaDef, SqlAst, NUM_RULES, VALUE_BASE};

pub const DEFAULT_MAX_STEPS: usize = 100;

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub d: usize,
    pub d_dec: usize,
    /// Token embedding table shared with the encoder; literal rules are
    /// scored against the embedding of the literal's token.
    pub tok: ParamId,
    pub start: ParamId,
    pub rule_emb: ParamId,
    pub nt_emb: ParamId,
    pub gru_w: [ParamId; 3],
    pub gru_u: [ParamId; 3],
    pub gru_b: [ParamId; 3],
    pub h0_w: ParamId,
    pub h0_b: ParamId,
    pub att_w: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub rule_out: ParamId,
    pub rule_bias: ParamId,
    pub val_w: ParamId,
    pub tab_w: ParamId,
    pub col_w: ParamId,
}

impl DecoderParams {
    pub fn register(store: &mut ParamStore, d: usize, d_dec: usize, tok: ParamId) -> Result<Self, ModelError> {
        if d == 0 || d_dec == 0 {
            return Err(ModelError::Contract("decoder dimensions must be positive".into()));
        }
        let gate = |store: &mut ParamStore, k: &str| -> Result<(ParamId, ParamId, ParamId), ModelError> {
            Ok((
                store.xavier(&format!("dec.gru_w{k}"), 2 * d, d_dec)?,
                store.xavier(&format!("dec.gru_u{k}"), d_dec, d_dec)?,
                store.zeros(&format!("dec.gru_b{k}"), vec![d_dec])?,
            ))
        };
        let start = store.uniform("dec.start", vec![d], 0.1)?;
        let rule_emb = store.uniform("dec.rule_emb", vec![NUM_RULES, d], 0.1)?;
        let nt_emb = store.uniform("dec.nt_emb", vec![NonTerminal::ALL.len(), d], 0.1)?;
        let (wr, ur, br) = gate(store, "r")?;
        let (wz, uz, bz) = gate(store, "z")?;
        let (wn, un, bn) = gate(store, "n")?;
        Ok(Self {
            d,
            d_dec,
            tok,
            start,
            rule_emb,
            nt_emb,
            gru_w: [wr, wz, wn],
            gru_u: [ur, uz, un],
            gru_b: [br, bz, bn],
            h0_w: store.xavier("dec.h0_w", d, d_dec)?,
            h0_b: store.zeros("dec.h0_b", vec![d_dec])?,
            att_w: store.xavier("dec.att_w", d_dec, d)?,
            out_w: store.xavier("dec.out_w", d_dec + d, d)?,
            out_b: store.zeros("dec.out_b", vec![d])?,
            rule_out: store.xavier("dec.rule_out", NUM_RULES, d)?,
            rule_bias: store.zeros("dec.rule_bias", vec![NUM_RULES, 1])?,
            val_w: store.xavier("dec.val_w", d, d)?,
            tab_w: store.xavier("dec.tab_w", d, d)?,
            col_w: store.xavier("dec.col_w", d, d)?,
        })
    }
}

/// Per-example decoder inputs derived once from the encoding.
#[derive(Debug, Clone)]
pub struct DecoderContext {
    pub u: Var,
    /// Span means of every schema item: tables first, then columns.
    pub items: Var,
    pub n_tables: usize,
    /// Vocabulary index of each schema literal's token.
    pub value_tokens: Vec<usize>,
    pub h0: Var,
}

impl DecoderContext {
    pub fn new(
        g: &mut Graph,
        p: &DecoderParams,
        u: Var,
        table_spans: &[(usize, usize)],
        column_spans: &[(usize, usize)],
        value_tokens: Vec<usize>,
    ) -> Result<Self, ModelError> {
        let spans: Vec<(usize, usize)> = table_spans.iter().chain(column_spans).copied().collect();
        if spans.iter().any(|&(s, e)| s >= e) {
            return Err(ModelError::Contract("schema item with an empty span".into()));
        }
        let items = g.span_means(u, &spans)?;
        let mean = g.mean_rows(u)?;
        let (w, b) = (g.param(p.h0_w), g.param(p.h0_b));
        let h = g.matmul(mean, w)?;
        let h = g.add(h, b)?;
        let h0 = g.tanh(h);
        Ok(Self { u, items, n_tables: table_spans.len(), value_tokens, h0 })
    }
}

/// A partial derivation: recurrent state, grammar frontier and the actions
/// emitted so far.
#[derive(Debug, Clone)]
pub struct DecoderState<'s> {
    pub hidden: Var,
    /// Embedding of the previous action (the start symbol at step 0).
    pub prev: Var,
    pub grammar: GrammarState<'s>,
    pub emitted: Vec<Action>,
}

impl<'s> DecoderState<'s> {
    pub fn initial(g: &mut Graph, p: &DecoderParams, ctx: &DecoderContext, schema: &'s SchemaDef) -> Self {
        let prev = g.param(p.start);
        Self { hidden: ctx.h0, prev, grammar: GrammarState::new(schema), emitted: Vec::new() }
    }
}

/// Scores of one decoding step.
#[derive(Debug, Clone)]
pub struct StepScores {
    pub hidden: Var,
    pub candidates: Vec<Action>,
    /// Raw scores aligned with `candidates`.
    pub scores: Var,
    /// `scores − logsumexp(scores)`.
    pub log_probs: Vec<f64>,
}

fn gru(g: &mut Graph, p: &DecoderParams, x: Var, h: Var) -> Result<Var, ModelError> {
    let mut pre = [h; 3];
    for k in 0..3 {
        let (w, b) = (g.param(p.gru_w[k]), g.param(p.gru_b[k]));
        let xw = g.matmul(x, w)?;
        pre[k] = g.add(xw, b)?;
    }
    let (ur, uz, un) = (g.param(p.gru_u[0]), g.param(p.gru_u[1]), g.param(p.gru_u[2]));
    let hr = g.matmul(h, ur)?;
    let r = g.add(pre[0], hr)?;
    let r = g.sigmoid(r);
    let hz = g.matmul(h, uz)?;
    let z = g.add(pre[1], hz)?;
    let z = g.sigmoid(z);
    let hn = g.matmul(h, un)?;
    let rn = g.mul(r, hn)?;
    let n = g.add(pre[2], rn)?;
    let n = g.tanh(n);
    // h' = n + z ⊙ (h − n)
    let dh = g.sub(h, n)?;
    let zd = g.mul(z, dh)?;
    Ok(g.add(n, zd)?)
}

/// Recurrent update followed by attention; returns the new hidden state and
/// the output vector the heads score against.
fn advance(
    g: &mut Graph,
    p: &DecoderParams,
    ctx: &DecoderContext,
    state: &DecoderState,
    nt: NonTerminal,
) -> Result<(Var, Var), ModelError> {
    let nt_table = g.param(p.nt_emb);
    let nt_e = g.row(nt_table, nt.index())?;
    let x = g.concat(&[state.prev, nt_e])?;
    let h = gru(g, p, x, state.hidden)?;
    let att_w = g.param(p.att_w);
    let q = g.matmul(h, att_w)?;
    let s = g.matmul_nt(q, ctx.u)?;
    let a = g.softmax_rows(s);
    let c = g.matmul(a, ctx.u)?;
    let hc = g.concat(&[h, c])?;
    let (w, b) = (g.param(p.out_w), g.param(p.out_b));
    let o = g.matmul(hc, w)?;
    let o = g.add(o, b)?;
    Ok((h, g.tanh(o)))
}

fn rule_scores(g: &mut Graph, p: &DecoderParams, ctx: &DecoderContext, o: Var, rules: &[usize]) -> Result<Var, ModelError> {
    let (plain, values): (Vec<usize>, Vec<usize>) = rules.iter().partition(|&&r| r < VALUE_BASE);
    let bias_table = g.param(p.rule_bias);
    let mut parts = Vec::new();
    if !plain.is_empty() {
        let table = g.param(p.rule_out);
        let rows = g.gather_rows(table, &plain)?;
        parts.push(g.matmul_nt(o, rows)?);
    }
    if !values.is_empty() {
        let toks: Vec<usize> = values
            .iter()
            .map(|&r| {
                ctx.value_tokens.get(r - VALUE_BASE).copied().ok_or_else(|| {
                    ModelError::Contract(format!("value rule {r} has no literal in this schema"))
                })
            })
            .collect::<Result<_, _>>()?;
        let w = g.param(p.val_w);
        let q = g.matmul(o, w)?;
        let tok = g.param(p.tok);
        let rows = g.gather_rows(tok, &toks)?;
        parts.push(g.matmul_nt(q, rows)?);
    }
    let s = if parts.len() == 1 { parts[0] } else { g.concat(&parts)? };
    // Bias rows in the same (plain, then value) order as the scores.
    let order: Vec<usize> = plain.iter().chain(&values).copied().collect();
    let bias = g.gather_rows(bias_table, &order)?;
    let bias = g.reshape(bias, vec![order.len()])?;
    let s = g.add(s, bias)?;
    if order == rules {
        return Ok(s);
    }
    // Restore the caller's order.
    let pos: Vec<usize> = rules.iter().map(|r| order.iter().position(|o| o == r).expect("partitioned")).collect();
    let n = pos.len();
    let m = g.reshape(s, vec![n, 1])?;
    let m = g.gather_rows(m, &pos)?;
    Ok(g.reshape(m, vec![n])?)
}

fn pointer_scores(
    g: &mut Graph,
    ctx: &DecoderContext,
    o: Var,
    w: ParamId,
    rows: &[usize],
) -> Result<Var, ModelError> {
    let w = g.param(w);
    let q = g.matmul(o, w)?;
    let reps = g.gather_rows(ctx.items, rows)?;
    Ok(g.matmul_nt(q, reps)?)
}

/// Raw scores for `cands`, which must all share one action kind.
fn score_candidates(
    g: &mut Graph,
    p: &DecoderParams,
    ctx: &DecoderContext,
    o: Var,
    cands: &[Action],
) -> Result<Var, ModelError> {
    match cands.first() {
        None => Err(ModelError::Contract("no candidates to score".into())),
        Some(Action::ApplyRule(_)) => {
            let rules: Vec<usize> = cands
                .iter()
                .map(|a| match a {
                    Action::ApplyRule(r) => Ok(*r),
                    _ => Err(ModelError::Contract("mixed candidate kinds".into())),
                })
                .collect::<Result<_, _>>()?;
            rule_scores(g, p, ctx, o, &rules)
        }
        Some(Action::SelectTable(_)) => {
            let rows: Vec<usize> = cands
                .iter()
                .map(|a| match a {
                    Action::SelectTable(t) => Ok(*t),
                    _ => Err(ModelError::Contract("mixed candidate kinds".into())),
                })
                .collect::<Result<_, _>>()?;
            pointer_scores(g, ctx, o, p.tab_w, &rows)
        }
        Some(Action::SelectColumn(_)) => {
            let rows: Vec<usize> = cands
                .iter()
                .map(|a| match a {
                    Action::SelectColumn(c) => Ok(ctx.n_tables + c),
                    _ => Err(ModelError::Contract("mixed candidate kinds".into())),
                })
                .collect::<Result<_, _>>()?;
            pointer_scores(g, ctx, o, p.col_w, &rows)
        }
    }
}

/// Every action the model can emit for `schema`, grouped by kind.
fn full_inventory(schema: &SchemaDef) -> Vec<Vec<Action>> {
    let rules = (0..VALUE_BASE + schema.values.len()).map(Action::ApplyRule).collect();
    let tables = (0..schema.tables.len()).map(Action::SelectTable).collect();
    let cols = (0..schema.num_columns()).map(Action::SelectColumn).collect();
    vec![rules, tables, cols]
}

fn action_embedding(g: &mut Graph, p: &DecoderParams, ctx: &DecoderContext, a: Action) -> Result<Var, ModelError> {
    Ok(match a {
        Action::ApplyRule(r) => {
            let t = g.param(p.rule_emb);
            g.row(t, r)?
        }
        Action::SelectTable(t) => g.row(ctx.items, t)?,
        Action::SelectColumn(c) => g.row(ctx.items, ctx.n_tables + c)?,
    })
}

/// Advances the recurrent state and scores the candidate actions: the
/// admissible set when `constrained`, the full inventory otherwise.
pub fn step_scores(
    g: &mut Graph,
    p: &DecoderParams,
    ctx: &DecoderContext,
    state: &DecoderState,
    constrained: bool,
) -> Result<StepScores, ModelError> {
    let nt = state.grammar.frontier().ok_or_else(|| ModelError::Contract("step on an empty frontier".into()))?;
    let (hidden, o) = advance(g, p, ctx, state, nt)?;
    let (candidates, scores) = if constrained {
        let cands = state.grammar.admissible();
        let s = score_candidates(g, p, ctx, o, &cands)?;
        (cands, s)
    } else {
        let mut cands = Vec::new();
        let mut parts = Vec::new();
        for group in full_inventory(state.grammar.schema()) {
            if group.is_empty() {
                continue;
            }
            parts.push(score_candidates(g, p, ctx, o, &group)?);
            cands.extend(group);
        }
        let s = g.concat(&parts)?;
        (cands, s)
    };
    let values = g.value(scores);
    let lse = crate::numerics::kernels::logsumexp(values);
    let log_probs = values.iter().map(|v| v - lse).collect();
    Ok(StepScores { hidden, candidates, scores, log_probs })
}

/// Teacher-forced mean over steps of `−log p(gold | prefix)`, normalized over
/// the admissible set at each step.
pub fn t2s_loss(
    g: &mut Graph,
    p: &DecoderParams,
    ctx: &DecoderContext,
    schema: &SchemaDef,
    gold: &[Action],
) -> Result<Var, ModelError> {
    if gold.is_empty() {
        return Err(ModelError::Data { step: 0, msg: "empty gold sequence".into() });
    }
    let mut state = DecoderState::initial(g, p, ctx, schema);
    let mut losses = Vec::with_capacity(gold.len());
    for (step, &a) in gold.iter().enumerate() {
        let nt = state
            .grammar
            .frontier()
            .ok_or_else(|| ModelError::Data { step, msg: format!("{a} after a complete query") })?;
        let cands = state.grammar.admissible();
        let Some(k) = cands.iter().position(|&c| c == a) else {
            return Err(ModelError::Data { step, msg: format!("{a} not admissible at {nt:?}") });
        };
        let (hidden, o) = advance(g, p, ctx, &state, nt)?;
        if cands.len() == 1 {
            losses.push(g.constant(Tensor::scalar(0.0)));
        } else {
            let s = score_candidates(g, p, ctx, o, &cands)?;
            let lse = g.logsumexp(s);
            let gold_s = g.index(s, k)?;
            losses.push(g.sub(lse, gold_s)?);
        }
        state.grammar.apply(a).map_err(|e| ModelError::Data { step, msg: e.to_string() })?;
        state.emitted.push(a);
        state.hidden = hidden;
        state.prev = action_embedding(g, p, ctx, a)?;
    }
    if !state.grammar.is_complete() {
        return Err(ModelError::Data { step: gold.len(), msg: "gold sequence is incomplete".into() });
    }
    let all = g.concat(&losses)?;
    Ok(g.mean(all))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

impl DecodeMode {
    fn width(self) -> usize {
        match self {
            DecodeMode::Greedy => 1,
            DecodeMode::Beam(w) => w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    pub constrained: bool,
    pub max_steps: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { mode: DecodeMode::Greedy, constrained: true, max_steps: DEFAULT_MAX_STEPS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub actions: Vec<Action>,
    /// Present iff the sequence completed and the query validates.
    pub ast: Option<SqlAst>,
    /// Sum of the chosen actions' log-probabilities.
    pub score: f64,
    pub constrained: bool,
    /// The step budget ran out before the frontier emptied.
    pub truncated: bool,
}

impl DecodeResult {
    pub fn is_valid(&self) -> bool {
        self.ast.is_some()
    }
}

struct Hyp<'s> {
    state: DecoderState<'s>,
    score: f64,
}

struct Done {
    actions: Vec<Action>,
    ast: Option<SqlAst>,
    score: f64,
    truncated: bool,
}

fn by_score(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Finished hypotheses before truncated ones, then higher score first.
fn better(a: &Done, b: &Done) -> Ordering {
    a.truncated.cmp(&b.truncated).then(by_score(a.score, b.score))
}

fn beam_search(
    g: &mut Graph,
    p: &DecoderParams,
    ctx: &DecoderContext,
    schema: &SchemaDef,
    width: usize,
    opts: DecodeOptions,
) -> Result<Done, ModelError> {
    let mut live = vec![Hyp { state: DecoderState::initial(g, p, ctx, schema), score: 0.0 }];
    let mut done: Vec<Done> = Vec::new();
    for _ in 0..opts.max_steps {
        let mut expansions: Vec<(usize, usize, f64)> = Vec::new();
        let mut steps = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let st = step_scores(g, p, ctx, &hyp.state, opts.constrained)?;
            for (k, lp) in st.log_probs.iter().enumerate() {
                expansions.push((h, k, hyp.score + lp));
            }
            steps.push(st);
        }
        // Stable sort keeps candidate order among ties.
        expansions.sort_by(|a, b| by_score(a.2, b.2));
        let mut next = Vec::with_capacity(width);
        for &(h, k, score) in expansions.iter().take(width) {
            let st = &steps[h];
            let a = st.candidates[k];
            let mut state = live[h].state.clone();
            let applied =
                if opts.constrained { state.grammar.apply(a) } else { state.grammar.apply_structural(a) };
            state.emitted.push(a);
            if applied.is_err() {
                done.push(Done { actions: state.emitted, ast: None, score, truncated: false });
                continue;
            }
            if state.grammar.is_complete() {
                let ast = state.grammar.finish().ok().filter(|ast| ast.validate(schema).is_ok());
                done.push(Done { actions: state.emitted, ast, score, truncated: false });
                continue;
            }
            state.hidden = st.hidden;
            state.prev = action_embedding(g, p, ctx, a)?;
            next.push(Hyp { state, score });
        }
        live = next;
        let best_done = done.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
        // Log-probabilities only fall, so no live prefix can overtake.
        if live.iter().all(|h| h.score <= best_done) {
            live.clear();
        }
        if live.is_empty() {
            break;
        }
    }
    for h in live {
        done.push(Done { actions: h.state.emitted, ast: None, score: h.score, truncated: true });
    }
    done.sort_by(|a, b| better(a, b));
    Ok(done.into_iter().next().expect("at least one hypothesis ends"))
}

/// Decodes a query from the encoding.
///
/// A width-`w` beam returns the best of its own search and the width-`w−1`
/// result, so the final score never falls as the width grows.
pub fn decode(
    g: &mut Graph,
    p: &DecoderParams,
    ctx: &DecoderContext,
    schema: &SchemaDef,
    opts: DecodeOptions,
) -> Result<DecodeResult, ModelError> {
    if opts.max_steps == 0 || opts.mode.width() == 0 {
        return Err(ModelError::Contract("max_steps and beam width must be at least 1".into()));
    }
    let mut best: Option<Done> = None;
    for w in 1..=opts.mode.width() {
        let d = beam_search(g, p, ctx, schema, w, opts)?;
        if best.as_ref().is_none_or(|b| better(&d, b) == Ordering::Less) {
            best = Some(d);
        }
    }
    let d = best.expect("width ≥ 1");
    Ok(DecodeResult { actions: d.actions, ast: d.ast, score: d.score, constrained: opts.constrained, truncated: d.truncated })
}
