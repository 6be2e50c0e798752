//! Token-level contextual encoder and the pooled global representation.
//!
//! The input is flattened as
//! `[SEP_Q] question.. ([SEP_T] table.. ([SEP_C] column..)*)*` and run
//! through a small stack of self-attention blocks.

use std::collections::HashMap;

use crate::corpus::{Corpus, ExampleRecord, Split};
use crate::error::ModelError;
use crate::numerics::{derive_seed, Graph, ParamId, ParamStore, Var};
use crate::sqlkit::{name_tokens, SchemaDef};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP_Q: usize = 2;
pub const SEP_T: usize = 3;
pub const SEP_C: usize = 4;
const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<q>", "<t>", "<c>"];

/// Conv window widths of the global representation, in concatenation order.
pub const WINDOWS: [usize; 3] = [3, 4, 5];
/// Serialized inputs are padded to at least the widest window.
pub const MIN_LEN: usize = 5;

pub const TYPE_QUESTION: usize = 0;
pub const TYPE_TABLE: usize = 1;
pub const TYPE_COLUMN: usize = 2;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// The five reserved entries only.
    pub fn new() -> Self {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for t in RESERVED {
            v.add(t);
        }
        v
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    /// Question tokens of the train split plus the name and literal tokens
    /// of every schema the train split uses, in order of first appearance.
    pub fn build(corpus: &Corpus) -> Self {
        let mut v = Self::new();
        let mut seen_schemas: Vec<&str> = Vec::new();
        for (_, e) in corpus.split(Split::Train) {
            for t in &e.question {
                v.add(t);
            }
            if !seen_schemas.contains(&e.schema_id.as_str()) {
                seen_schemas.push(&e.schema_id);
                if let Some(s) = corpus.schema(&e.schema_id) {
                    v.add_schema(s);
                }
            }
        }
        v
    }

    fn add_schema(&mut self, schema: &SchemaDef) {
        for t in &schema.tables {
            for tok in name_tokens(&t.name) {
                self.add(&tok);
            }
            for c in &t.columns {
                for tok in name_tokens(&c.name) {
                    self.add(&tok);
                }
            }
        }
        for value in &schema.values {
            self.add(&value.token());
        }
    }

    /// Rebuilds a vocabulary from its token list, which must start with the
    /// reserved entries.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, ModelError> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(ModelError::Contract("vocabulary does not start with the reserved tokens".into()));
        }
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for t in &tokens {
            if v.index.contains_key(t) {
                return Err(ModelError::Contract(format!("duplicate vocabulary token `{t}`")));
            }
            v.add(t);
        }
        Ok(v)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Token ids, segment types and schema-item spans of one flattened input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedInput {
    pub ids: Vec<usize>,
    pub types: Vec<usize>,
    /// `[start, end)` of each table's name tokens, in declaration order.
    pub table_spans: Vec<(usize, usize)>,
    /// Same for every column, by global column index.
    pub column_spans: Vec<(usize, usize)>,
}

impl SerializedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn serialize_input(
    vocab: &Vocab,
    record: &ExampleRecord,
    schema: &SchemaDef,
) -> Result<SerializedInput, ModelError> {
    if record.schema_id != schema.id {
        return Err(ModelError::Contract(format!(
            "record {} uses schema {} but {} was given",
            record.id, record.schema_id, schema.id
        )));
    }
    Ok(serialize_tokens(vocab, &record.question, schema))
}

/// Flattens a question and schema, then pads with PAD to [`MIN_LEN`].
pub fn serialize_tokens(vocab: &Vocab, question: &[String], schema: &SchemaDef) -> SerializedInput {
    let mut ids = vec![SEP_Q];
    let mut types = vec![TYPE_QUESTION];
    for q in question {
        ids.push(vocab.encode(q));
        types.push(TYPE_QUESTION);
    }
    let mut table_spans = Vec::new();
    let mut column_spans = Vec::new();
    let push_name = |ids: &mut Vec<usize>, types: &mut Vec<usize>, sep, ty, name: &str| {
        ids.push(sep);
        types.push(ty);
        let start = ids.len();
        for tok in name_tokens(name) {
            ids.push(vocab.encode(&tok));
            types.push(ty);
        }
        (start, ids.len())
    };
    for t in &schema.tables {
        table_spans.push(push_name(&mut ids, &mut types, SEP_T, TYPE_TABLE, &t.name));
        for c in &t.columns {
            column_spans.push(push_name(&mut ids, &mut types, SEP_C, TYPE_COLUMN, &c.name));
        }
    }
    while ids.len() < MIN_LEN {
        ids.push(PAD);
        types.push(TYPE_QUESTION);
    }
    SerializedInput { ids, types, table_spans, column_spans }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderDims {
    pub vocab: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone)]
struct BlockParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ff1: ParamId,
    ff1_b: ParamId,
    ff2: ParamId,
    ff2_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub tok: ParamId,
    pub pos: ParamId,
    pub seg: ParamId,
    blocks: Vec<BlockParams>,
    /// One `[(w·d) × d]` kernel and bias per entry of [`WINDOWS`].
    pub conv: Vec<(ParamId, ParamId)>,
    pub wc: ParamId,
    pub bc: ParamId,
}

impl EncoderParams {
    pub fn register(store: &mut ParamStore, dims: EncoderDims) -> Result<Self, ModelError> {
        let d = dims.d;
        if d == 0 || dims.heads == 0 || d % dims.heads != 0 {
            return Err(ModelError::Contract(format!("d = {d} is not divisible into {} heads", dims.heads)));
        }
        if dims.vocab < RESERVED.len() || dims.max_len < MIN_LEN {
            return Err(ModelError::Contract(format!(
                "vocab {} / max_len {} below the reserved minimum",
                dims.vocab, dims.max_len
            )));
        }
        // Unit-scale embeddings keep early attention scores away from uniform.
        let tok = store.uniform("enc.tok", vec![dims.vocab, d], 1.0)?;
        let pos = store.uniform("enc.pos", vec![dims.max_len, d], 1.0)?;
        let seg = store.uniform("enc.type", vec![3, d], 1.0)?;
        let mut blocks = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let name = |s: &str| format!("enc.l{l}.{s}");
            blocks.push(BlockParams {
                wq: store.xavier(&name("wq"), d, d)?,
                wk: store.xavier(&name("wk"), d, d)?,
                wv: store.xavier(&name("wv"), d, d)?,
                wo: store.xavier(&name("wo"), d, d)?,
                ff1: store.xavier(&name("ff1"), d, 4 * d)?,
                ff1_b: store.zeros(&name("ff1_b"), vec![4 * d])?,
                ff2: store.xavier(&name("ff2"), 4 * d, d)?,
                ff2_b: store.zeros(&name("ff2_b"), vec![d])?,
            });
        }
        let mut conv = Vec::new();
        for w in WINDOWS {
            conv.push((store.xavier(&format!("enc.conv{w}"), w * d, d)?, store.zeros(&format!("enc.conv{w}_b"), vec![d])?));
        }
        let wc = store.xavier("enc.wc", WINDOWS.len() * d, d)?;
        let bc = store.zeros("enc.bc", vec![d])?;
        Ok(Self { dims, tok, pos, seg, blocks, conv, wc, bc })
    }
}

/// X_I together with the spans needed for pointer scoring.
#[derive(Debug, Clone)]
pub struct ContextualEncoding {
    pub x: Var,
    pub table_spans: Vec<(usize, usize)>,
    pub column_spans: Vec<(usize, usize)>,
}

impl ContextualEncoding {
    /// Tables first, then columns by global index.
    pub fn item_spans(&self) -> Vec<(usize, usize)> {
        self.table_spans.iter().chain(&self.column_spans).copied().collect()
    }
}

/// Runs the embedding layer and every attention block.
///
/// Dropout masks are derived from `dropout_seed`, so a fixed seed freezes
/// them.
pub fn encode_context(
    g: &mut Graph,
    p: &EncoderParams,
    input: &SerializedInput,
    dropout: f64,
    dropout_seed: u64,
    training: bool,
) -> Result<ContextualEncoding, ModelError> {
    let n = input.len();
    if n == 0 {
        return Err(ModelError::Contract("empty input sequence".into()));
    }
    if let Some(&bad) = input.ids.iter().find(|&&i| i >= p.dims.vocab) {
        return Err(ModelError::Contract(format!("token index {bad} outside vocabulary of {}", p.dims.vocab)));
    }
    if n > p.dims.max_len {
        return Err(ModelError::Contract(format!("input of {n} tokens exceeds max_len {}", p.dims.max_len)));
    }
    if input.types.len() != n || input.types.iter().any(|&t| t > TYPE_COLUMN) {
        return Err(ModelError::Contract("type ids do not match the token sequence".into()));
    }
    let tok = g.param(p.tok);
    let pos = g.param(p.pos);
    let seg = g.param(p.seg);
    let e_tok = g.gather_rows(tok, &input.ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let e_pos = g.gather_rows(pos, &positions)?;
    let e_seg = g.gather_rows(seg, &input.types)?;
    let mut x = g.add(e_tok, e_pos)?;
    x = g.add(x, e_seg)?;

    let d = p.dims.d;
    let heads = p.dims.heads;
    let dh = d / heads;
    for (l, b) in p.blocks.iter().enumerate() {
        let wq = g.param(b.wq);
        let wk = g.param(b.wk);
        let wv = g.param(b.wv);
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let wo = g.param(b.wo);
        let att = g.matmul(cat, wo)?;
        let (att, _) = g.dropout(att, dropout, derive_seed(dropout_seed, &[l as u64, 0]), training)?;
        let r = g.add(x, att)?;
        x = g.layer_norm(r, LN_EPS)?;

        let (w1, b1, w2, b2) = (g.param(b.ff1), g.param(b.ff1_b), g.param(b.ff2), g.param(b.ff2_b));
        let hdn = g.affine(x, w1, b1)?;
        let hdn = g.gelu(hdn);
        let ff = g.affine(hdn, w2, b2)?;
        let (ff, _) = g.dropout(ff, dropout, derive_seed(dropout_seed, &[l as u64, 1]), training)?;
        let r = g.add(x, ff)?;
        x = g.layer_norm(r, LN_EPS)?;
    }
    Ok(ContextualEncoding { x, table_spans: input.table_spans.clone(), column_spans: input.column_spans.clone() })
}

/// H = W_c [pool₃; pool₄; pool₅] + b_c over the whole serialized sequence.
pub fn global_rep(g: &mut Graph, p: &EncoderParams, x: Var) -> Result<Var, ModelError> {
    let mut pooled = Vec::with_capacity(WINDOWS.len());
    for (&w, &(k, b)) in WINDOWS.iter().zip(&p.conv) {
        let (k, b) = (g.param(k), g.param(b));
        pooled.push(g.conv_maxpool(x, k, b, w)?);
    }
    let cat = g.concat(&pooled)?;
    let (wc, bc) = (g.param(p.wc), g.param(p.bc));
    let h = g.matmul(cat, wc)?;
    Ok(g.add(h, bc)?)
}
