use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Batch, BatchItem, Corpus};
use crate::encoder::{encode_context, serialize_input, EncoderDims, EncoderParams, SerializedInput, Vocab};
use crate::error::ModelError;
use crate::numerics::{derive_seed, Graph, ParamStore, Var};
use crate::parser::{decode, t2s_loss, DecodeOptions, DecodeResult, DecoderContext, DecoderParams};
use crate::sqlkit::{ast_to_actions, Action, SchemaDef};
use crate::uncertainty::{
    gated_fusion, joint_loss, kl_du, latent_view, two_view_latents, BatchTerms, GaussianParams, JointLoss,
    LatentParams, LossWeights,
};

use super::{HarnessError, TrainConfig};

/// Sidecar saved next to checkpoints: what is needed to rebuild the
/// parameter layout besides the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub vocab: Vec<String>,
    pub max_len: usize,
    pub steps_per_epoch: usize,
}

/// Parameters and layout of one model.
#[derive(Debug, Clone)]
pub struct SunModel {
    pub store: ParamStore,
    pub enc: EncoderParams,
    pub lat: LatentParams,
    pub dec: DecoderParams,
    pub vocab: Vocab,
    pub max_len: usize,
    pub sun: bool,
    pub enable_du: bool,
    pub enable_mu: bool,
    pub dropout: f64,
    pub weights: LossWeights,
}

impl SunModel {
    /// Fresh parameters. Registration order, and so initialization, does not
    /// depend on the loss toggles.
    pub fn new(config: &TrainConfig, vocab: Vocab, max_len: usize) -> Result<Self, ModelError> {
        let mut store = ParamStore::new(config.seed);
        let dims = EncoderDims {
            vocab: vocab.len(),
            d: config.dims.d,
            layers: config.dims.layers,
            heads: config.dims.heads,
            max_len,
        };
        let enc = EncoderParams::register(&mut store, dims)?;
        let lat = LatentParams::register(&mut store, config.dims.d)?;
        let dec = DecoderParams::register(&mut store, config.dims.d, config.dims.d_dec, enc.tok)?;
        Ok(Self {
            store,
            enc,
            lat,
            dec,
            vocab,
            max_len,
            sun: config.sun_enabled(),
            enable_du: config.enable_du,
            enable_mu: config.enable_mu,
            dropout: config.dropout_rate,
            weights: LossWeights {
                du: config.loss_weights.du,
                mu: config.loss_weights.mu,
                temperature: config.mu_temperature,
            },
        })
    }

    /// Inputs, gold sequences and literal tokens for every example.
    pub fn prepare<'c>(&self, corpus: &'c Corpus) -> Result<Prepared<'c>, HarnessError> {
        Prepared::new(corpus, &self.vocab, self.max_len)
    }

    /// Encodes one record and returns the decoder context plus the latent
    /// distribution when the latent path is on.
    fn context(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        idx: usize,
        seed: u64,
        training: bool,
    ) -> Result<(DecoderContext, Option<GaussianParams>), ModelError> {
        let input = &prep.inputs[idx];
        let values = prep.value_tokens(idx).to_vec();
        if self.sun {
            let v = latent_view(g, &self.enc, &self.lat, input, self.dropout, seed, training)?;
            let fused = gated_fusion(g, &self.lat, v.sample.z, v.enc.x)?;
            let ctx = DecoderContext::new(g, &self.dec, fused.u, &v.enc.table_spans, &v.enc.column_spans, values)?;
            Ok((ctx, Some(v.gauss)))
        } else {
            let e = encode_context(g, &self.enc, input, self.dropout, derive_seed(seed, &[0]), training)?;
            let ctx = DecoderContext::new(g, &self.dec, e.x, &e.table_spans, &e.column_spans, values)?;
            Ok((ctx, None))
        }
    }

    /// Teacher-forced loss of one record and its latent distribution.
    pub fn record_loss(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        idx: usize,
        seed: u64,
        training: bool,
    ) -> Result<(Var, Option<GaussianParams>), ModelError> {
        let (ctx, gauss) = self.context(g, prep, idx, seed, training)?;
        let loss = t2s_loss(g, &self.dec, &ctx, prep.schema(idx), &prep.gold[idx])?;
        Ok((loss, gauss))
    }

    /// Collects the per-item terms of a batch. Every random stream derives
    /// from `seed` and the item position, so a fixed seed freezes all
    /// dropout masks and noise draws.
    pub fn batch_terms(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        batch: &Batch,
        seed: u64,
        training: bool,
    ) -> Result<BatchTerms, ModelError> {
        let mut terms = BatchTerms::default();
        for (i, item) in batch.items.iter().enumerate() {
            let s = derive_seed(seed, &[i as u64]);
            match *item {
                BatchItem::Paired { record, partner } => {
                    let (l1, p1) = self.record_loss(g, prep, record, derive_seed(s, &[0]), training)?;
                    let (l2, p2) = self.record_loss(g, prep, partner, derive_seed(s, &[1]), training)?;
                    terms.t2s.extend([l1, l2]);
                    if let (true, Some(p), Some(p_bar)) = (self.enable_du, p1, p2) {
                        terms.kl.push(kl_du(g, p_bar, p)?);
                    }
                }
                BatchItem::Singleton { record } if self.sun && self.enable_mu => {
                    let seeds = (derive_seed(s, &[0]), derive_seed(s, &[1]));
                    let input = &prep.inputs[record];
                    let (a, b) = two_view_latents(g, &self.enc, &self.lat, input, self.dropout, seeds, training)?;
                    let fused = gated_fusion(g, &self.lat, a.sample.z, a.enc.x)?;
                    let ctx = DecoderContext::new(
                        g,
                        &self.dec,
                        fused.u,
                        &a.enc.table_spans,
                        &a.enc.column_spans,
                        prep.value_tokens(record).to_vec(),
                    )?;
                    terms.t2s.push(t2s_loss(g, &self.dec, &ctx, prep.schema(record), &prep.gold[record])?);
                    terms.views.push((a.sample.z, b.sample.z));
                }
                BatchItem::Singleton { record } => {
                    let (l, _) = self.record_loss(g, prep, record, derive_seed(s, &[0]), training)?;
                    terms.t2s.push(l);
                }
            }
        }
        Ok(terms)
    }

    pub fn batch_loss(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        batch: &Batch,
        seed: u64,
        training: bool,
    ) -> Result<JointLoss, ModelError> {
        let terms = self.batch_terms(g, prep, batch, seed, training)?;
        joint_loss(g, &terms, self.weights)
    }

    /// Inference-mode decode of one record (no dropout, `z = μ`).
    pub fn predict(&self, prep: &Prepared, idx: usize, opts: DecodeOptions) -> Result<DecodeResult, ModelError> {
        let mut g = Graph::with_params(&self.store);
        let (ctx, _) = self.context(&mut g, prep, idx, 0, false)?;
        decode(&mut g, &self.dec, &ctx, prep.schema(idx), opts)
    }
}

/// Per-example model inputs derived from a corpus.
#[derive(Debug, Clone)]
pub struct Prepared<'c> {
    pub corpus: &'c Corpus,
    pub inputs: Vec<SerializedInput>,
    pub gold: Vec<Vec<Action>>,
    schema_of: Vec<usize>,
    literal_tokens: Vec<Vec<usize>>,
}

impl<'c> Prepared<'c> {
    pub fn new(corpus: &'c Corpus, vocab: &Vocab, max_len: usize) -> Result<Self, HarnessError> {
        let index: HashMap<&str, usize> = corpus.schemas.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let literal_tokens =
            corpus.schemas.iter().map(|s| s.values.iter().map(|v| vocab.encode(&v.token())).collect()).collect();
        let mut inputs = Vec::with_capacity(corpus.examples.len());
        let mut gold = Vec::with_capacity(corpus.examples.len());
        let mut schema_of = Vec::with_capacity(corpus.examples.len());
        for e in &corpus.examples {
            let &si = index
                .get(e.schema_id.as_str())
                .ok_or_else(|| HarnessError::Data(format!("{}: unknown schema {}", e.id, e.schema_id)))?;
            let schema = &corpus.schemas[si];
            let input = serialize_input(vocab, e, schema)?;
            if input.len() > max_len {
                return Err(HarnessError::Data(format!(
                    "{}: serialized input of {} tokens exceeds the model's {max_len}",
                    e.id,
                    input.len()
                )));
            }
            inputs.push(input);
            gold.push(ast_to_actions(&e.gold_ast, schema).map_err(|err| HarnessError::Data(format!("{}: {err}", e.id)))?);
            schema_of.push(si);
        }
        Ok(Self { corpus, inputs, gold, schema_of, literal_tokens })
    }

    pub fn schema(&self, idx: usize) -> &'c SchemaDef {
        &self.corpus.schemas[self.schema_of[idx]]
    }

    pub fn value_tokens(&self, idx: usize) -> &[usize] {
        &self.literal_tokens[self.schema_of[idx]]
    }

    /// Longest serialized input, rounded up to a multiple of 8.
    pub fn max_len_for(corpus: &Corpus, vocab: &Vocab) -> Result<usize, HarnessError> {
        let mut longest = 0;
        for e in &corpus.examples {
            let schema = corpus
                .schema(&e.schema_id)
                .ok_or_else(|| HarnessError::Data(format!("{}: unknown schema {}", e.id, e.schema_id)))?;
            longest = longest.max(serialize_input(vocab, e, schema)?.len());
        }
        Ok(longest.div_ceil(8) * 8 + 8)
    }
}
