use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, Corpus, Split};
use crate::encoder::Vocab;
use crate::numerics::ParamStore;
use crate::parser::{DecodeMode, DecodeOptions, DEFAULT_MAX_STEPS};
use crate::sqlkit::{execute, Difficulty, SqlAst};

use super::model::{ModelMeta, SunModel};
use super::train::{read_metrics, StepLog, CONFIG_FILE, META_FILE, METRICS_FILE};
use super::{HarnessError, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bucket {
    pub em: f64,
    pub ex: f64,
    pub count: usize,
}

/// Per-epoch means of each logged loss component.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurves {
    pub t2s: Vec<f64>,
    pub du: Vec<f64>,
    pub mu: Vec<f64>,
    pub total: Vec<f64>,
}

impl LossCurves {
    pub fn from_log(log: &[StepLog], steps_per_epoch: usize) -> Self {
        let mut c = Self::default();
        for chunk in log.chunks(steps_per_epoch.max(1)) {
            let n = chunk.len() as f64;
            c.t2s.push(chunk.iter().map(|s| s.t2s).sum::<f64>() / n);
            c.du.push(chunk.iter().map(|s| s.du).sum::<f64>() / n);
            c.mu.push(chunk.iter().map(|s| s.mu).sum::<f64>() / n);
            c.total.push(chunk.iter().map(|s| s.total).sum::<f64>() / n);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub constrained: bool,
    pub count: usize,
    pub em: f64,
    pub ex: f64,
    /// Decodes that produced no valid query; counted wrong for EM and EX.
    pub invalid: usize,
    pub per_difficulty: BTreeMap<Difficulty, Bucket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_curves: Option<LossCurves>,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
}

fn frac(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

/// EM/EX of `predictions` against the gold queries of `split`, aligned with
/// the split's examples in corpus order. `None` is an invalid prediction.
pub fn score_predictions(
    corpus: &Corpus,
    split: Split,
    predictions: &[Option<SqlAst>],
) -> Result<MetricsReport, HarnessError> {
    let examples: Vec<_> = corpus.split(split).map(|(_, e)| e).collect();
    if examples.len() != predictions.len() {
        return Err(HarnessError::Data(format!(
            "{} predictions for {} examples in {split:?}",
            predictions.len(),
            examples.len()
        )));
    }
    let mut hits: BTreeMap<Difficulty, (usize, usize, usize)> = Difficulty::ALL.iter().map(|&d| (d, (0, 0, 0))).collect();
    let mut invalid = 0;
    for (e, pred) in examples.iter().zip(predictions) {
        let schema = corpus
            .schema(&e.schema_id)
            .ok_or_else(|| HarnessError::Data(format!("{}: unknown schema {}", e.id, e.schema_id)))?;
        let db = corpus
            .database(&e.schema_id)
            .ok_or_else(|| HarnessError::Data(format!("no database for schema {}", e.schema_id)))?;
        let bucket = hits.get_mut(&e.gold_ast.difficulty()).expect("all levels present");
        bucket.2 += 1;
        let Some(pred) = pred else {
            invalid += 1;
            continue;
        };
        if pred.canonicalize() == e.gold_ast.canonicalize() {
            bucket.0 += 1;
        }
        let gold_rows =
            execute(&e.gold_ast, schema, db).map_err(|err| HarnessError::Data(format!("{}: gold query fails: {err}", e.id)))?;
        if execute(pred, schema, db).is_ok_and(|rows| rows == gold_rows) {
            bucket.1 += 1;
        }
    }
    let (em, ex, n) = hits.values().fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(MetricsReport {
        split,
        constrained: true,
        count: n,
        em: frac(em, n),
        ex: frac(ex, n),
        invalid,
        per_difficulty: hits
            .into_iter()
            .map(|(d, (em, ex, c))| (d, Bucket { em: frac(em, c), ex: frac(ex, c), count: c }))
            .collect(),
        loss_curves: None,
        seed: None,
        config_digest: None,
    })
}

/// Decodes every example of `split` and scores the results.
pub fn evaluate_model(
    model: &SunModel,
    corpus: &Corpus,
    split: Split,
    opts: DecodeOptions,
) -> Result<MetricsReport, HarnessError> {
    let prep = model.prepare(corpus)?;
    let mut preds = Vec::new();
    for (i, _) in corpus.split(split) {
        let r = model.predict(&prep, i, opts)?;
        if opts.constrained && !r.is_valid() {
            return Err(HarnessError::Data(format!(
                "constrained decode of {} produced no valid query",
                corpus.examples[i].id
            )));
        }
        preds.push(r.ast);
    }
    let mut report = score_predictions(corpus, split, &preds)?;
    report.constrained = opts.constrained;
    Ok(report)
}

/// Rebuilds a model from a checkpoint file and the sidecars in its directory.
pub fn load_model(ckpt: &Path) -> Result<(TrainConfig, ModelMeta, SunModel), HarnessError> {
    let dir = ckpt.parent().unwrap_or(Path::new("."));
    // A missing or broken sidecar is bad input data, not bad usage.
    let sidecar = dir.join(CONFIG_FILE);
    let config = TrainConfig::load(&sidecar)
        .map_err(|e| HarnessError::Data(format!("checkpoint config {}: {e}", sidecar.display())))?;
    let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
    let vocab = Vocab::from_tokens(meta.vocab.clone())?;
    let mut model = SunModel::new(&config, vocab, meta.max_len)?;
    let loaded = ParamStore::load(ckpt, config.seed)?;
    model.store.copy_values_from(&loaded)?;
    Ok((config, meta, model))
}

/// Greedy decoding of `split`, constrained unless `unconstrained`.
pub fn evaluate_checkpoint(
    ckpt: &Path,
    data: &Path,
    split: Split,
    unconstrained: bool,
) -> Result<MetricsReport, HarnessError> {
    let (config, meta, model) = load_model(ckpt)?;
    let corpus = load_corpus(data)?;
    let opts = DecodeOptions { mode: DecodeMode::Greedy, constrained: !unconstrained, max_steps: DEFAULT_MAX_STEPS };
    let mut report = evaluate_model(&model, &corpus, split, opts)?;
    let metrics = ckpt.parent().unwrap_or(Path::new(".")).join(METRICS_FILE);
    if metrics.exists() {
        report.loss_curves = Some(LossCurves::from_log(&read_metrics(&metrics)?, meta.steps_per_epoch));
    }
    report.seed = Some(config.seed);
    report.config_digest = Some(config.digest());
    Ok(report)
}
