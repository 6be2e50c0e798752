use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, make_batches, Corpus};
use crate::encoder::Vocab;
use crate::numerics::{derive_seed, Graph, ParamStore};
use crate::uncertainty::LossBreakdown;

use super::model::{ModelMeta, Prepared, SunModel};
use super::{HarnessError, OptimizerConfig, TrainConfig};

pub const CONFIG_FILE: &str = "config.json";
pub const META_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "model.bin";

/// One line of the metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub t2s: f64,
    pub du: f64,
    pub mu: f64,
    pub total: f64,
}

impl StepLog {
    fn new(step: usize, b: LossBreakdown) -> Self {
        Self { step, t2s: b.t2s, du: b.du, mu: b.mu_loss, total: b.total }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self { cfg, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One update at learning rate `lr`. Missing gradients count as zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>], lr: f64) {
        self.t += 1;
        let [b1, b2] = self.cfg.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads[i].as_deref();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = store.get_mut(id).data_mut();
            for k in 0..w.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + self.cfg.epsilon);
                w[k] -= lr * (update + self.cfg.weight_decay * w[k]);
            }
        }
    }
}

/// Linear warmup over the first `warmup` steps, then linear decay to zero.
pub fn learning_rate(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base * (total - step) as f64 / (total - warmup) as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SunModel,
    pub log: Vec<StepLog>,
    pub checkpoint: PathBuf,
    pub steps_per_epoch: usize,
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome, HarnessError> {
    let corpus = load_corpus(&config.corpus)?;
    train_on(config, &corpus)
}

fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("ckpt-epoch{epoch:03}.bin"))
}

/// Trains on an already loaded corpus, writing the config, model sidecar,
/// metric log and per-epoch checkpoints under `config.out_dir`.
pub fn train_on(config: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let vocab = Vocab::build(corpus);
    let max_len = Prepared::max_len_for(corpus, &vocab)?;
    let mut model = SunModel::new(config, vocab, max_len)?;
    let prep = model.prepare(corpus)?;

    let steps_per_epoch = make_batches(corpus, config.batch_size, derive_seed(config.seed, &[0]))?.len();
    let total = steps_per_epoch * config.epochs;
    let warmup = (config.optimizer.warmup_ratio * total as f64).ceil() as usize;

    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_json())?;
    let meta = ModelMeta { vocab: model.vocab.tokens().to_vec(), max_len, steps_per_epoch };
    std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    let mut metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);

    let mut opt = AdamW::new(config.optimizer, &model.store);
    let mut log = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let batches = make_batches(corpus, config.batch_size, derive_seed(config.seed, &[epoch as u64]))?;
        for batch in &batches {
            let (breakdown, grads) = {
                let mut g = Graph::with_params(&model.store);
                let seed = derive_seed(config.seed, &[1 << 32, step as u64]);
                let joint = model.batch_loss(&mut g, &prep, batch, seed, true)?;
                let b = joint.breakdown;
                if ![b.t2s, b.du, b.mu_loss, b.total].iter().all(|v| v.is_finite()) {
                    return Err(HarnessError::NonFinite { step, breakdown: b });
                }
                let grads = g.backward(joint.total)?;
                let per_param: Vec<Option<Vec<f64>>> =
                    model.store.ids().map(|id| grads.param(id).map(<[f64]>::to_vec)).collect();
                (b, per_param)
            };
            let lr = learning_rate(config.optimizer.learning_rate, step, total, warmup);
            opt.step(&mut model.store, &grads, lr);
            let entry = StepLog::new(step, breakdown);
            writeln!(metrics, "{}", serde_json::to_string(&entry)?)?;
            log.push(entry);
            step += 1;
        }
        model.store.save(&epoch_checkpoint(dir, epoch))?;
    }
    metrics.flush()?;
    let checkpoint = dir.join(FINAL_CHECKPOINT);
    model.store.save(&checkpoint)?;
    Ok(TrainOutcome { model, log, checkpoint, steps_per_epoch })
}

/// Reads the metric log written by [`train_on`].
pub fn read_metrics(path: &Path) -> Result<Vec<StepLog>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
