use std::time::{Duration, Instant};

use crate::corpus::{generate_corpus, Batch, BatchItem, Corpus, Profile, Split};
use crate::encoder::Vocab;
use crate::numerics::{analytic_gradients_many, compare_many, derive_seed, GradCheckReport};

use super::model::{Prepared, SunModel};
use super::{Dims, HarnessError, TrainConfig};

/// Central-difference step and pass threshold of the gradient check.
pub const GRADCHECK_H: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const LOSS_NAMES: [&str; 4] = ["t2s", "du", "mu", "total"];

#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    /// One report per entry of [`LOSS_NAMES`].
    pub reports: Vec<(String, GradCheckReport)>,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl GradcheckOutcome {
    pub fn max_rel_error(&self) -> f64 {
        self.reports.iter().map(|(_, r)| r.max_rel_error()).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    /// `(loss, parameter, error)` of the worst entry.
    pub fn worst(&self) -> Option<(&str, &str, f64)> {
        self.reports
            .iter()
            .filter_map(|(l, r)| r.worst().map(|w| (l.as_str(), w.name.as_str(), w.max_rel_error)))
            .max_by(|a, b| a.2.total_cmp(&b.2))
    }

    pub fn summary(&self) -> String {
        let mut lines: Vec<String> = self
            .reports
            .iter()
            .map(|(l, r)| {
                let w = r.worst().map_or(String::new(), |w| format!(" (worst: {}[{}] analytic {:.6e} numeric {:.6e})", w.name, w.worst_index, w.analytic, w.numeric));
                format!("{l:>5}: loss {:.6} max rel error {:.3e} over {} entries{w}", r.loss, r.max_rel_error(), r.entries_checked())
            })
            .collect();
        lines.push(format!(
            "{} at tolerance {:.0e} in {:.1}s",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance,
            self.elapsed.as_secs_f64()
        ));
        lines.join("\n")
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckOptions {
    /// Scales the analytic gradient of this parameter before comparison, to
    /// show that a wrong gradient is caught and named.
    pub corrupt_param: Option<String>,
}

/// Small model, a generated micro-corpus and a batch of two paired and two
/// singleton items.
pub fn micro_setup(seed: u64) -> Result<(TrainConfig, Corpus, Batch), HarnessError> {
    let profile = Profile {
        num_schemas: 1,
        groups_per_schema: 6,
        paraphrases_min: 2,
        paraphrases_max: 2,
        singleton_fraction: 0.5,
        rows_per_table: 4,
        dev_fraction: 0.0,
        test_fraction: 0.0,
        paraphrase_heldout: false,
    };
    let corpus = generate_corpus(seed, &profile)?;
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut ids: Vec<&str> = Vec::new();
    for (i, e) in corpus.split(Split::Train) {
        match ids.iter().position(|g| *g == e.group_id) {
            Some(k) => groups[k].push(i),
            None => {
                ids.push(&e.group_id);
                groups.push(vec![i]);
            }
        }
    }
    let pairs = groups.iter().filter(|g| g.len() >= 2).take(2).map(|g| BatchItem::Paired { record: g[0], partner: g[1] });
    let singles = groups.iter().filter(|g| g.len() == 1).take(2).map(|g| BatchItem::Singleton { record: g[0] });
    let items: Vec<BatchItem> = pairs.chain(singles).collect();
    if items.len() != 4 {
        return Err(HarnessError::Data("micro-corpus lacks two pairs and two singletons".into()));
    }
    let config = TrainConfig {
        dims: Dims { d: 8, d_dec: 8, layers: 1, heads: 2 },
        seed,
        ..TrainConfig::default()
    };
    Ok((config, corpus, Batch { items }))
}

/// Finite-difference check of the four loss terms over every parameter,
/// with dropout masks and noise frozen by a fixed seed.
pub fn gradcheck_with(seed: u64, opts: &GradcheckOptions) -> Result<GradcheckOutcome, HarnessError> {
    let start = Instant::now();
    let (config, corpus, batch) = micro_setup(seed)?;
    let vocab = Vocab::build(&corpus);
    let max_len = Prepared::max_len_for(&corpus, &vocab)?;
    let model = SunModel::new(&config, vocab, max_len)?;
    let prep = model.prepare(&corpus)?;
    let frozen = derive_seed(seed, &[0x9c]);
    let build = |g: &mut crate::numerics::Graph<'_>| -> Result<Vec<crate::numerics::Var>, HarnessError> {
        let j = model.batch_loss(g, &prep, &batch, frozen, true)?;
        Ok(vec![j.t2s, j.du, j.mu, j.total])
    };
    let (_, mut analytic) = analytic_gradients_many(&model.store, build)?;
    if let Some(name) = &opts.corrupt_param {
        let id = model
            .store
            .id(name)
            .ok_or_else(|| HarnessError::Config(format!("no parameter named `{name}`")))?;
        for per_loss in &mut analytic {
            for g in &mut per_loss[id.index()] {
                *g = *g * 1.5 + 1e-3;
            }
        }
    }
    let reports = compare_many(&model.store, &analytic, GRADCHECK_H, build)?;
    Ok(GradcheckOutcome {
        reports: LOSS_NAMES.iter().map(|s| s.to_string()).zip(reports).collect(),
        tolerance: GRADCHECK_TOL,
        elapsed: start.elapsed(),
    })
}

pub fn gradcheck(seed: u64) -> Result<GradcheckOutcome, HarnessError> {
    gradcheck_with(seed, &GradcheckOptions::default())
}
