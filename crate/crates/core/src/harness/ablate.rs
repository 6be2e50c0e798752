use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, Corpus, Split};
use crate::parser::DecodeOptions;

use super::eval::{evaluate_model, LossCurves, MetricsReport};
use super::train::train_on;
use super::{HarnessError, TrainConfig};

/// Which constraint(s) an ablation removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Drop {
    Du,
    Mu,
    Both,
}

impl FromStr for Drop {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "du" => Ok(Drop::Du),
            "mu" => Ok(Drop::Mu),
            "both" => Ok(Drop::Both),
            other => Err(format!("unknown ablation `{other}` (expected du, mu or both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub slug: &'static str,
    pub enable_du: bool,
    pub enable_mu: bool,
}

pub const FULL: Variant = Variant { name: "full", slug: "full", enable_du: true, enable_mu: true };
pub const NO_DU: Variant = Variant { name: "w/o DU", slug: "no_du", enable_du: false, enable_mu: true };
pub const NO_MU: Variant = Variant { name: "w/o MU", slug: "no_mu", enable_du: true, enable_mu: false };
pub const BASELINE: Variant = Variant { name: "w/o DU+MU", slug: "baseline", enable_du: false, enable_mu: false };

impl Drop {
    /// The full model first, then the ablated variants.
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Drop::Du => vec![FULL, NO_DU],
            Drop::Mu => vec![FULL, NO_MU],
            Drop::Both => vec![FULL, NO_DU, NO_MU, BASELINE],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: MetricsReport,
    /// The logged du term was exactly zero at every step.
    pub du_always_zero: bool,
    /// Some logged step had a nonzero mu term.
    pub mu_ever_nonzero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub enable_du: bool,
    pub enable_mu: bool,
    pub runs: Vec<SeedRun>,
    pub median_em: f64,
    pub median_ex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub drop: Drop,
    pub split: Split,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantResult>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.variant == name)
    }

    /// Side-by-side table: one column per variant, EM and EX rows overall
    /// and per difficulty, medians over seeds.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.variants.iter().map(|v| v.variant.as_str()).collect();
        let _ = writeln!(out, "| Metric ({:?}, median of {} seeds) | {} |", self.split, self.seeds.len(), names.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(names.len()));
        let row = |label: &str, f: &dyn Fn(&MetricsReport) -> f64| {
            let cells: Vec<String> = self
                .variants
                .iter()
                .map(|v| {
                    let xs: Vec<f64> = v.runs.iter().map(|r| f(&r.report)).collect();
                    format!("{:.1}", 100.0 * median(&xs))
                })
                .collect();
            format!("| {label} | {} |\n", cells.join(" | "))
        };
        out.push_str(&row("EM", &|r| r.em));
        out.push_str(&row("EX", &|r| r.ex));
        for d in crate::sqlkit::Difficulty::ALL {
            out.push_str(&row(&format!("EM {d}"), &|r| r.per_difficulty.get(&d).map_or(0.0, |b| b.em)));
        }
        out
    }
}

/// Trains every variant for `seeds` consecutive seeds starting at
/// `config.seed` and evaluates each on `split`. Variants share the corpus,
/// initialization and batch order of their seed.
pub fn ablate_on(
    config: &TrainConfig,
    corpus: &Corpus,
    drop: Drop,
    seeds: usize,
    split: Split,
) -> Result<AblationReport, HarnessError> {
    if seeds == 0 {
        return Err(HarnessError::Config("at least one seed is required".into()));
    }
    config.validate()?;
    let seed_list: Vec<u64> = (0..seeds as u64).map(|k| config.seed + k).collect();
    let mut variants = Vec::new();
    for v in drop.variants() {
        let mut runs = Vec::new();
        for &seed in &seed_list {
            let mut c = config.clone();
            c.seed = seed;
            c.enable_du = v.enable_du;
            c.enable_mu = v.enable_mu;
            c.out_dir = ablation_dir(config).join(v.slug).join(format!("seed{seed}"));
            let outcome = train_on(&c, corpus)?;
            let mut report = evaluate_model(&outcome.model, corpus, split, DecodeOptions::default())?;
            report.loss_curves = Some(LossCurves::from_log(&outcome.log, outcome.steps_per_epoch));
            report.seed = Some(seed);
            report.config_digest = Some(c.digest());
            runs.push(SeedRun {
                seed,
                report,
                du_always_zero: outcome.log.iter().all(|s| s.du == 0.0),
                mu_ever_nonzero: outcome.log.iter().any(|s| s.mu != 0.0),
            });
        }
        let em: Vec<f64> = runs.iter().map(|r| r.report.em).collect();
        let ex: Vec<f64> = runs.iter().map(|r| r.report.ex).collect();
        variants.push(VariantResult {
            variant: v.name.to_owned(),
            enable_du: v.enable_du,
            enable_mu: v.enable_mu,
            median_em: median(&em),
            median_ex: median(&ex),
            runs,
        });
    }
    let report = AblationReport { drop, split, seeds: seed_list, variants };
    let dir = ablation_dir(config);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(dir.join("ablation.md"), report.to_markdown())?;
    Ok(report)
}

pub fn ablation_dir(config: &TrainConfig) -> PathBuf {
    config.out_dir.join("ablate")
}

/// [`ablate_on`] over the config's corpus, evaluated on the dev split.
pub fn ablate(config: &TrainConfig, drop: Drop, seeds: usize) -> Result<AblationReport, HarnessError> {
    let corpus = load_corpus(&config.corpus)?;
    ablate_on(config, &corpus, drop, seeds, Split::Dev)
}
