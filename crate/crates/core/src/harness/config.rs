use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub d: usize,
    pub d_dec: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub betas: [f64; 2],
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeightConfig {
    pub du: f64,
    pub mu: f64,
}

/// Everything a training run depends on besides the corpus contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dims: Dims,
    pub dropout_rate: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub enable_du: bool,
    pub enable_mu: bool,
    #[serde(default = "default_weights")]
    pub loss_weights: LossWeightConfig,
    #[serde(default = "default_temperature")]
    pub mu_temperature: f64,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
}

fn default_weights() -> LossWeightConfig {
    LossWeightConfig { du: 1.0, mu: 1.0 }
}

fn default_temperature() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: Dims { d: 64, d_dec: 64, layers: 2, heads: 4 },
            dropout_rate: 0.2,
            optimizer: OptimizerConfig {
                learning_rate: 3e-4,
                weight_decay: 0.01,
                warmup_ratio: 0.1,
                betas: [0.9, 0.999],
                epsilon: 1e-8,
            },
            batch_size: 16,
            epochs: 60,
            seed: 0,
            enable_du: true,
            enable_mu: true,
            loss_weights: default_weights(),
            mu_temperature: default_temperature(),
            corpus: PathBuf::from("corpus.json"),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl TrainConfig {
    /// The latent head and gated fusion run iff either constraint is on.
    pub fn sun_enabled(&self) -> bool {
        self.enable_du || self.enable_mu
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let d = &self.dims;
        if d.d == 0 || d.d_dec == 0 || d.layers == 0 || d.heads == 0 || d.d % d.heads != 0 {
            return bad(format!("dims {d:?}: all positive and d divisible by heads"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", o.learning_rate));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", o.weight_decay));
        }
        if !(0.0..1.0).contains(&o.warmup_ratio) {
            return bad(format!("warmup_ratio {} not in [0, 1)", o.warmup_ratio));
        }
        if o.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return bad(format!("betas {:?} not in [0, 1)", o.betas));
        }
        if !(o.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", o.epsilon));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        let w = &self.loss_weights;
        if !(w.du >= 0.0 && w.mu >= 0.0 && w.du.is_finite() && w.mu.is_finite()) {
            return bad(format!("loss weights {w:?} must be finite and non-negative"));
        }
        if !(self.mu_temperature > 0.0 && self.mu_temperature.is_finite()) {
            return bad(format!("mu_temperature {} must be positive", self.mu_temperature));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let c: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_json(&text)?;
        // Relative paths resolve against the config file's directory.
        if let Some(dir) = path.parent() {
            if c.corpus.is_relative() {
                c.corpus = dir.join(&c.corpus);
            }
            if c.out_dir.is_relative() {
                c.out_dir = dir.join(&c.out_dir);
            }
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the config with paths removed, so moving a run does not
    /// change its identity.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.corpus = PathBuf::new();
        c.out_dir = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }
}
