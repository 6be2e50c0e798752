//! Configuration, training, evaluation, ablation and gradient checking.

mod ablate;
mod config;
mod eval;
mod gradcheck;
mod model;
mod train;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::error::ModelError;
use crate::numerics::NumericsError;
use crate::uncertainty::LossBreakdown;

pub use ablate::{ablate, ablate_on, ablation_dir, median, AblationReport, Drop, SeedRun, Variant, VariantResult, BASELINE, FULL, NO_DU, NO_MU};
pub use config::{Dims, LossWeightConfig, OptimizerConfig, TrainConfig};
pub use eval::{evaluate_checkpoint, evaluate_model, load_model, score_predictions, Bucket, LossCurves, MetricsReport};
pub use gradcheck::{gradcheck, gradcheck_with, micro_setup, GradcheckOptions, GradcheckOutcome, GRADCHECK_H, GRADCHECK_TOL, LOSS_NAMES};
pub use model::{ModelMeta, Prepared, SunModel};
pub use train::{learning_rate, read_metrics, train, train_on, AdamW, StepLog, TrainOutcome, CONFIG_FILE, FINAL_CHECKPOINT, META_FILE, METRICS_FILE};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("non-finite loss at step {step}: {breakdown:?}")]
    NonFinite { step: usize, breakdown: LossBreakdown },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) | HarnessError::Corpus(_) | HarnessError::Json(_) | HarnessError::Io(_) => 2,
            HarnessError::Model(ModelError::Data { .. } | ModelError::Sql(_)) => 2,
            HarnessError::Numerics(NumericsError::Checkpoint(_) | NumericsError::Io(_)) => 2,
            HarnessError::Model(_) | HarnessError::Numerics(_) | HarnessError::NonFinite { .. } => 3,
        }
    }
}
