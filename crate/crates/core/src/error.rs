use thiserror::Error;

use crate::numerics::NumericsError;
use crate::sqlkit::SqlError;

/// Failures of the encoder, latent and decoder layers.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("contract violation: {0}")]
    Contract(String),
    /// The gold sequence left the grammar at `step`.
    #[error("gold action {step} is inadmissible: {msg}")]
    Data { step: usize, msg: String },
    #[error(transparent)]
    Sql(#[from] SqlError),
}
