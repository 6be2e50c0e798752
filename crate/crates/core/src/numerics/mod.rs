//! Dense `f64` tensors, a reverse-mode tape, named parameter storage with a
//! binary checkpoint format, and a finite-difference gradient oracle.

mod graph;
mod gradcheck;
pub mod kernels;
pub mod ops;
mod params;
mod tensor;

use thiserror::Error;

pub use graph::{dropout_mask, Gradients, Graph, Var};
pub use gradcheck::{
    analytic_gradients, analytic_gradients_many, compare_many, compare_with_numeric, finite_diff_check, relative_error, GradCheckReport,
    ParamCheck,
};
pub use params::{ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("bad shape in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Derives an independent stream seed from a base seed and a path of
/// indices (step, item, role, ...). SplitMix64 finalizer per component.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
