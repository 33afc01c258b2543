//! The hybrid segmentation network: dual encoders, temporal accumulator,
//! multi-scale mixer, semantic head, and checkpoint serialization.

mod checkpoint;
mod net;
mod params;
mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, save_raw_tensor};
pub use net::{ConvDesc, ForwardOut, HalsieModel, ModelInput, Setting};
pub use params::{Param, ParamId, ParamKind, ParamStore};
pub use spec::{MmixRates, NetworkSpec};

use crate::autodiff::AdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("invalid network description: {0}")]
    Spec(String),
    #[error("input mismatch: {0}")]
    Input(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
