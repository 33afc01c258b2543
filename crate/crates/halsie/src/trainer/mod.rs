//! Optimization loop, learning-rate schedule, augmentation, and metrics.

mod adam;
mod augment;
mod dataset;
mod metrics;
mod run;

pub use adam::{adam_step, AdamState};
pub use augment::{augment, sample_transform, GeomTransform};
pub use dataset::{Dataset, RawSample};
pub use metrics::{argmax_classes, write_metrics_csv, ConfusionAccum, MetricsReport};
pub use run::{
    evaluate, inverse_frequency_weights, lr_at, prepare, train, write_train_log, EpochLog,
    PreparedDataset, PreparedSample, TrainConfig,
};

use crate::autodiff::AdError;
use crate::evio::EvioError;
use crate::model::ModelError;
use crate::pnm::PnmError;
use thiserror::Error;

/// Class id that marks unlabeled pixels.
pub const IGNORE_ID: u32 = 255;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Evio(#[from] EvioError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
