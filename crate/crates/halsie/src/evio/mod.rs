//! Event-stream input: parsing, windowing, voxelization, and a synthetic
//! scene generator for desk-scale experiments.

mod binning;
mod event;
mod synth;
mod volume_io;
mod voxel;

pub use binning::{slice_windows, BinningPolicy};
pub use event::{parse_events, write_events_csv, Event, EventWindow, Polarity};
pub use synth::{synth_scene, SceneConfig, SynthSample};
pub use volume_io::{read_volume, write_volume};
pub use voxel::{bilinear_kernel, normalize_timestamps, voxelize, EventVolume};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvioError {
    #[error("parse error: {msg} at line {line}")]
    Parse { line: usize, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
