//! Hybrid event/frame semantic segmentation with a spiking temporal encoder.
//!
//! The crate is organized around a small reverse-mode tensor engine
//! ([`autodiff`]) on top of which the network blocks are built:
//!
//! - [`evio`] — event-stream parsing, windowing, voxelization, and a
//!   synthetic moving-shapes scene generator for desk-scale experiments.
//! - [`lif`] — leaky-integrate-and-fire dynamics with learnable threshold
//!   and leak, soft reset, and an arctan surrogate gradient.
//! - [`model`] — the dual-encoder network: spiking temporal feature
//!   extractor, dense spatial feature extractor, multi-scale dilated mixer,
//!   and segmentation head, plus checkpoint serialization.
//! - [`trainer`] — ADAM optimization, learning-rate schedule, geometric
//!   augmentation, and segmentation metrics.
//! - [`energy`] — FLOPs counting and the 45nm MAC/AC inference-energy
//!   estimator.
//! - [`cli`] — the `halsie` command-line pipeline.
//!
//! See the guide under `book/` for worked examples; its code snippets are
//! compiled and run as doc-tests through the `guide` crate.

pub mod autodiff;
pub mod cli;
pub mod energy;
pub mod evio;
pub mod lif;
pub mod model;
pub mod pnm;
pub mod trainer;
