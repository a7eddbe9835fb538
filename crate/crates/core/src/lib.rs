//! Synthetic-gaze privacy audit toolkit.
//!
//! The crate covers the whole pipeline used to check whether subject-conditioned
//! synthetic eye movements still carry subjective-state information:
//!
//! * [`gaze`]: recordings, 5 s windows, position/velocity conversion and the
//!   identity-removed conditioning signal.
//! * [`diffusion`]: noise schedule, forward/reverse process, the reference
//!   temporal-convolution denoiser and its trainer.
//! * [`embedding`]: deterministic 128-d user embedding and cosine similarity.
//! * [`events`] and [`features`]: fixation/saccade segmentation and the
//!   58-entry feature catalog.
//! * [`metrics`]: spatial accuracy, RMS precision, embedding similarity.
//! * [`stats`]: Spearman analysis, correlation matrices and SVG heatmaps.
//! * [`sim`]: labelled oculomotor simulator used as a test oracle.
//! * [`pipeline`]: end-to-end orchestration shared by the CLI.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod events;
pub mod features;
pub mod gaze;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod sim;
pub mod stats;

mod util;

pub use error::{Error, Result};
