//! Change detection for co-registered raster stacks via per-pixel
//! autoregressive forecasting.
//!
//! A stack of N aligned amplitude images is treated as one length-N time
//! series per pixel. Fitting an AR(p) model to every pixel and forecasting
//! one step ahead yields a reference image of the unchanged ground scene;
//! subtracting it from each stack layer exposes changes as statistical
//! outliers. The pipeline stages are:
//!
//! 1. **stack** – raster storage, manifest ingestion, per-pixel series
//!    extraction.
//! 2. **timeseries** – Yule-Walker AR estimation (Levinson-Durbin) and
//!    recursive forecasting for a single series.
//! 3. **estimate** – per-pixel application across the stack: the forecast
//!    raster and the coefficient-magnitude raster.
//! 4. **detect** – thresholding at `lambda = mu + C*sigma`, morphological
//!    opening, and connected-component clustering into detections.
//! 5. **metrics** – matching detections against ground truth, Pd/FAR
//!    scoring, and ROC sweeps over the detection constant.
//! 6. **synth** – seeded synthetic stack generation (AR(1) clutter plus
//!    injected targets) for desk-scale validation.
//!
//! The `cli` module wires the stages into the `arstack` binary; see the
//! crate examples for library usage of each stage.

pub mod cli;
pub mod detect;
pub mod error;
pub mod estimate;
pub mod metrics;
pub mod stack;
pub mod synth;
pub mod timeseries;

pub use detect::{BinaryMask, DetectParams, Detection, ThresholdSpec};
pub use error::{Error, Result};
pub use estimate::GroundEstimate;
pub use metrics::{GroundTruth, RocCurve, ScoreReport, ScoreRow};
pub use stack::{ImageStack, Raster};
pub use synth::SynthSpec;
pub use timeseries::{ArModel, Series};
