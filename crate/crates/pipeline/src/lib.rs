//! Two-stage coarse-to-fine organ segmentation pipeline: synthetic phantoms,
//! dataset conversion, fold planning, multiclass and organ-wise training,
//! ROI extraction, evaluation and reporting.

pub mod config;
pub mod data;
pub mod error;
pub mod fsutil;
pub mod manifest;
pub mod phantom;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use manifest::PipelineManifest;
pub use phantom::PhantomSpec;
pub use stages::Pipeline;
