//! Medical image I/O, dataset preparation, ROI geometry and evaluation
//! metrics for two-stage abdominal segmentation.

pub mod augment;
pub mod error;
pub mod folds;
pub mod metrics;
pub mod nifti;
pub mod pngio;
pub mod resample;
pub mod roi;
pub mod volume;
pub mod weights;

pub use error::{Error, Result};
pub use nifti::{parse_nifti, write_nifti, Datatype, NiftiVolume};
pub use volume::{GrayscaleSlice, LabelMask, LabelVolume, Volume, CORONAL};
