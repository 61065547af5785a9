//! Biventricular segmentation and function quantification for short-axis
//! cine cardiac MR.
//!
//! The pipeline localizes the heart, crops a 90 mm × 90 mm region of
//! interest resampled to 128 × 128, segments RV cavity, LV myocardium and
//! LV cavity with a U-Net regularized by a variational-autoencoder shape
//! prior, and turns the masks into volumes, ejection fractions and LV mass.
//! Agreement with reference measurements is summarized with the usual
//! concordance statistics.

pub mod error;
pub mod par;
pub mod phantom;
pub mod quant;
pub mod roi;
pub mod segnet;
pub mod stats;
pub mod study_io;

pub use error::{Error, Result};
pub use par::Execution;
pub use quant::{ClinicalMetrics, Metric};
pub use roi::RoIBox;
pub use segnet::{NetworkParams, Tensor, TrainConfig};
pub use stats::{ConcordanceRow, PairedSeries};
pub use study_io::{CineStudy, LabelMap, VoxelSpacing};
