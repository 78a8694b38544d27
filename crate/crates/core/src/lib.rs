//! Non-neural tooling for cardiac cine-MR segmentation and disease diagnosis.
//!
//! The crate covers the pipeline around a segmentation network: locating the
//! left-ventricle region of interest, reference loss kernels with analytic
//! gradients, label post-processing, evaluation metrics, cardiac feature
//! extraction and a two-stage ensemble classifier. [`netgraph`] is a symbolic
//! calculator for the densely connected FCN variants used as the segmenter.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augment;
pub mod config;
pub mod diagnosis;
pub mod error;
pub mod features;
pub mod imgproc;
pub mod loss;
pub mod metrics;
pub mod netgraph;
pub mod phantom;
pub mod pipeline;
pub mod postprocess;
pub mod roi;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
