//! Attention-gated W-Net artery/vein segmentation of fundus images.
//!
//! The crate covers the whole pipeline: a small reverse-mode autodiff
//! engine ([`tensor`]), image preprocessing ([`preprocess`]), the
//! attention U-Net / W-Net model ([`model`]), focal loss ([`loss`]),
//! training ([`train`]), artery/vein fusion ([`fuse`]), tiered centerline
//! metrics ([`metrics`]) and dataset / checkpoint I/O ([`data_io`]).

pub mod data_io;
pub mod error;
pub mod fuse;
pub mod par;
pub mod pipeline;
pub mod label;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use label::{LabelMap, Mask, VesselClass, VesselKind};
