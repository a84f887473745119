//! Registration of unordered, low-overlap LiDAR scans through planar
//! fiducial markers detected in their intensity images.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cloud_io;
pub mod fgo;
pub mod geometry;
pub mod initgraph;
pub mod metrics;
pub mod pipeline;
pub mod pose_svd;
pub mod projection;
pub mod synth;
pub mod tagdetect;
