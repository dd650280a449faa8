//! LiDAR-guided pixel motion estimation and motion-compensated video
//! enhancement.
//!
//! The core idea: a point cloud plus the camera egomotion between two
//! frames determines, by pure geometry, where every projected LiDAR point
//! moves in the image. Projecting each point through the calibration chain
//! at time `t` and again after applying the egomotion yields a per-pixel
//! motion vector with no image content involved. The initially sparse field
//! is densified by merging neighboring clouds (transformed through chained
//! egomotion) and by duplicating each pixel's motion into a small patch,
//! then consumed by forward warping and classical multi-frame fusion.
//!
//! Modules follow the pipeline order:
//!
//! - [`geometry`]: rigid transforms, intrinsics, clouds, pinhole projection
//! - [`egomotion`]: IMU rate integration and point-to-point ICP
//! - [`motion`]: sparse motion fields, cloud merging, patch densification
//! - [`warp`]: forward (splat) warping and motion compensation
//! - [`enhance`]: temporal denoise, shift-and-add super-resolution, deblur
//! - [`metrics`]: PSNR, SSIM, motion endpoint error
//! - [`dataio`]: KITTI raw ingestion, synthetic scenes, file formats
//!
//! With the default `parallel` feature the hot loops run on rayon with a
//! deterministic merge order; disabling the feature falls back to
//! equivalent sequential code producing identical results.

pub mod dataio;
pub mod egomotion;
pub mod enhance;
mod exec;
pub mod geometry;
pub mod imgproc;
pub mod metrics;
pub mod motion;
pub mod warp;

pub use egomotion::{EgomotionEstimate, EgomotionSource, ImuPayload, ImuRecord};
pub use geometry::{CameraIntrinsics, PixelPoint, PointCloud, RigidTransform};
pub use metrics::QualityReport;
pub use motion::{FrameWindow, MergeSpec, MotionField, PatchSpec, Variant};
pub use warp::{Image, WarpedImage};
