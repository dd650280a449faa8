//! Sensor data ingestion and file formats.
//!
//! Reads KITTI raw sequences (rectified PNG frames, velodyne binary sweeps,
//! OXTS navigation records, plain-text calibration), generates synthetic
//! sequences with exact ground truth, and reads/writes the image and motion
//! field container formats.

mod flow_io;
mod image_io;
pub mod kitti;
pub mod synthetic;

use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

pub use flow_io::{read_field, read_flo, write_field, write_flo, LFMF_MAGIC};
pub use image_io::{read_image, write_image};
pub use synthetic::{SyntheticSceneSpec, SyntheticSequence};

use crate::egomotion::{ImuPayload, ImuRecord};
use crate::geometry::{CameraIntrinsics, PointCloud, RigidTransform};
use crate::warp::Image;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("malformed record in {path} at {unit} {location}: {message}")]
    MalformedRecord {
        path: PathBuf,
        /// "byte" or "line"
        unit: &'static str,
        location: u64,
        message: String,
    },
    #[error("calibration error in {path}: {message}")]
    CalibrationParseError { path: PathBuf, message: String },
    #[error("image decode error in {path}: {message}")]
    DecodeError { path: PathBuf, message: String },
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }
}

pub(crate) fn missing_or_io(path: &Path, e: std::io::Error) -> DataError {
    if e.kind() == std::io::ErrorKind::NotFound {
        DataError::MissingFile(path.to_path_buf())
    } else {
        DataError::io(path, e)
    }
}

/// Full calibration of a synchronized rig, everything expressed against the
/// rectified camera frame that `intrinsics` projects from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    /// LiDAR coordinates to rectified camera coordinates.
    pub lidar_to_cam: RigidTransform,
    /// IMU body coordinates to rectified camera coordinates.
    pub imu_to_cam: RigidTransform,
}

/// One frame of a loaded sequence.
#[derive(Debug, Clone)]
pub struct FrameEntry {
    pub index: usize,
    pub image_path: PathBuf,
    pub cloud_path: PathBuf,
    pub timestamp: f64,
    /// Index range of IMU records between this frame and the next.
    pub imu_span: (usize, usize),
}

/// A lazily loaded synchronized sequence: per-frame paths and timestamps,
/// the IMU record stream, and calibration. Frames are read on demand and
/// reads are independent, so concurrent access per frame is fine.
#[derive(Debug, Clone)]
pub struct SequenceManifest {
    pub frames: Vec<FrameEntry>,
    pub imu: Vec<ImuRecord>,
    pub calibration: Calibration,
}

impl SequenceManifest {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    pub fn load_image(&self, index: usize) -> Result<Image, DataError> {
        read_image(&self.frames[index].image_path)
    }

    pub fn load_cloud(&self, index: usize) -> Result<PointCloud, DataError> {
        let entry = &self.frames[index];
        kitti::read_velodyne(&entry.cloud_path, entry.timestamp)
    }

    /// JSON description of the manifest: frame table and calibration.
    /// Paths are written relative to `relative_to` when given, keeping the
    /// export independent of where the dataset happens to live.
    pub fn to_json(&self, relative_to: Option<&Path>) -> serde_json::Value {
        let matrix = |t: &RigidTransform| -> Vec<Vec<f64>> {
            (0..4)
                .map(|r| (0..4).map(|c| t.matrix()[(r, c)]).collect())
                .collect()
        };
        let rel = |p: &Path| -> String {
            match relative_to.and_then(|base| p.strip_prefix(base).ok()) {
                Some(stripped) => stripped.to_string_lossy().into_owned(),
                None => p.to_string_lossy().into_owned(),
            }
        };
        let k = &self.calibration.intrinsics;
        json!({
            "frames": self.frames.iter().map(|f| json!({
                "index": f.index,
                "image": rel(&f.image_path),
                "cloud": rel(&f.cloud_path),
                "timestamp": f.timestamp,
                "imu_span": [f.imu_span.0, f.imu_span.1],
            })).collect::<Vec<_>>(),
            "imu_records": self.imu.len(),
            "calibration": {
                "intrinsics": {
                    "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                    "width": k.width, "height": k.height,
                },
                "lidar_to_cam": matrix(&self.calibration.lidar_to_cam),
                "imu_to_cam": matrix(&self.calibration.imu_to_cam),
            },
        })
    }
}

/// Load a KITTI raw sequence directory.
///
/// Expected layout: `image_02/data/*.png`, `velodyne_points/data/*.bin`,
/// `oxts/data/*.txt`, and `calib_cam_to_cam.txt`, `calib_velo_to_cam.txt`,
/// `calib_imu_to_velo.txt` at the root. Per-frame `timestamps.txt` files
/// are used when present (rebased so the first frame is t = 0); otherwise
/// a uniform 10 Hz timeline is assumed with a warning. `payload` selects
/// whether OXTS velocities (`vf,vl,vu`) or compensated accelerations
/// (`af,al,au`) feed the IMU records.
pub fn load_kitti_sequence(root: &Path, payload: ImuPayload) -> Result<SequenceManifest, DataError> {
    kitti::load_sequence(root, payload)
}
