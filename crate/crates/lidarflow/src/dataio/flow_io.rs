//! Motion field containers.
//!
//! The native format is a little-endian binary container: magic `LFMF`,
//! `u32` version, `u32` width, `u32` height, then the `du`, `dv` and
//! `depth` planes as row-major f32 and the validity mask as one byte per
//! pixel. All planes round-trip bit-exactly.
//!
//! The interop format is the common optical-flow layout: the magic float
//! 202021.25 (bytes `PIEH`), `i32` width and height, then interleaved
//! `(u, v)` f32 pairs. It carries no depth or mask, so invalid pixels are
//! written as the 1e9 sentinel and anything at or above 1e8 reads back as
//! invalid.

use std::fs;
use std::path::Path;

use super::DataError;
use crate::motion::MotionField;

pub const LFMF_MAGIC: &[u8; 4] = b"LFMF";
pub const LFMF_VERSION: u32 = 1;

const FLO_MAGIC: &[u8; 4] = b"PIEH";
const FLO_SENTINEL: f32 = 1e9;
const FLO_INVALID_ABOVE: f32 = 1e8;

fn malformed(path: &Path, location: u64, message: impl Into<String>) -> DataError {
    DataError::MalformedRecord {
        path: path.to_path_buf(),
        unit: "byte",
        location,
        message: message.into(),
    }
}

/// Write the native container.
pub fn write_field(field: &MotionField, path: &Path) -> Result<(), DataError> {
    let n = field.width() as usize * field.height() as usize;
    let mut bytes = Vec::with_capacity(16 + n * 13);
    bytes.extend_from_slice(LFMF_MAGIC);
    bytes.extend_from_slice(&LFMF_VERSION.to_le_bytes());
    bytes.extend_from_slice(&field.width().to_le_bytes());
    bytes.extend_from_slice(&field.height().to_le_bytes());
    for plane in [field.du_plane(), field.dv_plane(), field.depth_plane()] {
        for v in plane {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes.extend(field.valid_mask().iter().map(|&b| b as u8));
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

/// Read the native container.
pub fn read_field(path: &Path) -> Result<MotionField, DataError> {
    let bytes = fs::read(path).map_err(|e| super::missing_or_io(path, e))?;
    if bytes.len() < 16 {
        return Err(malformed(path, 0, "shorter than the header"));
    }
    if &bytes[0..4] != LFMF_MAGIC {
        return Err(malformed(path, 0, "bad magic"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != LFMF_VERSION {
        return Err(malformed(path, 4, format!("unsupported version {version}")));
    }
    let width = word(8);
    let height = word(12);
    let n = width as usize * height as usize;
    let expect = 16 + n * 13;
    if bytes.len() != expect {
        return Err(malformed(
            path,
            bytes.len() as u64,
            format!("expected {expect} bytes for {width}x{height}"),
        ));
    }
    let plane = |index: usize| -> Vec<f32> {
        let at = 16 + index * n * 4;
        bytes[at..at + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let valid: Vec<bool> = bytes[16 + 12 * n..].iter().map(|&b| b != 0).collect();
    MotionField::from_planes(width, height, plane(0), plane(1), plane(2), valid)
        .ok_or_else(|| malformed(path, 16, "inconsistent plane sizes"))
}

/// Export as a standard flow file; depth and mask are not representable.
pub fn write_flo(field: &MotionField, path: &Path) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(12 + field.du_plane().len() * 8);
    bytes.extend_from_slice(FLO_MAGIC);
    bytes.extend_from_slice(&(field.width() as i32).to_le_bytes());
    bytes.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for (i, valid) in field.valid_mask().iter().enumerate() {
        let (du, dv) = if *valid {
            (field.du_plane()[i], field.dv_plane()[i])
        } else {
            (FLO_SENTINEL, FLO_SENTINEL)
        };
        bytes.extend_from_slice(&du.to_le_bytes());
        bytes.extend_from_slice(&dv.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

/// Read a standard flow file. Pixels at or above the unknown-value
/// threshold come back invalid; depth is not stored in this format and
/// reads back as 1 on valid pixels.
pub fn read_flo(path: &Path) -> Result<MotionField, DataError> {
    let bytes = fs::read(path).map_err(|e| super::missing_or_io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != FLO_MAGIC {
        return Err(malformed(path, 0, "bad magic"));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(malformed(path, 4, format!("implausible size {width}x{height}")));
    }
    let n = width as usize * height as usize;
    if bytes.len() != 12 + 8 * n {
        return Err(malformed(path, bytes.len() as u64, "truncated flow data"));
    }
    let mut du = vec![0.0f32; n];
    let mut dv = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let at = 12 + 8 * i;
        let u = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let v = f32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
        if u.is_finite() && v.is_finite() && u.abs() < FLO_INVALID_ABOVE && v.abs() < FLO_INVALID_ABOVE
        {
            du[i] = u;
            dv[i] = v;
            valid[i] = true;
        }
    }
    let depth = valid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    MotionField::from_planes(width as u32, height as u32, du, dv, depth, valid)
        .ok_or_else(|| malformed(path, 12, "inconsistent plane sizes"))
}
