//! KITTI raw format: velodyne binary sweeps, OXTS navigation records,
//! plain-text calibration and timestamp files, plus a writer producing the
//! same layout.
//!
//! Velodyne files are little-endian f32 quadruples `(x, y, z, reflectance)`.
//! OXTS records are whitespace-separated columns; velocities live in
//! columns 8..11 (`vf, vl, vu`), compensated accelerations in 14..17
//! (`af, al, au`) and body angular rates in 20..23 (`wf, wl, wu`).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector3, SVD};

use super::{missing_or_io, Calibration, DataError, FrameEntry, SequenceManifest};
use crate::egomotion::{ImuPayload, ImuRecord};
use crate::geometry::{CameraIntrinsics, PointCloud, RigidTransform};

const VELODYNE_RECORD: usize = 16;

/// Parse a velodyne buffer into points and reflectances. Returns the
/// offending byte offset on framing or value errors.
#[allow(clippy::type_complexity)]
pub fn parse_velodyne(bytes: &[u8]) -> Result<(Vec<Point3<f64>>, Vec<f32>), (u64, String)> {
    if !bytes.len().is_multiple_of(VELODYNE_RECORD) {
        return Err((
            (bytes.len() - bytes.len() % VELODYNE_RECORD) as u64,
            format!(
                "length {} is not a multiple of {VELODYNE_RECORD}",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / VELODYNE_RECORD;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for i in 0..n {
        let at = i * VELODYNE_RECORD;
        let field = |j: usize| -> f32 {
            f32::from_le_bytes(bytes[at + 4 * j..at + 4 * j + 4].try_into().unwrap())
        };
        let (x, y, z, r) = (field(0), field(1), field(2), field(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && r.is_finite()) {
            return Err((at as u64, "non-finite sample".to_string()));
        }
        points.push(Point3::new(x as f64, y as f64, z as f64));
        intensity.push(r.clamp(0.0, 1.0));
    }
    Ok((points, intensity))
}

pub fn read_velodyne(path: &Path, timestamp: f64) -> Result<PointCloud, DataError> {
    let bytes = fs::read(path).map_err(|e| missing_or_io(path, e))?;
    let (points, intensity) =
        parse_velodyne(&bytes).map_err(|(location, message)| DataError::MalformedRecord {
            path: path.to_path_buf(),
            unit: "byte",
            location,
            message,
        })?;
    PointCloud::new(points, intensity, timestamp).map_err(|e| DataError::MalformedRecord {
        path: path.to_path_buf(),
        unit: "byte",
        location: 0,
        message: e.to_string(),
    })
}

/// Emit a cloud in velodyne binary framing. Coordinates narrower than f32
/// round to nearest; clouds read by [`read_velodyne`] re-emit bit-exactly.
pub fn write_velodyne(pc: &PointCloud, path: &Path) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(pc.len() * VELODYNE_RECORD);
    for (p, r) in pc.points.iter().zip(&pc.intensity) {
        for v in [p.x as f32, p.y as f32, p.z as f32, *r] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

/// One OXTS navigation record reduced to the channels the pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OxtsSample {
    pub linear: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// Parse one OXTS text line. `payload` picks velocities or accelerations
/// for the linear channel.
pub fn parse_oxts_line(line: &str, payload: ImuPayload) -> Result<OxtsSample, String> {
    let fields: Vec<f64> = line
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|e| format!("bad number {tok:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if fields.len() < 23 {
        return Err(format!("expected at least 23 columns, found {}", fields.len()));
    }
    let pick = |a: usize, b: usize, c: usize| Vector3::new(fields[a], fields[b], fields[c]);
    let linear = match payload {
        ImuPayload::Velocity => pick(8, 9, 10),
        ImuPayload::Acceleration => pick(14, 15, 16),
    };
    let gyro = pick(20, 21, 22);
    if !(linear.iter().all(|v| v.is_finite()) && gyro.iter().all(|v| v.is_finite())) {
        return Err("non-finite channel value".to_string());
    }
    Ok(OxtsSample { linear, gyro })
}

/// Days since 1970-01-01 for a civil date (proleptic Gregorian).
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

/// Parse a `YYYY-MM-DD HH:MM:SS.fffffffff` timestamp into nanoseconds
/// since the Unix epoch. Integer nanoseconds keep frame deltas exact;
/// converting absolute epoch values straight to f64 would quantize them at
/// a few hundred nanoseconds.
pub fn parse_timestamp_nanos(line: &str) -> Option<i128> {
    let (date, time) = line.trim().split_once(' ')?;
    let mut dp = date.split('-');
    let (y, m, d) = (
        dp.next()?.parse::<i64>().ok()?,
        dp.next()?.parse::<i64>().ok()?,
        dp.next()?.parse::<i64>().ok()?,
    );
    if dp.next().is_some() || !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return None;
    }
    let mut tp = time.split(':');
    let (hh, mm) = (tp.next()?.parse::<i64>().ok()?, tp.next()?.parse::<i64>().ok()?);
    let sec_field = tp.next()?;
    if tp.next().is_some() || !(0..24).contains(&hh) || !(0..60).contains(&mm) {
        return None;
    }
    let (whole, frac) = match sec_field.split_once('.') {
        Some((w, f)) => (w, f),
        None => (sec_field, ""),
    };
    let ss = whole.parse::<i64>().ok()?;
    if !(0..60).contains(&ss) || frac.len() > 9 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut nanos = 0i128;
    for (i, c) in frac.chars().enumerate() {
        nanos += (c as i128 - '0' as i128) * 10i128.pow(8 - i as u32);
    }
    let day_seconds = (hh * 3600 + mm * 60 + ss) as i128;
    Some((days_from_civil(y, m, d) as i128 * 86400 + day_seconds) * 1_000_000_000 + nanos)
}

fn read_timestamps(path: &Path) -> Result<Option<Vec<i128>>, DataError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(DataError::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t = parse_timestamp_nanos(line).ok_or_else(|| DataError::MalformedRecord {
            path: path.to_path_buf(),
            unit: "line",
            location: i as u64 + 1,
            message: format!("bad timestamp {line:?}"),
        })?;
        out.push(t);
    }
    Ok(Some(out))
}

/// Parse a `KEY: v1 v2 ...` calibration file into numeric rows. Rows whose
/// values are not all numeric (e.g. `calib_time`) are skipped.
fn read_kv_file(path: &Path) -> Result<HashMap<String, Vec<f64>>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| missing_or_io(path, e))?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else { continue };
        let values: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse::<f64>).collect();
        if let Ok(values) = values {
            if !values.is_empty() {
                map.insert(key.trim().to_string(), values);
            }
        }
    }
    Ok(map)
}

fn calib_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::CalibrationParseError {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Nearest rotation to a parsed 3x3 block; text calibration rarely carries
/// enough digits to be orthonormal to working precision.
fn orthonormalized(r: Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = SVD::new(r, true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Some(u * d * vt)
}

fn rigid_from_kv(
    map: &HashMap<String, Vec<f64>>,
    path: &Path,
) -> Result<RigidTransform, DataError> {
    let r = map
        .get("R")
        .filter(|v| v.len() == 9)
        .ok_or_else(|| calib_err(path, "missing or malformed R"))?;
    let t = map
        .get("T")
        .filter(|v| v.len() == 3)
        .ok_or_else(|| calib_err(path, "missing or malformed T"))?;
    let rot = orthonormalized(Matrix3::from_row_slice(r))
        .ok_or_else(|| calib_err(path, "rotation block is singular"))?;
    RigidTransform::from_parts(rot, Vector3::new(t[0], t[1], t[2]))
        .map_err(|e| calib_err(path, e.to_string()))
}

fn list_frames(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, DataError> {
    let entries = fs::read_dir(dir).map_err(|e| missing_or_io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|s| s.to_str()) == Some(ext))
        .collect();
    files.sort();
    Ok(files)
}

pub(super) fn load_sequence(root: &Path, payload: ImuPayload) -> Result<SequenceManifest, DataError> {
    load_sequence_camera(root, payload, 2)
}

/// Load a sequence using camera `cam` (2 or 3 in the usual layout).
pub fn load_sequence_camera(
    root: &Path,
    payload: ImuPayload,
    cam: u8,
) -> Result<SequenceManifest, DataError> {
    let cam_dir = root.join(format!("image_{cam:02}"));
    let image_files = list_frames(&cam_dir.join("data"), "png")?;
    let cloud_files = list_frames(&root.join("velodyne_points/data"), "bin")?;
    let oxts_files = list_frames(&root.join("oxts/data"), "txt")?;
    if image_files.is_empty() {
        return Err(DataError::MissingFile(cam_dir.join("data")));
    }
    let frames = image_files.len().min(cloud_files.len());
    if frames < image_files.len() || frames < cloud_files.len() {
        log::warn!(
            "frame count mismatch: {} images vs {} clouds; using {frames}",
            image_files.len(),
            cloud_files.len()
        );
    }

    let frame_times = match read_timestamps(&cam_dir.join("timestamps.txt"))? {
        Some(t) => t,
        None => {
            log::warn!("no camera timestamps in {}; assuming 10 Hz", cam_dir.display());
            (0..frames).map(|i| i as i128 * 100_000_000).collect()
        }
    };
    if frame_times.len() < frames {
        return Err(DataError::MalformedRecord {
            path: cam_dir.join("timestamps.txt"),
            unit: "line",
            location: frame_times.len() as u64,
            message: format!("{} timestamps for {frames} frames", frame_times.len()),
        });
    }
    for (i, pair) in frame_times[..frames].windows(2).enumerate() {
        if pair[1] <= pair[0] {
            return Err(DataError::MalformedRecord {
                path: cam_dir.join("timestamps.txt"),
                unit: "line",
                location: i as u64 + 2,
                message: "timestamps are not strictly increasing".to_string(),
            });
        }
    }

    // Rebase the timeline on the first frame before going to f64.
    let base = frame_times[0];
    let seconds = |n: i128| (n - base) as f64 * 1e-9;
    let frame_times: Vec<f64> = frame_times.iter().map(|&n| seconds(n)).collect();
    let oxts_times: Vec<f64> = match read_timestamps(&root.join("oxts/timestamps.txt"))? {
        Some(t) => t.iter().map(|&n| seconds(n)).collect(),
        None => {
            log::warn!("no oxts timestamps in {}; reusing frame times", root.display());
            frame_times.clone()
        }
    };
    let mut imu = Vec::with_capacity(oxts_files.len());
    for (i, path) in oxts_files.iter().enumerate() {
        let Some(&timestamp) = oxts_times.get(i) else {
            return Err(DataError::MalformedRecord {
                path: root.join("oxts/timestamps.txt"),
                unit: "line",
                location: i as u64 + 1,
                message: "fewer oxts timestamps than record files".to_string(),
            });
        };
        let text = fs::read_to_string(path).map_err(|e| missing_or_io(path, e))?;
        let line = text.lines().next().unwrap_or("");
        let sample = parse_oxts_line(line, payload).map_err(|message| DataError::MalformedRecord {
            path: path.clone(),
            unit: "line",
            location: 1,
            message,
        })?;
        imu.push(ImuRecord {
            timestamp,
            linear: sample.linear,
            gyro: sample.gyro,
            payload,
        });
    }

    let calibration = load_calibration(root, cam, &image_files[0])?;

    let mut entries = Vec::with_capacity(frames);
    for i in 0..frames {
        let t0 = frame_times[i];
        let t1 = frame_times.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let lo = imu.partition_point(|r| r.timestamp < t0);
        let hi = imu.partition_point(|r| r.timestamp <= t1);
        entries.push(FrameEntry {
            index: i,
            image_path: image_files[i].clone(),
            cloud_path: cloud_files[i].clone(),
            timestamp: t0,
            imu_span: (lo, hi),
        });
    }

    Ok(SequenceManifest { frames: entries, imu, calibration })
}

fn load_calibration(root: &Path, cam: u8, first_image: &Path) -> Result<Calibration, DataError> {
    let cam_path = root.join("calib_cam_to_cam.txt");
    let cam_map = read_kv_file(&cam_path)?;
    let p_key = format!("P_rect_{cam:02}");
    let p = cam_map
        .get(&p_key)
        .filter(|v| v.len() == 12)
        .ok_or_else(|| calib_err(&cam_path, format!("missing or malformed {p_key}")))?;
    let (fx, fy, cx, cy) = (p[0], p[5], p[2], p[6]);

    let (width, height) = match cam_map.get(&format!("S_rect_{cam:02}")) {
        Some(s) if s.len() == 2 && s[0] > 0.0 && s[1] > 0.0 => (s[0] as u32, s[1] as u32),
        _ => {
            let (w, h) = super::image_io::image_size(first_image)?;
            log::warn!("no S_rect_{cam:02}; using image size {w}x{h}");
            (w, h)
        }
    };
    let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy, width, height)
        .map_err(|e| calib_err(&cam_path, e.to_string()))?;

    // Rectifying rotation; identity when the file predates rectification.
    let rect = match cam_map.get("R_rect_00") {
        Some(r) if r.len() == 9 => {
            let rot = orthonormalized(Matrix3::from_row_slice(r))
                .ok_or_else(|| calib_err(&cam_path, "R_rect_00 is singular"))?;
            RigidTransform::from_parts(rot, Vector3::zeros())
                .map_err(|e| calib_err(&cam_path, e.to_string()))?
        }
        _ => RigidTransform::identity(),
    };
    // Fold the projection matrix's translation column into the extrinsics:
    // P_rect x = K (x + t) with t = (P03/fx, P13/fy, P23).
    let shift = RigidTransform::from_translation(Vector3::new(p[3] / fx, p[7] / fy, p[11]));

    let velo_path = root.join("calib_velo_to_cam.txt");
    let velo_to_cam = rigid_from_kv(&read_kv_file(&velo_path)?, &velo_path)?;
    let imu_path = root.join("calib_imu_to_velo.txt");
    let imu_to_velo = rigid_from_kv(&read_kv_file(&imu_path)?, &imu_path)?;

    let lidar_to_cam = shift.compose(&rect).compose(&velo_to_cam);
    let imu_to_cam = lidar_to_cam.compose(&imu_to_velo);
    Ok(Calibration { intrinsics, lidar_to_cam, imu_to_cam })
}

/// Format nanoseconds-since-epoch as a KITTI timestamp line.
fn format_timestamp_nanos(n: i128) -> String {
    let nanos = (n.rem_euclid(1_000_000_000)) as u64;
    let total_seconds = n.div_euclid(1_000_000_000);
    let days = total_seconds.div_euclid(86400);
    let day_seconds = total_seconds.rem_euclid(86400) as u64;
    let (y, m, d) = civil_from_days(days as i64);
    let (hh, mm, ss) = (day_seconds / 3600, day_seconds % 3600 / 60, day_seconds % 60);
    format!("{y:04}-{m:02}-{d:02} {hh:02}:{mm:02}:{ss:02}.{nanos:09}")
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    (if m <= 2 { y + 1 } else { y }, m, d)
}

/// Write a sequence to `root` in the KITTI raw layout so that
/// [`load_sequence`] can read it back: frames under `image_02/data`, clouds
/// under `velodyne_points/data`, one OXTS record per frame, timestamp files
/// and the three calibration files.
pub fn write_layout(
    root: &Path,
    frames: &[crate::warp::Image],
    clouds: &[PointCloud],
    imu: &[ImuRecord],
    timestamps: &[f64],
    calib: &Calibration,
) -> Result<(), DataError> {
    let image_dir = root.join("image_02/data");
    let velo_dir = root.join("velodyne_points/data");
    let oxts_dir = root.join("oxts/data");
    for dir in [&image_dir, &velo_dir, &oxts_dir] {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    }

    // Offset into a plausible civil datetime; only differences matter.
    let base = (days_from_civil(2011, 9, 26) as i128 * 86400 + 12 * 3600) * 1_000_000_000;
    let stamp_file = |dir: &Path| -> Result<(), DataError> {
        let path = dir.join("timestamps.txt");
        let mut text = String::new();
        for &t in timestamps {
            text.push_str(&format_timestamp_nanos(base + (t * 1e9).round() as i128));
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| DataError::io(&path, e))
    };
    stamp_file(&root.join("image_02"))?;
    stamp_file(&root.join("velodyne_points"))?;
    stamp_file(&root.join("oxts"))?;

    for (i, img) in frames.iter().enumerate() {
        super::image_io::write_image(img, &image_dir.join(format!("{i:010}.png")))?;
    }
    for (i, pc) in clouds.iter().enumerate() {
        write_velodyne(pc, &velo_dir.join(format!("{i:010}.bin")))?;
    }

    // One OXTS record per frame: the sample stream evaluated at the frame
    // timestamps (exact sample match expected from the generator).
    for (i, &t) in timestamps.iter().enumerate() {
        let rec = imu
            .iter()
            .min_by(|a, b| {
                (a.timestamp - t)
                    .abs()
                    .partial_cmp(&(b.timestamp - t).abs())
                    .unwrap()
            })
            .ok_or_else(|| DataError::InvalidSpec("no IMU records to write".to_string()))?;
        let mut cols = vec![0.0f64; 30];
        cols[8] = rec.linear.x;
        cols[9] = rec.linear.y;
        cols[10] = rec.linear.z;
        if rec.payload == ImuPayload::Acceleration {
            cols[8] = 0.0;
            cols[9] = 0.0;
            cols[10] = 0.0;
            cols[14] = rec.linear.x;
            cols[15] = rec.linear.y;
            cols[16] = rec.linear.z;
        }
        cols[20] = rec.gyro.x;
        cols[21] = rec.gyro.y;
        cols[22] = rec.gyro.z;
        let line: Vec<String> = cols.iter().map(|v| format!("{v}")).collect();
        let path = oxts_dir.join(format!("{i:010}.txt"));
        fs::write(&path, line.join(" ") + "\n").map_err(|e| DataError::io(&path, e))?;
    }

    let k = &calib.intrinsics;
    let cam_path = root.join("calib_cam_to_cam.txt");
    let cam_text = format!(
        "S_rect_02: {} {}\nR_rect_00: 1 0 0 0 1 0 0 0 1\nP_rect_02: {} 0 {} 0 0 {} {} 0 0 0 1 0\n",
        k.width, k.height, k.fx, k.cx, k.fy, k.cy
    );
    fs::write(&cam_path, cam_text).map_err(|e| DataError::io(&cam_path, e))?;

    let rt_text = |t: &RigidTransform| {
        let r = t.rotation();
        let tr = t.translation();
        format!(
            "R: {} {} {} {} {} {} {} {} {}\nT: {} {} {}\n",
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            tr[0], tr[1], tr[2]
        )
    };
    let velo_path = root.join("calib_velo_to_cam.txt");
    fs::write(&velo_path, rt_text(&calib.lidar_to_cam)).map_err(|e| DataError::io(&velo_path, e))?;
    let imu_to_velo = calib.lidar_to_cam.inverse().compose(&calib.imu_to_cam);
    let imu_path = root.join("calib_imu_to_velo.txt");
    fs::write(&imu_path, rt_text(&imu_to_velo)).map_err(|e| DataError::io(&imu_path, e))?;
    Ok(())
}
