//! Camera egomotion between consecutive frames.
//!
//! Two independent sources: dead-reckoning integration of IMU rate
//! measurements, and point-to-point ICP registration of consecutive LiDAR
//! sweeps. Both yield the same object: the rigid map taking a static
//! point's camera coordinates at frame `t` to its camera coordinates at
//! frame `t+1` (the inverse of the sensor's own motion increment).

use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, Vector3, SVD};
use thiserror::Error;

use crate::exec;
use crate::geometry::{transform_cloud, PointCloud, RigidTransform};

#[derive(Debug, Error)]
pub enum EgomotionError {
    #[error("no IMU record overlaps the integration window")]
    EmptyWindow,
    #[error("IMU timestamps are not strictly increasing at index {0}")]
    NonMonotonicTimestamps(usize),
    #[error("IMU records mix velocity and acceleration payloads in one window")]
    MixedPayload,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("correspondence geometry is degenerate (rank < 3)")]
    DegenerateGeometry,
    #[error("no egomotion step available for frame {0}")]
    MissingStep(usize),
}

/// Whether the linear channel of an IMU record carries velocity or
/// acceleration. Acceleration payloads are assumed gravity-compensated;
/// integration then starts from zero velocity at the window start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImuPayload {
    Velocity,
    Acceleration,
}

/// One IMU sample: body-frame linear rate and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuRecord {
    /// Sample time in seconds.
    pub timestamp: f64,
    /// Body-frame velocity (m/s) or acceleration (m/s^2), see `payload`.
    pub linear: Vector3<f64>,
    /// Body-frame angular velocity in rad/s, axes (x, y, z).
    pub gyro: Vector3<f64>,
    pub payload: ImuPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgomotionSource {
    Imu,
    Registration,
}

/// Egomotion between two frames with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgomotionEstimate {
    /// Maps camera coordinates at frame `t` to camera coordinates at
    /// frame `t+1` for static scene points.
    pub transform: RigidTransform,
    pub source: EgomotionSource,
    /// Root-mean-square correspondence distance in meters; 0 for IMU
    /// estimates. The squared-mean form is the quantity the alignment step
    /// provably never increases.
    pub residual: f64,
}

/// Rotation built from integrated angular displacements about the body
/// z (yaw), y (pitch) and x (roll) axes, composed Z * Y * X in the passive
/// convention: it transforms coordinates from the pre-rotation frame into
/// the post-rotation frame. Each factor is the transpose of the
/// corresponding active rotation.
pub fn yaw_pitch_roll_rotation(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sa, ca) = yaw.sin_cos();
    let (sb, cb) = pitch.sin_cos();
    let (sg, cg) = roll.sin_cos();
    #[rustfmt::skip]
    let rz = Matrix3::new(
        ca,  sa, 0.0,
        -sa, ca, 0.0,
        0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let ry = Matrix3::new(
        cb, 0.0, -sb,
        0.0, 1.0, 0.0,
        sb, 0.0,  cb,
    );
    #[rustfmt::skip]
    let rx = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, cg,  sg,
        0.0, -sg, cg,
    );
    rz * ry * rx
}

/// Inverse of [`yaw_pitch_roll_rotation`]: recover `(yaw, pitch, roll)`
/// from a passive Z*Y*X rotation. Valid away from the |pitch| = pi/2
/// singularity.
pub fn yaw_pitch_roll_angles(r: &Matrix3<f64>) -> (f64, f64, f64) {
    // Expanded product:
    //   r[2][0] = sin(pitch)
    //   r[0][0] = cos(yaw) cos(pitch),  r[1][0] = -sin(yaw) cos(pitch)
    //   r[2][1] = -cos(pitch) sin(roll), r[2][2] = cos(pitch) cos(roll)
    let pitch = r[(2, 0)].clamp(-1.0, 1.0).asin();
    let yaw = f64::atan2(-r[(1, 0)], r[(0, 0)]);
    let roll = f64::atan2(-r[(2, 1)], r[(2, 2)]);
    (yaw, pitch, roll)
}

/// Linear interpolation of the piecewise-linear rate signal at time `t`,
/// held constant beyond the record span.
fn sample_rates(records: &[ImuRecord], t: f64) -> (Vector3<f64>, Vector3<f64>) {
    let first = &records[0];
    let last = &records[records.len() - 1];
    if t <= first.timestamp {
        return (first.linear, first.gyro);
    }
    if t >= last.timestamp {
        return (last.linear, last.gyro);
    }
    let idx = records.partition_point(|r| r.timestamp <= t);
    let a = &records[idx - 1];
    let b = &records[idx];
    let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
    (
        a.linear.lerp(&b.linear, w),
        a.gyro.lerp(&b.gyro, w),
    )
}

/// Dead-reckon the egomotion over `[t_start, t_end]` from IMU rates.
///
/// Angular displacements and the linear displacement are trapezoidal
/// integrals of the piecewise-linear rate signals (double integration from
/// zero initial velocity for acceleration payloads). The integrated sensor
/// motion `[R_active | p]` is inverted into the static-point map
/// `[R | -R p]`, where `R` is the passive yaw/pitch/roll triple product,
/// then conjugated by `imu_to_cam` into the camera frame. Passing `None`
/// for the mounting transform assumes the IMU and camera frames coincide.
pub fn integrate_imu(
    records: &[ImuRecord],
    t_start: f64,
    t_end: f64,
    imu_to_cam: Option<&RigidTransform>,
) -> Result<EgomotionEstimate, EgomotionError> {
    if t_end <= t_start {
        return Err(EgomotionError::EmptyWindow);
    }
    for (i, pair) in records.windows(2).enumerate() {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(EgomotionError::NonMonotonicTimestamps(i + 1));
        }
    }
    let Some((first, last)) = records.first().zip(records.last()) else {
        return Err(EgomotionError::EmptyWindow);
    };
    if t_end < first.timestamp || t_start > last.timestamp {
        return Err(EgomotionError::EmptyWindow);
    }
    let payload = first.payload;
    if records.iter().any(|r| r.payload != payload) {
        return Err(EgomotionError::MixedPayload);
    }

    // Integration grid: window endpoints plus every interior sample time.
    let mut times = vec![t_start];
    times.extend(
        records
            .iter()
            .map(|r| r.timestamp)
            .filter(|&t| t > t_start && t < t_end),
    );
    times.push(t_end);

    let mut angles = Vector3::zeros();
    let mut displacement = Vector3::zeros();
    let mut velocity = Vector3::zeros();
    let (mut prev_lin, mut prev_gyro) = sample_rates(records, times[0]);
    for pair in times.windows(2) {
        let dt = pair[1] - pair[0];
        let (lin, gyro) = sample_rates(records, pair[1]);
        angles += (prev_gyro + gyro) * (0.5 * dt);
        match payload {
            ImuPayload::Velocity => {
                displacement += (prev_lin + lin) * (0.5 * dt);
            }
            ImuPayload::Acceleration => {
                let next_velocity = velocity + (prev_lin + lin) * (0.5 * dt);
                displacement += (velocity + next_velocity) * (0.5 * dt);
                velocity = next_velocity;
            }
        }
        prev_lin = lin;
        prev_gyro = gyro;
    }

    let rotation = yaw_pitch_roll_rotation(angles.z, angles.y, angles.x);
    let translation = -(rotation * displacement);
    let in_imu = RigidTransform::from_parts(rotation, translation)
        .expect("trigonometric rotation is orthonormal");
    let transform = match imu_to_cam {
        Some(mount) => in_imu.conjugated(mount),
        None => {
            log::warn!("no IMU-to-camera mounting transform supplied; assuming identity");
            in_imu
        }
    };
    Ok(EgomotionEstimate {
        transform,
        source: EgomotionSource::Imu,
        residual: 0.0,
    })
}

/// Uniform voxel grid over a point set for nearest-neighbor queries.
struct VoxelIndex {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    points: Vec<Point3<f64>>,
}

impl VoxelIndex {
    fn build(points: &[Point3<f64>]) -> Self {
        let cell = (2.0 * median_spacing(points)).max(1e-6);
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self {
            cell,
            cells,
            points: points.to_vec(),
        }
    }

    #[inline]
    fn key(p: &Point3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Exact nearest neighbor, returning `(index, squared distance)`:
    /// expand cube rings until a candidate is found, then keep expanding
    /// while a closer point could still hide in an unvisited ring.
    fn nearest(&self, q: &Point3<f64>) -> (u32, f64) {
        let (cx, cy, cz) = Self::key(q, self.cell);
        let mut best = (u32::MAX, f64::INFINITY);
        let mut ring = 0i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &id in ids {
                                let d = (self.points[id as usize] - q).norm_squared();
                                if d < best.1 || (d == best.1 && id < best.0) {
                                    best = (id, d);
                                }
                            }
                        }
                    }
                }
            }
            // Any point in ring r+1 is at least r*cell away from the query.
            let ring_floor = ring as f64 * self.cell;
            if best.0 != u32::MAX && ring_floor * ring_floor >= best.1 {
                return best;
            }
            ring += 1;
        }
    }
}

/// Median nearest-neighbor distance over a deterministic subsample.
fn median_spacing(points: &[Point3<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let stride = (n / 256).max(1);
    let mut dists: Vec<f64> = (0..n)
        .step_by(stride)
        .map(|i| {
            let p = &points[i];
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    if median > 0.0 {
        median
    } else {
        // Duplicate-heavy cloud: fall back to the largest observed spacing.
        dists.last().copied().filter(|d| *d > 0.0).unwrap_or(1.0)
    }
}

/// Closed-form rigid alignment of paired points (Kabsch / Umeyama without
/// scale). Errors when the paired geometry does not constrain all six
/// degrees of freedom.
fn kabsch(pairs: &[(Point3<f64>, Point3<f64>)]) -> Result<RigidTransform, EgomotionError> {
    let n = pairs.len() as f64;
    let mut c_src = Vector3::zeros();
    let mut c_dst = Vector3::zeros();
    for (s, d) in pairs {
        c_src += s.coords;
        c_dst += d.coords;
    }
    c_src /= n;
    c_dst /= n;
    let mut h = Matrix3::zeros();
    for (s, d) in pairs {
        h += (d.coords - c_dst) * (s.coords - c_src).transpose();
    }
    let svd = SVD::new(h, true, true);
    let sv = svd.singular_values;
    if sv[2] <= 1e-9 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(EgomotionError::DegenerateGeometry);
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut flip = Matrix3::identity();
        flip[(2, 2)] = -1.0;
        r = u * flip * vt;
    }
    let t = c_dst - r * c_src;
    RigidTransform::from_parts(r, t).map_err(|_| EgomotionError::DegenerateGeometry)
}

/// Point-to-point ICP. Returns the estimate and the RMS correspondence
/// residual per iteration (non-increasing: the closed-form step minimizes
/// the squared sum for fixed pairs, and exact re-matching only shrinks it).
pub fn register_icp_trace(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    max_iters: usize,
    tol: f64,
) -> Result<(EgomotionEstimate, Vec<f64>), EgomotionError> {
    if source.is_empty() || target.is_empty() {
        return Err(EgomotionError::EmptyCloud);
    }
    let index = VoxelIndex::build(&target.points);
    let mut current = *init;
    let mut residuals = Vec::new();
    for _ in 0..max_iters.max(1) {
        let moved = transform_cloud(&current, source);
        // Ordered correspondence list keeps the reduction deterministic
        // under any thread count.
        let matches = exec::map_indexed(&moved.points, |_, p| index.nearest(p));
        let mean =
            (matches.iter().map(|(_, d2)| d2).sum::<f64>() / matches.len() as f64).sqrt();
        let converged = residuals
            .last()
            .is_some_and(|prev: &f64| (prev - mean).abs() < tol);
        residuals.push(mean);
        if converged {
            break;
        }
        let pairs: Vec<(Point3<f64>, Point3<f64>)> = moved
            .points
            .iter()
            .zip(matches.iter())
            .map(|(p, (id, _))| (*p, target.points[*id as usize]))
            .collect();
        let delta = kabsch(&pairs)?;
        current = delta.compose(&current);
    }
    let residual = *residuals.last().unwrap();
    Ok((
        EgomotionEstimate {
            transform: current,
            source: EgomotionSource::Registration,
            residual,
        },
        residuals,
    ))
}

/// Point-to-point ICP registration of `source` onto `target` in their
/// common sensor frame.
pub fn register_icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    max_iters: usize,
    tol: f64,
) -> Result<EgomotionEstimate, EgomotionError> {
    register_icp_trace(source, target, init, max_iters, tol).map(|(e, _)| e)
}

/// Compose per-frame egomotion steps into the transform from frame `from`
/// to frame `to`. `steps[i]` maps frame `i` to frame `i+1`; reversed
/// intervals yield the inverse of the forward chain.
pub fn chain_egomotion(
    steps: &[EgomotionEstimate],
    from: usize,
    to: usize,
) -> Result<RigidTransform, EgomotionError> {
    if from == to {
        return Ok(RigidTransform::identity());
    }
    let (lo, hi) = (from.min(to), from.max(to));
    if hi > steps.len() {
        return Err(EgomotionError::MissingStep(hi - 1));
    }
    let mut chain = RigidTransform::identity();
    for step in &steps[lo..hi] {
        chain = step.transform.compose(&chain);
    }
    if from < to {
        Ok(chain)
    } else {
        Ok(chain.inverse())
    }
}
