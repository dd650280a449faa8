//! Per-pixel motion fields from projected point clouds.
//!
//! A cloud point is projected into the image at frame `t`, then again after
//! applying the camera egomotion; the difference of the two pixel positions
//! is that pixel's motion. The resulting field is sparse (LiDAR resolution
//! is far below image resolution) and two densification passes follow:
//! merging neighboring clouds into the current frame through chained
//! egomotion, and duplicating each pixel's motion into its k x k
//! neighborhood.
//!
//! All conflict resolution is a total order on `(source depth, source
//! index)`, so fields are independent of point order and thread schedule.

use thiserror::Error;

use crate::egomotion::{
    chain_egomotion, integrate_imu, register_icp, EgomotionError, EgomotionEstimate, ImuRecord,
};
use crate::exec;
use crate::geometry::{transform_cloud, CameraIntrinsics, PointCloud, RigidTransform};

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("merge window has no valid center frame (center {center}, {frames} frames)")]
    MissingNeighbor { center: usize, frames: usize },
    #[error("frame window needs a successor frame at index {0}")]
    MissingSuccessor(usize),
    #[error(transparent)]
    Egomotion(#[from] EgomotionError),
}

/// Dense per-pixel displacement from frame `t` to `t+1` with a validity
/// mask and the camera depth of each pixel's source point.
///
/// Invalid pixels hold the sentinel triple `(0, 0, 0)`; a zero depth never
/// occurs on valid pixels (the projection near plane is positive).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    width: u32,
    height: u32,
    du: Vec<f32>,
    dv: Vec<f32>,
    depth: Vec<f32>,
    valid: Vec<bool>,
    valid_count: usize,
}

impl MotionField {
    /// An all-invalid field.
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            du: vec![0.0; n],
            dv: vec![0.0; n],
            depth: vec![0.0; n],
            valid: vec![false; n],
            valid_count: 0,
        }
    }

    /// Rebuild a field from raw planes, restoring the sentinel invariant on
    /// invalid pixels. `None` when the plane lengths disagree.
    pub fn from_planes(
        width: u32,
        height: u32,
        mut du: Vec<f32>,
        mut dv: Vec<f32>,
        mut depth: Vec<f32>,
        valid: Vec<bool>,
    ) -> Option<Self> {
        let n = width as usize * height as usize;
        if du.len() != n || dv.len() != n || depth.len() != n || valid.len() != n {
            return None;
        }
        let mut valid_count = 0;
        for i in 0..n {
            if valid[i] {
                valid_count += 1;
            } else {
                du[i] = 0.0;
                dv[i] = 0.0;
                depth[i] = 0.0;
            }
        }
        Some(Self { width, height, du, dv, depth, valid, valid_count })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[self.index(x, y)]
    }

    /// `(du, dv, depth)` at a valid pixel, `None` otherwise.
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> Option<(f32, f32, f32)> {
        let i = self.index(x, y);
        self.valid[i].then(|| (self.du[i], self.dv[i], self.depth[i]))
    }

    pub fn set(&mut self, x: u32, y: u32, du: f32, dv: f32, depth: f32) {
        let i = self.index(x, y);
        if !self.valid[i] {
            self.valid[i] = true;
            self.valid_count += 1;
        }
        self.du[i] = du;
        self.dv[i] = dv;
        self.depth[i] = depth;
    }

    /// Fraction of valid pixels.
    pub fn density(&self) -> f64 {
        if self.valid.is_empty() {
            0.0
        } else {
            self.valid_count as f64 / self.valid.len() as f64
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    pub fn du_plane(&self) -> &[f32] {
        &self.du
    }

    pub fn dv_plane(&self) -> &[f32] {
        &self.dv
    }

    pub fn depth_plane(&self) -> &[f32] {
        &self.depth
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Iterate `(x, y, du, dv, depth)` over valid pixels in scan order.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (u32, u32, f32, f32, f32)> + '_ {
        (0..self.valid.len()).filter(|&i| self.valid[i]).map(|i| {
                let x = (i % self.width as usize) as u32;
                let y = (i / self.width as usize) as u32;
                (x, y, self.du[i], self.dv[i], self.depth[i])
            })
    }
}

/// How many clouds to merge, as an odd window centered on the current
/// frame. 1 disables merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeSpec {
    num_clouds: usize,
}

impl MergeSpec {
    pub fn new(num_clouds: usize) -> Option<Self> {
        (num_clouds % 2 == 1).then_some(Self { num_clouds })
    }

    pub fn single() -> Self {
        Self { num_clouds: 1 }
    }

    pub fn num_clouds(&self) -> usize {
        self.num_clouds
    }

    pub fn half_width(&self) -> usize {
        (self.num_clouds - 1) / 2
    }
}

impl Default for MergeSpec {
    fn default() -> Self {
        Self { num_clouds: 5 }
    }
}

/// Odd side length of the duplication neighborhood. 1 disables patching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    k: usize,
}

impl PatchSpec {
    pub fn new(k: usize) -> Option<Self> {
        (k % 2 == 1).then_some(Self { k })
    }

    pub fn none() -> Self {
        Self { k: 1 }
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Pipeline variant: which egomotion source and whether clouds are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Single cloud, egomotion integrated from the IMU.
    SpcImu,
    /// Single cloud, egomotion from ICP registration of consecutive clouds.
    SpcR,
    /// Merged clouds, egomotion integrated from the IMU.
    MpcImu,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spc+imu" | "spc_imu" | "spc-imu" => Some(Self::SpcImu),
            "spc+r" | "spc_r" | "spc-r" => Some(Self::SpcR),
            "mpc+imu" | "mpc_imu" | "mpc-imu" => Some(Self::MpcImu),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::SpcImu => "SPC+IMU",
            Self::SpcR => "SPC+R",
            Self::MpcImu => "MPC+IMU",
        }
    }
}

/// Anchor pixel of a continuous image position: nearest integer, `None`
/// when the position or its rounding falls outside the image.
#[inline]
fn anchor(u: f64, v: f64, width: u32, height: u32) -> Option<(u32, u32)> {
    if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
        return None;
    }
    let x = u.round();
    let y = v.round();
    if x >= width as f64 || y >= height as f64 {
        return None;
    }
    Some((x as u32, y as u32))
}

#[derive(Clone, Copy)]
struct Splat {
    pixel: usize,
    du: f64,
    dv: f64,
    depth: f64,
}

/// Motion at every pixel hit by a projected cloud point.
///
/// Each point is taken to camera coordinates, projected at frame `t`, moved
/// by the egomotion and projected again. Motion is stored at the rounded
/// frame-`t` pixel; the frame-`t+1` position may leave the image (consumers
/// decide what to do with exiting pixels). Pixel conflicts keep the point
/// with smaller frame-`t` depth, ties the smaller source index.
pub fn sparse_motion(
    pc: &PointCloud,
    lidar_to_cam: &RigidTransform,
    ego: &RigidTransform,
    k: &CameraIntrinsics,
) -> MotionField {
    let candidates = exec::map_indexed(&pc.points, |_, p| {
        let p_cam = lidar_to_cam.transform_point(p);
        let (u, v, depth) = k.project_point(&p_cam)?;
        let (x, y) = anchor(u, v, k.width, k.height)?;
        let p_next = ego.transform_point(&p_cam);
        let (u2, v2, _) = k.project_point(&p_next)?;
        Some(Splat {
            pixel: y as usize * k.width as usize + x as usize,
            du: u2 - u,
            dv: v2 - v,
            depth,
        })
    });

    // Sequential z-buffer application; the (depth, index) total order makes
    // the winner independent of application order.
    let mut field = MotionField::empty(k.width, k.height);
    let mut best: Vec<(f64, usize)> =
        vec![(f64::INFINITY, usize::MAX); (k.width as usize) * (k.height as usize)];
    for (idx, cand) in candidates.iter().enumerate() {
        let Some(s) = cand else { continue };
        let slot = &mut best[s.pixel];
        if s.depth < slot.0 || (s.depth == slot.0 && idx < slot.1) {
            *slot = (s.depth, idx);
        }
    }
    for (pixel, &(_, idx)) in best.iter().enumerate() {
        if idx != usize::MAX {
            let s = candidates[idx].as_ref().unwrap();
            let x = (pixel % k.width as usize) as u32;
            let y = (pixel / k.width as usize) as u32;
            field.set(x, y, s.du as f32, s.dv as f32, s.depth as f32);
        }
    }
    field
}

/// Concatenate a window of clouds, each mapped into the LiDAR frame of the
/// `center` cloud through chained camera egomotion conjugated by the
/// LiDAR-to-camera mount.
///
/// `egomotions[i]` maps frame `i` to `i+1` in camera coordinates, indexed
/// like `clouds`. A window that would cross the sequence bounds is shrunk
/// symmetrically with a warning. Output order is ascending frame order, so
/// the merged cloud's size is the sum of the window's cloud sizes.
pub fn merge_clouds(
    clouds: &[PointCloud],
    egomotions: &[EgomotionEstimate],
    center: usize,
    spec: MergeSpec,
    lidar_to_cam: &RigidTransform,
) -> Result<PointCloud, MotionError> {
    if center >= clouds.len() {
        return Err(MotionError::MissingNeighbor { center, frames: clouds.len() });
    }
    let want = spec.half_width();
    let have = want.min(center).min(clouds.len() - 1 - center);
    if have < want {
        log::warn!(
            "merge window of {} clouds exceeds sequence bounds at frame {center}; shrinking to {}",
            spec.num_clouds(),
            2 * have + 1
        );
    }
    let cam_to_lidar = lidar_to_cam.inverse();
    let mut points = Vec::new();
    let mut intensity = Vec::new();
    for (offset, cloud) in clouds[center - have..=center + have].iter().enumerate() {
        let j = center - have + offset;
        if j == center {
            points.extend_from_slice(&cloud.points);
        } else {
            let in_cam = chain_egomotion(egomotions, j, center)?;
            let in_lidar = cam_to_lidar.compose(&in_cam).compose(lidar_to_cam);
            let moved = transform_cloud(&in_lidar, cloud);
            points.extend_from_slice(&moved.points);
        }
        intensity.extend_from_slice(&cloud.intensity);
    }
    Ok(PointCloud {
        points,
        intensity,
        timestamp: clouds[center].timestamp,
    })
}

/// Duplicate every valid pixel's motion into its k x k neighborhood.
///
/// All writes, including each pixel's own, compete by `(source depth,
/// source linear index)`, so a nearer neighbor can overwrite an originally
/// valid pixel. Density never decreases.
pub fn densify_patched(field: &MotionField, spec: PatchSpec) -> MotionField {
    if spec.k() == 1 {
        return field.clone();
    }
    let r = (spec.k() / 2) as i64;
    let (w, h) = (field.width as i64, field.height as i64);
    let width = field.width as usize;

    // Gather per output pixel: scanning window sources in index order makes
    // "strictly smaller depth wins" equal to the (depth, index) order.
    let mut winners: Vec<u32> = vec![u32::MAX; field.valid.len()];
    exec::for_each_row(&mut winners, width, |row, out_row| {
        let y = row as i64;
        for (x, slot) in out_row.iter_mut().enumerate() {
            let x = x as i64;
            let mut best_depth = f32::INFINITY;
            for sy in (y - r).max(0)..=(y + r).min(h - 1) {
                for sx in (x - r).max(0)..=(x + r).min(w - 1) {
                    let si = sy as usize * width + sx as usize;
                    if field.valid[si] && field.depth[si] < best_depth {
                        best_depth = field.depth[si];
                        *slot = si as u32;
                    }
                }
            }
        }
    });
    let mut out = MotionField::empty(field.width, field.height);
    for (i, &src) in winners.iter().enumerate() {
        if src != u32::MAX {
            let si = src as usize;
            let x = (i % width) as u32;
            let y = (i / width) as u32;
            out.set(x, y, field.du[si], field.dv[si], field.depth[si]);
        }
    }
    out
}

/// Everything motion estimation needs around one frame pair: cloud and
/// timestamp sequences, IMU records and calibration. Motion is computed
/// from frame `center` to `center + 1`.
#[derive(Clone, Copy)]
pub struct FrameWindow<'a> {
    pub clouds: &'a [PointCloud],
    pub timestamps: &'a [f64],
    pub imu: &'a [ImuRecord],
    pub intrinsics: &'a CameraIntrinsics,
    pub lidar_to_cam: &'a RigidTransform,
    pub imu_to_cam: &'a RigidTransform,
    pub center: usize,
}

pub const ICP_MAX_ITERS: usize = 50;
pub const ICP_TOL: f64 = 1e-7;

impl FrameWindow<'_> {
    fn imu_step(&self, i: usize) -> Result<EgomotionEstimate, EgomotionError> {
        integrate_imu(
            self.imu,
            self.timestamps[i],
            self.timestamps[i + 1],
            Some(self.imu_to_cam),
        )
    }

    /// Per-step egomotion `i -> i+1` from the variant's source: IMU
    /// integration, or ICP registration of the consecutive clouds
    /// conjugated into the camera frame.
    pub fn step(&self, variant: Variant, i: usize) -> Result<EgomotionEstimate, MotionError> {
        match variant {
            Variant::SpcImu | Variant::MpcImu => Ok(self.imu_step(i)?),
            Variant::SpcR => {
                let est = register_icp(
                    &self.clouds[i],
                    &self.clouds[i + 1],
                    &RigidTransform::identity(),
                    ICP_MAX_ITERS,
                    ICP_TOL,
                )?;
                Ok(EgomotionEstimate {
                    transform: est.transform.conjugated(self.lidar_to_cam),
                    ..est
                })
            }
        }
    }

    /// Camera egomotion for the center frame pair from the requested source.
    pub fn egomotion(&self, variant: Variant) -> Result<EgomotionEstimate, MotionError> {
        self.step(variant, self.center)
    }

    /// Chained egomotion from the center frame to an arbitrary `target`
    /// frame, composed from per-step estimates.
    pub fn egomotion_toward(
        &self,
        variant: Variant,
        target: usize,
    ) -> Result<RigidTransform, MotionError> {
        let (lo, hi) = (self.center.min(target), self.center.max(target));
        if hi > self.clouds.len().saturating_sub(1) {
            return Err(MotionError::MissingSuccessor(hi));
        }
        let mut steps = Vec::with_capacity(hi.saturating_sub(lo));
        // Indices in `steps` are window-relative; shift `from`/`to` to match.
        for i in lo..hi {
            steps.push(self.step(variant, i)?);
        }
        Ok(chain_egomotion(&steps, self.center - lo, target - lo)?)
    }
}

/// Like [`estimate`], but the motion maps the center frame onto an
/// arbitrary `target` frame, with egomotion chained across the in-between
/// steps. Rigid scenes make the chained map exact, so multi-frame fusion
/// uses direct per-source fields rather than concatenating warps.
pub fn estimate_toward(
    window: &FrameWindow,
    target: usize,
    variant: Variant,
    merge: MergeSpec,
    patch: PatchSpec,
) -> Result<MotionField, MotionError> {
    let center = window.center;
    if target >= window.clouds.len() || center >= window.clouds.len() {
        return Err(MotionError::MissingSuccessor(center.max(target)));
    }
    let ego = window.egomotion_toward(variant, target)?;
    let sparse = match variant {
        Variant::SpcImu | Variant::SpcR => sparse_motion(
            &window.clouds[center],
            window.lidar_to_cam,
            &ego,
            window.intrinsics,
        ),
        Variant::MpcImu => {
            let h = merge
                .half_width()
                .min(center)
                .min(window.clouds.len() - 1 - center);
            let (lo, hi) = (center - h, center + h);
            let mut steps = Vec::with_capacity(hi - lo);
            for i in lo..hi {
                steps.push(window.imu_step(i)?);
            }
            let spec = MergeSpec::new(2 * h + 1).expect("odd by construction");
            let merged = merge_clouds(
                &window.clouds[lo..=hi],
                &steps,
                center - lo,
                spec,
                window.lidar_to_cam,
            )?;
            sparse_motion(&merged, window.lidar_to_cam, &ego, window.intrinsics)
        }
    };
    Ok(densify_patched(&sparse, patch))
}

/// Run one variant end to end for the center frame pair: egomotion,
/// optional cloud merging, the sparse motion kernel, then patch
/// densification.
pub fn estimate(
    window: &FrameWindow,
    variant: Variant,
    merge: MergeSpec,
    patch: PatchSpec,
) -> Result<MotionField, MotionError> {
    if window.center + 1 >= window.clouds.len() {
        return Err(MotionError::MissingSuccessor(window.center));
    }
    estimate_toward(window, window.center + 1, variant, merge, patch)
}
