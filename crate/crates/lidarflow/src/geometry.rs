//! Rigid transforms, camera intrinsics, point clouds and the pinhole
//! projection chain.
//!
//! Everything here is double precision: egomotion chains across merged
//! clouds accumulate error, and the downstream motion fields are compared
//! against closed-form oracles at 1e-9 pixel tolerances. Image buffers are
//! the only single-precision data in the crate.
//!
//! Conventions: camera frame is z-forward, x-right, y-down; pixel
//! coordinates are continuous with integer values at pixel centers.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use thiserror::Error;

use crate::exec;

/// Points closer than this to the camera plane are discarded before the
/// perspective division. LiDAR minimum range is well above it.
pub const Z_MIN: f64 = 0.1;

/// Tolerance on rotation orthonormality and unit determinant.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation block is not orthonormal (max deviation {0:.3e})")]
    InvalidRotation(f64),
    #[error("bottom row of a rigid transform must be [0,0,0,1]")]
    InvalidBottomRow,
    #[error("non-finite coordinate in input")]
    NonFinite,
    #[error("intensity length {intensity} does not match point count {points}")]
    IntensityLength { points: usize, intensity: usize },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// An element of SE(3) stored as a homogeneous 4x4 matrix.
///
/// The rotation block is orthonormal with determinant +1 within
/// [`ORTHONORMAL_TOL`] and the bottom row is exactly `[0,0,0,1]`. Instances
/// are immutable; all operations return fresh values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    m: Matrix4<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            m: Matrix4::identity(),
        }
    }

    /// Build from a rotation block and translation, validating the rotation.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::from_matrix(m)
    }

    /// Build from a full homogeneous matrix, validating all invariants.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(GeometryError::InvalidBottomRow);
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = r.transpose() * r - Matrix3::identity();
        let dev = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let det_dev = (r.determinant() - 1.0).abs();
        if dev >= ORTHONORMAL_TOL || det_dev >= ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidRotation(dev.max(det_dev)));
        }
        Ok(Self { m })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self { m }
    }

    /// Rotation about the camera x axis by `angle` radians (right-handed).
    pub fn rotation_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
        Self::rot_unchecked(r)
    }

    pub fn rotation_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        Self::rot_unchecked(r)
    }

    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self::rot_unchecked(r)
    }

    fn rot_unchecked(r: Matrix3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        Self { m }
    }

    /// `self.m * other.m`. SE(3) is closed under composition, so no
    /// validation is repeated here.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform { m: self.m * other.m }
    }

    /// Inverse via the rotation transpose: `R' = R^T`, `t' = -R^T t`.
    pub fn inverse(&self) -> RigidTransform {
        let r = self.rotation();
        let rt = r.transpose();
        let t = -rt * self.translation();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        RigidTransform { m }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        let r = self.m.fixed_view::<3, 3>(0, 0);
        let t = self.m.fixed_view::<3, 1>(0, 3);
        Point3::from(r * p.coords + t)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.m.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.m.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.m
    }

    /// Express this transform in another frame: `by * self * by^-1`.
    ///
    /// If `self` maps points within frame A and `by` maps A-coordinates to
    /// B-coordinates, the result maps points within frame B.
    pub fn conjugated(&self, by: &RigidTransform) -> RigidTransform {
        by.compose(self).compose(&by.inverse())
    }

    /// Largest absolute element-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.m - other.m).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Pinhole intrinsics of a rectified camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    /// Focal length in pixels, x.
    pub fx: f64,
    /// Focal length in pixels, y.
    pub fy: f64,
    /// Principal point, x.
    pub cx: f64,
    /// Principal point, y.
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(0.0..(width as f64)).contains(&cx) || !(0.0..(height as f64)).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside the image"));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Perspective projection of a camera-frame point. Returns
    /// `(u, v, depth)` or `None` when the point is at or behind the
    /// near plane. No image-bounds test is applied.
    #[inline]
    pub fn project_point(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        if p.z <= Z_MIN {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Some((u, v, p.z))
    }

    /// Inverse of [`project_point`](Self::project_point) at a known depth.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth)
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }

    /// Intrinsics of the same camera after integer downsampling by `factor`,
    /// where each low-resolution pixel is the box average of a
    /// `factor x factor` block. Pixel centers shift by `(factor-1)/2`.
    pub fn downsampled(&self, factor: u32) -> CameraIntrinsics {
        let f = factor as f64;
        CameraIntrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx - (f - 1.0) / 2.0) / f,
            cy: (self.cy - (f - 1.0) / 2.0) / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }
}

/// A LiDAR sweep: 3D points in the sensor frame with per-point reflectance.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    /// Reflectance in `[0,1]`, one value per point.
    pub intensity: Vec<f32>,
    /// Capture time in seconds.
    pub timestamp: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, intensity: Vec<f32>, timestamp: f64) -> Result<Self, GeometryError> {
        if points.len() != intensity.len() {
            return Err(GeometryError::IntensityLength {
                points: points.len(),
                intensity: intensity.len(),
            });
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { points, intensity, timestamp })
    }

    /// Cloud with zero reflectance everywhere.
    pub fn from_points(points: Vec<Point3<f64>>, timestamp: f64) -> Result<Self, GeometryError> {
        let intensity = vec![0.0; points.len()];
        Self::new(points, intensity, timestamp)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A cloud point projected into the image: continuous pixel coordinates,
/// camera-frame depth, and the index of the point in its source cloud.
/// Only points in front of the near plane are ever represented.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
    /// Camera-frame z in meters, always `> Z_MIN`.
    pub depth: f64,
    pub source_index: usize,
}

/// Apply a rigid transform to every point of a cloud. Intensity and point
/// order are preserved.
pub fn transform_cloud(t: &RigidTransform, pc: &PointCloud) -> PointCloud {
    let points = exec::map_indexed(&pc.points, |_, p| t.transform_point(p));
    PointCloud {
        points,
        intensity: pc.intensity.clone(),
        timestamp: pc.timestamp,
    }
}

/// Project a camera-frame cloud. Points behind the near plane or landing
/// outside `[0,width) x [0,height)` are dropped; output order follows input
/// order and `source_index` refers to the input cloud.
pub fn project(k: &CameraIntrinsics, pc_cam: &PointCloud) -> Vec<PixelPoint> {
    let projected = exec::map_indexed(&pc_cam.points, |i, p| {
        k.project_point(p).and_then(|(u, v, depth)| {
            if k.contains(u, v) {
                Some(PixelPoint { u, v, depth, source_index: i })
            } else {
                None
            }
        })
    });
    projected.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_transform(rng: &mut StdRng) -> RigidTransform {
        let rx = RigidTransform::rotation_x(rng.random_range(-3.0..3.0));
        let ry = RigidTransform::rotation_y(rng.random_range(-3.0..3.0));
        let rz = RigidTransform::rotation_z(rng.random_range(-3.0..3.0));
        let t = RigidTransform::from_translation(Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        ));
        t.compose(&rz).compose(&ry).compose(&rx)
    }

    #[test]
    fn compose_identity_is_neutral() {
        let mut rng = StdRng::seed_from_u64(1);
        let x = random_transform(&mut rng);
        let i = RigidTransform::identity();
        assert_eq!(i.compose(&x).matrix(), x.matrix());
        assert_eq!(x.compose(&i).matrix(), x.matrix());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..50 {
            let x = random_transform(&mut rng);
            let err = x.compose(&x.inverse()).max_abs_diff(&RigidTransform::identity());
            assert!(err < 1e-9, "round trip error {err}");
            let err = x.inverse().compose(&x).max_abs_diff(&RigidTransform::identity());
            assert!(err < 1e-9, "two-sided inverse error {err}");
        }
    }

    #[test]
    fn compose_analytic_rotations() {
        let a = RigidTransform::rotation_z(30f64.to_radians());
        let b = RigidTransform::rotation_z(60f64.to_radians());
        let expect = RigidTransform::rotation_z(90f64.to_radians());
        assert!(a.compose(&b).max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let c = random_transform(&mut rng);
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }
    }

    #[test]
    fn inverse_of_identity_and_translation() {
        assert_eq!(
            RigidTransform::identity().inverse().matrix(),
            RigidTransform::identity().matrix()
        );
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let expect = RigidTransform::from_translation(Vector3::new(-1.0, -2.0, -3.0));
        assert!(t.inverse().max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn transform_cloud_round_trip() {
        let mut rng = StdRng::seed_from_u64(4);
        let t = random_transform(&mut rng);
        let points: Vec<_> = (0..200)
            .map(|_| {
                Point3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                )
            })
            .collect();
        let pc = PointCloud::from_points(points, 0.0).unwrap();
        let back = transform_cloud(&t.inverse(), &transform_cloud(&t, &pc));
        for (a, b) in pc.points.iter().zip(back.points.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
        assert_eq!(pc.intensity, back.intensity);
    }

    #[test]
    fn transform_cloud_identity_and_translate() {
        let pc = PointCloud::from_points(vec![Point3::origin()], 0.0).unwrap();
        let same = transform_cloud(&RigidTransform::identity(), &pc);
        assert_eq!(same.points, pc.points);
        let moved = transform_cloud(
            &RigidTransform::from_translation(Vector3::new(0.0, 0.0, 5.0)),
            &pc,
        );
        assert_eq!(moved.points[0], Point3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn project_optical_axis_and_offset() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let pc = PointCloud::from_points(
            vec![
                Point3::new(0.0, 0.0, 10.0),
                Point3::new(1.0, 0.0, 10.0),
                Point3::new(0.0, 0.0, -1.0),
            ],
            0.0,
        )
        .unwrap();
        let px = project(&k, &pc);
        assert_eq!(px.len(), 2);
        assert_relative_eq!(px[0].u, 50.0);
        assert_relative_eq!(px[0].v, 50.0);
        assert_relative_eq!(px[0].depth, 10.0);
        // u = 100 * 1/10 + 50
        assert_relative_eq!(px[1].u, 60.0);
        assert_relative_eq!(px[1].v, 50.0);
        assert_eq!(px[1].source_index, 1);
    }

    #[test]
    fn project_unproject_round_trip() {
        let k = CameraIntrinsics::new(721.5, 721.5, 609.6, 172.9, 1242, 375).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..500 {
            let p = Point3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.2..80.0),
            );
            let (u, v, d) = k.project_point(&p).unwrap();
            let q = k.unproject(u, v, d);
            assert!((p - q).norm() < 1e-9);
        }
    }

    #[test]
    fn project_is_scale_consistent() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
        let p = Point3::new(1.5, -0.7, 12.0);
        let (u, v, d) = k.project_point(&p).unwrap();
        for lambda in [0.5, 2.0, 7.3] {
            let q = Point3::from(p.coords * lambda);
            let (u2, v2, d2) = k.project_point(&q).unwrap();
            assert_relative_eq!(u, u2, epsilon = 1e-9);
            assert_relative_eq!(v, v2, epsilon = 1e-9);
            assert_relative_eq!(d * lambda, d2, epsilon = 1e-9);
        }
    }

    #[test]
    fn constructors_validate() {
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::from_parts(skew, Vector3::zeros()).is_err());
        let mut bad_row = Matrix4::identity();
        bad_row[(3, 0)] = 1.0;
        assert!(RigidTransform::from_matrix(bad_row).is_err());
        assert!(CameraIntrinsics::new(-1.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 20.0, 5.0, 10, 10).is_err());
        assert!(PointCloud::new(vec![Point3::origin()], vec![], 0.0).is_err());
        assert!(PointCloud::from_points(vec![Point3::new(f64::NAN, 0.0, 0.0)], 0.0).is_err());
    }
}
