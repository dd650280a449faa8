//! Synthetic sequences with exact ground truth.
//!
//! Scenes are textured quads (boxes expand to quads) rendered by per-pixel
//! ray casting, so clean frames, dense motion fields and egomotion are all
//! closed-form. LiDAR sweeps are visibility-checked surface samples, and
//! IMU records are piecewise-constant rates whose trapezoidal integral
//! reproduces the pose increments exactly. Degradations (blur, decimation,
//! noise) are applied only after every ground-truth product is captured.
//!
//! Everything is a pure function of the spec: random draws come from
//! counter-mode generators keyed on the seed with fixed stream ids per
//! purpose and frame.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Calibration, DataError};
use crate::egomotion::{
    yaw_pitch_roll_angles, yaw_pitch_roll_rotation, EgomotionEstimate, EgomotionSource, ImuPayload,
    ImuRecord,
};
use crate::geometry::{CameraIntrinsics, PointCloud, RigidTransform, Z_MIN};
use crate::imgproc::{box_downsample, gaussian_blur};
use crate::motion::{FrameWindow, MotionField};
use crate::warp::Image;

/// Periodic albedo pattern over a surface's local coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub base: f64,
    pub amplitude: f64,
    pub freq_u: f64,
    pub freq_v: f64,
    #[serde(default)]
    pub phase_u: f64,
    #[serde(default)]
    pub phase_v: f64,
}

impl TextureSpec {
    fn value(&self, su: f64, sv: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let primary = (tau * self.freq_u * su + self.phase_u).sin()
            * (tau * self.freq_v * sv + self.phase_v).sin();
        let detail = (tau * 2.6 * self.freq_u * su + 1.7).sin()
            * (tau * 3.1 * self.freq_v * sv + 0.4).sin();
        (self.base + self.amplitude * primary + 0.35 * self.amplitude * detail).clamp(0.02, 0.98)
    }
}

/// Scene geometry, world coordinates. The world frame coincides with the
/// first camera frame: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PrimitiveSpec {
    /// Finite textured parallelogram: `origin + a*edge_u + b*edge_v`.
    Quad {
        origin: [f64; 3],
        edge_u: [f64; 3],
        edge_v: [f64; 3],
        texture: TextureSpec,
    },
    /// Axis-aligned textured box.
    Block {
        min: [f64; 3],
        max: [f64; 3],
        texture: TextureSpec,
    },
}

/// Deterministic scene description. `primitives` empty means the built-in
/// corridor scene (plus an occluder box when `occluder` is set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    /// LiDAR points per sweep.
    pub num_points: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    /// Full-resolution focal length in pixels (fx = fy).
    pub focal: f64,
    #[serde(default)]
    pub primitives: Vec<PrimitiveSpec>,
    #[serde(default = "default_true")]
    pub occluder: bool,
    /// Per-frame camera motion, expressed in the current camera frame.
    pub step_translation: [f64; 3],
    pub step_yaw: f64,
    pub step_pitch: f64,
    pub step_roll: f64,
    /// Additive image noise sigma (after any decimation).
    #[serde(default)]
    pub noise_sigma: f64,
    /// Peak Gaussian blur sigma (before any decimation). Frames cycle
    /// through full, zero and half blur so a temporal window always holds
    /// sharper observations, the situation deblurring exploits.
    #[serde(default)]
    pub blur_sigma: f64,
    /// Integer decimation factor; 1 keeps full resolution.
    #[serde(default = "default_one")]
    pub downsample: u32,
    #[serde(default = "default_imu_rate")]
    pub imu_samples_per_frame: usize,
    /// Gaussian noise on IMU linear rates (m/s).
    #[serde(default)]
    pub imu_noise_velocity: f64,
    /// Gaussian noise on IMU angular rates (rad/s).
    #[serde(default)]
    pub imu_noise_gyro: f64,
    /// Draw a fresh surface sample per frame (true) or re-observe the same
    /// surface points every frame (false; exact rescans for registration).
    #[serde(default = "default_true")]
    pub resample_clouds: bool,
    #[serde(default = "default_fps")]
    pub frame_rate: f64,
}

fn default_true() -> bool {
    true
}
fn default_one() -> u32 {
    1
}
fn default_imu_rate() -> usize {
    10
}
fn default_fps() -> f64 {
    10.0
}

impl SyntheticSceneSpec {
    /// A driving-like default: textured corridor, forward motion with mild
    /// yaw, and a foreground box occluder.
    pub fn default_scene(seed: u64) -> Self {
        Self {
            seed,
            num_points: 6000,
            frames: 8,
            width: 192,
            height: 128,
            focal: 160.0,
            primitives: Vec::new(),
            occluder: true,
            step_translation: [0.02, 0.004, 0.55],
            step_yaw: 0.006,
            step_pitch: 0.0015,
            step_roll: 0.001,
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            downsample: 1,
            imu_samples_per_frame: 10,
            imu_noise_velocity: 0.0,
            imu_noise_gyro: 0.0,
            resample_clouds: true,
            frame_rate: 10.0,
        }
    }

    /// The default scene without the occluder; every pixel sees the same
    /// surface from all nearby viewpoints.
    pub fn corridor(seed: u64) -> Self {
        Self {
            occluder: false,
            ..Self::default_scene(seed)
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.frames < 2 {
            return fail("frames must be at least 2");
        }
        if self.num_points == 0 {
            return fail("num_points must be positive");
        }
        if self.width < 16 || self.height < 16 {
            return fail("image must be at least 16x16");
        }
        if !self.focal.is_finite() || self.focal <= 0.0 {
            return fail("focal must be positive");
        }
        if self.downsample == 0
            || !self.width.is_multiple_of(self.downsample)
            || !self.height.is_multiple_of(self.downsample)
        {
            return fail("downsample must divide both image dimensions");
        }
        if self.imu_samples_per_frame == 0 {
            return fail("imu_samples_per_frame must be positive");
        }
        if !self.frame_rate.is_finite() || self.frame_rate <= 0.0 {
            return fail("frame_rate must be positive");
        }
        Ok(())
    }

    fn scene_primitives(&self) -> Vec<PrimitiveSpec> {
        if !self.primitives.is_empty() {
            return self.primitives.clone();
        }
        let tex = |base: f64, amplitude: f64, fu: f64, fv: f64, pu: f64| TextureSpec {
            base,
            amplitude,
            freq_u: fu,
            freq_v: fv,
            phase_u: pu,
            phase_v: 0.9,
        };
        let mut prims = vec![
            // ground
            PrimitiveSpec::Quad {
                origin: [-14.0, 1.6, 1.0],
                edge_u: [28.0, 0.0, 0.0],
                edge_v: [0.0, 0.0, 94.0],
                texture: tex(0.45, 0.30, 0.45, 0.35, 0.3),
            },
            // ceiling
            PrimitiveSpec::Quad {
                origin: [-14.0, -2.6, 1.0],
                edge_u: [28.0, 0.0, 0.0],
                edge_v: [0.0, 0.0, 94.0],
                texture: tex(0.55, 0.25, 0.3, 0.5, 1.2),
            },
            // left wall
            PrimitiveSpec::Quad {
                origin: [-12.0, -2.6, 1.0],
                edge_u: [0.0, 4.2, 0.0],
                edge_v: [0.0, 0.0, 94.0],
                texture: tex(0.5, 0.32, 0.6, 0.4, 2.1),
            },
            // right wall
            PrimitiveSpec::Quad {
                origin: [12.0, -2.6, 1.0],
                edge_u: [0.0, 4.2, 0.0],
                edge_v: [0.0, 0.0, 94.0],
                texture: tex(0.48, 0.34, 0.5, 0.55, 0.7),
            },
            // end wall
            PrimitiveSpec::Quad {
                origin: [-14.0, -2.6, 95.0],
                edge_u: [28.0, 0.0, 0.0],
                edge_v: [0.0, 4.2, 0.0],
                texture: tex(0.52, 0.28, 0.4, 0.6, 1.8),
            },
        ];
        if self.occluder {
            prims.push(PrimitiveSpec::Block {
                min: [-2.2, -0.4, 13.0],
                max: [-0.6, 1.6, 15.0],
                texture: tex(0.6, 0.3, 1.4, 1.2, 0.2),
            });
        }
        prims
    }
}

struct Surface {
    origin: Point3<f64>,
    edge_u: Vector3<f64>,
    edge_v: Vector3<f64>,
    texture: TextureSpec,
    len_u: f64,
    len_v: f64,
    area: f64,
}

impl Surface {
    fn new(origin: [f64; 3], eu: [f64; 3], ev: [f64; 3], texture: TextureSpec) -> Self {
        let edge_u = Vector3::from(eu);
        let edge_v = Vector3::from(ev);
        Self {
            origin: Point3::from(origin),
            edge_u,
            edge_v,
            texture,
            len_u: edge_u.norm(),
            len_v: edge_v.norm(),
            area: edge_u.cross(&edge_v).norm(),
        }
    }

    fn albedo(&self, a: f64, b: f64) -> f64 {
        self.texture.value(a * self.len_u, b * self.len_v)
    }

    /// Ray intersection: returns `(t, a, b)` with the hit at
    /// `origin + t * dir` and surface coordinates `(a, b)` in `[0,1]^2`.
    fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let m = Matrix3::from_columns(&[self.edge_u, self.edge_v, -dir]);
        let rhs = origin - self.origin;
        let solution = m.lu().solve(&rhs)?;
        let (a, b, t) = (solution[0], solution[1], solution[2]);
        ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) && t > 1e-9).then_some((t, a, b))
    }
}

fn build_surfaces(prims: &[PrimitiveSpec]) -> Vec<Surface> {
    let mut surfaces = Vec::new();
    for p in prims {
        match p {
            PrimitiveSpec::Quad { origin, edge_u, edge_v, texture } => {
                surfaces.push(Surface::new(*origin, *edge_u, *edge_v, *texture));
            }
            PrimitiveSpec::Block { min, max, texture } => {
                let (x0, y0, z0) = (min[0], min[1], min[2]);
                let (x1, y1, z1) = (max[0], max[1], max[2]);
                let (dx, dy, dz) = (x1 - x0, y1 - y0, z1 - z0);
                let faces = [
                    // z- and z+ faces
                    ([x0, y0, z0], [dx, 0.0, 0.0], [0.0, dy, 0.0]),
                    ([x0, y0, z1], [dx, 0.0, 0.0], [0.0, dy, 0.0]),
                    // x- and x+ faces
                    ([x0, y0, z0], [0.0, dy, 0.0], [0.0, 0.0, dz]),
                    ([x1, y0, z0], [0.0, dy, 0.0], [0.0, 0.0, dz]),
                    // y- and y+ faces
                    ([x0, y0, z0], [dx, 0.0, 0.0], [0.0, 0.0, dz]),
                    ([x0, y1, z0], [dx, 0.0, 0.0], [0.0, 0.0, dz]),
                ];
                for (o, eu, ev) in faces {
                    surfaces.push(Surface::new(o, eu, ev, *texture));
                }
            }
        }
    }
    surfaces
}

fn raycast(surfaces: &[Surface], origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, f64, f64)> {
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for (i, s) in surfaces.iter().enumerate() {
        if let Some((t, a, b)) = s.intersect(origin, dir) {
            if best.is_none_or(|(bt, _, _, _)| t < bt) {
                best = Some((t, i, a, b));
            }
        }
    }
    best
}

const BACKGROUND: f32 = 0.06;

/// A generated sequence together with every ground-truth product.
///
/// `frames` are the degraded task inputs at the working resolution (full
/// resolution unless decimation was requested); `clean` keeps the full
/// resolution reference. `gt_fields[i]` is the dense analytic motion from
/// frame `i` to `i+1` at the working resolution and `gt_egomotion[i]` the
/// exact camera-frame point map for that step.
pub struct SyntheticSequence {
    pub spec: SyntheticSceneSpec,
    pub clean: Vec<Image>,
    pub frames: Vec<Image>,
    pub clouds: Vec<PointCloud>,
    pub imu: Vec<ImuRecord>,
    pub imu_clean: Vec<ImuRecord>,
    pub timestamps: Vec<f64>,
    pub calib: Calibration,
    pub full_intrinsics: CameraIntrinsics,
    pub gt_fields: Vec<MotionField>,
    pub gt_egomotion: Vec<EgomotionEstimate>,
}

impl SyntheticSequence {
    /// Estimation inputs centered on the step `center -> center + 1`.
    pub fn frame_window(&self, center: usize) -> FrameWindow<'_> {
        FrameWindow {
            clouds: &self.clouds,
            timestamps: &self.timestamps,
            imu: &self.imu,
            intrinsics: &self.calib.intrinsics,
            lidar_to_cam: &self.calib.lidar_to_cam,
            imu_to_cam: &self.calib.imu_to_cam,
            center,
        }
    }
}

/// Fixed synthetic rig mounts, deliberately non-trivial so every frame
/// conversion is exercised: the LiDAR uses forward/left/up axes like a
/// vehicle sensor, the IMU is offset and slightly rotated from it.
fn rig() -> (RigidTransform, RigidTransform) {
    #[rustfmt::skip]
    let r = Matrix3::new(
        0.0, -1.0, 0.0,
        0.0, 0.0, -1.0,
        1.0, 0.0, 0.0,
    );
    let lidar_to_cam = RigidTransform::from_parts(r, Vector3::new(0.02, -0.08, 0.27))
        .expect("axis permutation is orthonormal");
    let imu_to_velo = RigidTransform::rotation_z(0.015)
        .compose(&RigidTransform::from_translation(Vector3::new(-0.8, 0.3, 0.9)));
    let imu_to_cam = lidar_to_cam.compose(&imu_to_velo);
    (lidar_to_cam, imu_to_cam)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Render one frame. The hit map holds each pixel's surface point in the
/// camera frame of this pose (depth is its z).
fn render_frame(
    surfaces: &[Surface],
    pose: &RigidTransform,
    k: &CameraIntrinsics,
) -> (Image, Vec<Option<Point3<f64>>>) {
    let rot = pose.rotation();
    let origin = Point3::from(pose.translation());
    let mut hits = vec![None; k.width as usize * k.height as usize];
    let img = Image::from_fn(k.width, k.height, 1, |x, y, _| {
        let dir_cam = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
        let dir = rot * dir_cam;
        match raycast(surfaces, &origin, &dir) {
            Some((t, si, a, b)) => {
                hits[y as usize * k.width as usize + x as usize] = Some(Point3::from(dir_cam * t));
                surfaces[si].albedo(a, b) as f32
            }
            None => BACKGROUND,
        }
    });
    (img, hits)
}

const BLUR_CYCLE: [f64; 3] = [1.0, 0.0, 0.5];

fn degrade(img: &Image, spec: &SyntheticSceneSpec, frame: usize, rng: &mut ChaCha12Rng) -> Image {
    let sigma = spec.blur_sigma * BLUR_CYCLE[frame % BLUR_CYCLE.len()];
    let mut out = if sigma > 0.0 {
        gaussian_blur(img, sigma)
    } else {
        img.clone()
    };
    if spec.downsample > 1 {
        out = box_downsample(&out, spec.downsample);
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
        for v in out.data_mut() {
            *v = (*v + normal.sample(rng) as f32).clamp(0.0, 1.0);
        }
    }
    out
}

/// Generate a sequence from a spec. Deterministic: the same spec yields
/// bit-identical output.
pub fn generate(spec: &SyntheticSceneSpec) -> Result<SyntheticSequence, DataError> {
    spec.validate()?;
    let surfaces = build_surfaces(&spec.scene_primitives());
    if surfaces.is_empty() {
        return Err(DataError::InvalidSpec("scene has no surfaces".to_string()));
    }
    let (lidar_to_cam, imu_to_cam) = rig();
    let full_k = CameraIntrinsics::new(
        spec.focal,
        spec.focal,
        spec.width as f64 / 2.0,
        spec.height as f64 / 2.0,
        spec.width,
        spec.height,
    )
    .map_err(|e| DataError::InvalidSpec(e.to_string()))?;
    let work_k = full_k.downsampled(spec.downsample);

    // Camera pose chain. The per-frame increment is constant in the current
    // camera frame; its inverse is the exact egomotion point map.
    let step_rot_passive =
        yaw_pitch_roll_rotation(spec.step_yaw, spec.step_pitch, spec.step_roll);
    let step = RigidTransform::from_parts(
        step_rot_passive.transpose(),
        Vector3::from(spec.step_translation),
    )
    .map_err(|e| DataError::InvalidSpec(format!("invalid trajectory step: {e}")))?;
    let ego_exact = step.inverse();
    let mut poses = vec![RigidTransform::identity()];
    for _ in 1..spec.frames {
        poses.push(poses.last().unwrap().compose(&step));
    }
    let dt = 1.0 / spec.frame_rate;
    let timestamps: Vec<f64> = (0..spec.frames).map(|i| i as f64 * dt).collect();

    // IMU rates in the body frame: constant rates whose Euler-model
    // integral over one frame interval is exactly the body-frame increment.
    let step_imu = step.conjugated(&imu_to_cam.inverse());
    let (yaw_i, pitch_i, roll_i) = yaw_pitch_roll_angles(&step_imu.rotation().transpose());
    debug_assert!(
        (yaw_pitch_roll_rotation(yaw_i, pitch_i, roll_i) - step_imu.rotation().transpose()).norm()
            < 1e-12
    );
    let gyro = Vector3::new(roll_i, pitch_i, yaw_i) / dt;
    let velocity = step_imu.translation() / dt;
    let samples_per = spec.imu_samples_per_frame;
    let total_samples = (spec.frames - 1) * samples_per + 1;
    let imu_clean: Vec<ImuRecord> = (0..total_samples)
        .map(|i| ImuRecord {
            timestamp: i as f64 * dt / samples_per as f64,
            linear: velocity,
            gyro,
            payload: ImuPayload::Velocity,
        })
        .collect();
    let imu = if spec.imu_noise_velocity > 0.0 || spec.imu_noise_gyro > 0.0 {
        let mut rng = stream_rng(spec.seed, 1);
        let nv = Normal::new(0.0, spec.imu_noise_velocity.max(1e-300)).unwrap();
        let ng = Normal::new(0.0, spec.imu_noise_gyro.max(1e-300)).unwrap();
        imu_clean
            .iter()
            .map(|r| ImuRecord {
                linear: r.linear + Vector3::new(nv.sample(&mut rng), nv.sample(&mut rng), nv.sample(&mut rng)),
                gyro: r.gyro + Vector3::new(ng.sample(&mut rng), ng.sample(&mut rng), ng.sample(&mut rng)),
                ..*r
            })
            .collect()
    } else {
        imu_clean.clone()
    };

    let gt_egomotion: Vec<EgomotionEstimate> = (0..spec.frames - 1)
        .map(|_| EgomotionEstimate {
            transform: ego_exact,
            source: EgomotionSource::Imu,
            residual: 0.0,
        })
        .collect();

    // Surface sample shared across frames when rescanning is disabled.
    let shared_samples: Option<Vec<(usize, f64, f64)>> = (!spec.resample_clouds).then(|| {
        let mut rng = stream_rng(spec.seed, 999);
        draw_surface_samples(&surfaces, spec.num_points, &mut rng)
    });

    let mut clean = Vec::with_capacity(spec.frames);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut clouds = Vec::with_capacity(spec.frames);
    let mut hit_maps = Vec::with_capacity(spec.frames);
    for (i, pose) in poses.iter().enumerate() {
        let (img, full_hits) = render_frame(&surfaces, pose, &full_k);
        let mut noise_rng = stream_rng(spec.seed, 2000 + i as u64);
        frames.push(degrade(&img, spec, i, &mut noise_rng));
        clean.push(img);
        if spec.downsample > 1 {
            let (_, work_hits) = render_frame(&surfaces, pose, &work_k);
            hit_maps.push(work_hits);
        } else {
            hit_maps.push(full_hits);
        }

        // LiDAR sweep: surface samples visible from the sensor origin,
        // expressed in the sensor frame at this pose.
        let lidar_pose = pose.compose(&lidar_to_cam);
        let lidar_origin = Point3::from(lidar_pose.translation());
        let lidar_from_world = lidar_pose.inverse();
        let samples = match &shared_samples {
            Some(s) => s.clone(),
            None => {
                let mut rng = stream_rng(spec.seed, 1000 + i as u64);
                draw_surface_samples(&surfaces, spec.num_points, &mut rng)
            }
        };
        let mut points = Vec::with_capacity(samples.len());
        let mut intensity = Vec::with_capacity(samples.len());
        for (si, a, b) in samples {
            let s = &surfaces[si];
            let world = s.origin + s.edge_u * a + s.edge_v * b;
            if spec.resample_clouds {
                // Keep only first-hit points along the sensor ray.
                let dir = world - lidar_origin;
                match raycast(&surfaces, &lidar_origin, &dir) {
                    Some((t, _, _, _)) if t > 1.0 - 1e-6 => {}
                    _ => continue,
                }
            }
            points.push(lidar_from_world.transform_point(&world));
            intensity.push(s.albedo(a, b) as f32);
        }
        clouds.push(PointCloud {
            points,
            intensity,
            timestamp: timestamps[i],
        });
    }

    // Dense analytic motion as a difference of two projections through the
    // exact egomotion, mirroring what the motion kernel computes; a static
    // step yields bitwise zero flow.
    let mut gt_fields = Vec::with_capacity(spec.frames - 1);
    for hits in &hit_maps[..spec.frames - 1] {
        let mut field = MotionField::empty(work_k.width, work_k.height);
        for y in 0..work_k.height {
            for x in 0..work_k.width {
                let idx = y as usize * work_k.width as usize + x as usize;
                let Some(p_cam) = hits[idx] else { continue };
                let Some((u1, v1, depth)) = work_k.project_point(&p_cam) else { continue };
                let p_next = ego_exact.transform_point(&p_cam);
                if p_next.z <= Z_MIN {
                    continue;
                }
                let Some((u2, v2, _)) = work_k.project_point(&p_next) else { continue };
                field.set(x, y, (u2 - u1) as f32, (v2 - v1) as f32, depth as f32);
            }
        }
        gt_fields.push(field);
    }

    Ok(SyntheticSequence {
        spec: spec.clone(),
        clean,
        frames,
        clouds,
        imu,
        imu_clean,
        timestamps,
        calib: Calibration {
            intrinsics: work_k,
            lidar_to_cam,
            imu_to_cam,
        },
        full_intrinsics: full_k,
        gt_fields,
        gt_egomotion,
    })
}

/// Area-weighted surface samples as `(surface index, a, b)`.
fn draw_surface_samples(
    surfaces: &[Surface],
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<(usize, f64, f64)> {
    let total_area: f64 = surfaces.iter().map(|s| s.area).sum();
    let mut cumulative = Vec::with_capacity(surfaces.len());
    let mut acc = 0.0;
    for s in surfaces {
        acc += s.area / total_area;
        cumulative.push(acc);
    }
    (0..count)
        .map(|_| {
            let pick: f64 = rng.random();
            let si = cumulative.partition_point(|&c| c < pick).min(surfaces.len() - 1);
            (si, rng.random::<f64>(), rng.random::<f64>())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egomotion::integrate_imu;
    use crate::motion::sparse_motion;

    #[test]
    fn static_trajectory_gives_identity_truth() {
        let spec = SyntheticSceneSpec {
            step_translation: [0.0, 0.0, 0.0],
            step_yaw: 0.0,
            step_pitch: 0.0,
            step_roll: 0.0,
            frames: 3,
            num_points: 500,
            width: 64,
            height: 48,
            focal: 60.0,
            ..SyntheticSceneSpec::corridor(7)
        };
        let seq = generate(&spec).unwrap();
        for est in &seq.gt_egomotion {
            assert!(est.transform.max_abs_diff(&RigidTransform::identity()) < 1e-12);
        }
        for field in &seq.gt_fields {
            assert!(field.density() > 0.99);
            for (_, _, du, dv, _) in field.valid_pixels() {
                assert_eq!((du, dv), (0.0, 0.0));
            }
        }
        assert_eq!(seq.clean[0], seq.clean[2]);
    }

    #[test]
    fn pure_x_translation_matches_pinhole_flow() {
        // A camera sliding along x sees a fronto-parallel wall move by
        // fx * dx / z everywhere on that wall.
        let tex = TextureSpec {
            base: 0.5,
            amplitude: 0.3,
            freq_u: 0.5,
            freq_v: 0.5,
            phase_u: 0.0,
            phase_v: 0.0,
        };
        let spec = SyntheticSceneSpec {
            primitives: vec![PrimitiveSpec::Quad {
                origin: [-50.0, -50.0, 20.0],
                edge_u: [100.0, 0.0, 0.0],
                edge_v: [0.0, 100.0, 0.0],
                texture: tex,
            }],
            step_translation: [0.5, 0.0, 0.0],
            step_yaw: 0.0,
            step_pitch: 0.0,
            step_roll: 0.0,
            frames: 2,
            num_points: 100,
            width: 64,
            height: 48,
            focal: 60.0,
            ..SyntheticSceneSpec::corridor(8)
        };
        let seq = generate(&spec).unwrap();
        let expected = -(60.0 * 0.5 / 20.0) as f32; // scene moves opposite
        for (_, _, du, dv, depth) in seq.gt_fields[0].valid_pixels() {
            assert!((du - expected).abs() < 1e-5, "du {du} vs {expected}");
            assert!(dv.abs() < 1e-5);
            assert!((depth - 20.0).abs() < 1e-4);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SyntheticSceneSpec {
            frames: 3,
            num_points: 400,
            width: 64,
            height: 48,
            focal: 60.0,
            noise_sigma: 0.03,
            imu_noise_velocity: 0.02,
            imu_noise_gyro: 0.002,
            ..SyntheticSceneSpec::default_scene(9)
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.frames[1].data(), b.frames[1].data());
        assert_eq!(a.clouds[1].points, b.clouds[1].points);
        assert_eq!(a.imu, b.imu);
        assert_eq!(a.gt_fields[0], b.gt_fields[0]);
        let c = generate(&SyntheticSceneSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.clouds[1].points, c.clouds[1].points);
    }

    #[test]
    fn imu_integration_recovers_exact_egomotion() {
        let spec = SyntheticSceneSpec {
            frames: 4,
            num_points: 200,
            width: 64,
            height: 48,
            focal: 60.0,
            ..SyntheticSceneSpec::default_scene(11)
        };
        let seq = generate(&spec).unwrap();
        for i in 0..3 {
            let est = integrate_imu(
                &seq.imu,
                seq.timestamps[i],
                seq.timestamps[i + 1],
                Some(&seq.calib.imu_to_cam),
            )
            .unwrap();
            let err = est.transform.max_abs_diff(&seq.gt_egomotion[i].transform);
            assert!(err < 1e-10, "step {i} error {err}");
        }
    }

    #[test]
    fn estimated_field_matches_truth_on_shared_pixels() {
        let spec = SyntheticSceneSpec {
            frames: 2,
            num_points: 4000,
            width: 96,
            height: 64,
            focal: 80.0,
            ..SyntheticSceneSpec::corridor(12)
        };
        let seq = generate(&spec).unwrap();
        let field = sparse_motion(
            &seq.clouds[0],
            &seq.calib.lidar_to_cam,
            &seq.gt_egomotion[0].transform,
            &seq.calib.intrinsics,
        );
        assert!(field.valid_count() > 200, "only {} pixels", field.valid_count());
        let report = crate::metrics::endpoint_error(&field, &seq.gt_fields[0]).unwrap();
        let epe = report.epe.unwrap();
        assert!(epe <= 0.5, "mean endpoint error {epe}");
    }

    #[test]
    fn spec_validation_rejects_bad_inputs() {
        let mut spec = SyntheticSceneSpec::default_scene(1);
        spec.frames = 1;
        assert!(matches!(generate(&spec), Err(DataError::InvalidSpec(_))));
        let mut spec = SyntheticSceneSpec::default_scene(1);
        spec.downsample = 5; // does not divide 192x128
        assert!(matches!(generate(&spec), Err(DataError::InvalidSpec(_))));
        let mut spec = SyntheticSceneSpec::default_scene(1);
        spec.num_points = 0;
        assert!(matches!(generate(&spec), Err(DataError::InvalidSpec(_))));
    }
}
