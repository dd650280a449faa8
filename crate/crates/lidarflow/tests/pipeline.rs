//! Cross-module pipeline tests on generated scenes: estimation variants
//! against ground truth, warping quality, fusion benefit, and the
//! checked-in fixtures.

use std::path::{Path, PathBuf};

use lidarflow::dataio::synthetic::{self, SyntheticSceneSpec};
use lidarflow::dataio::{kitti, load_kitti_sequence, read_field, read_flo, write_field, write_flo};
use lidarflow::egomotion::ImuPayload;
use lidarflow::enhance::{deblur_proxy, denoise_temporal, superres_shift_add, TaskKind};
use lidarflow::metrics::{endpoint_error, psnr, ssim};
use lidarflow::motion::{estimate, estimate_toward, MergeSpec, MotionField, PatchSpec, Variant};
use lidarflow::warp::{compensate, forward_warp, occlusion_mask, Image};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// PSNR restricted to a pixel mask.
fn masked_psnr(a: &Image, b: &Image, mask: &[bool]) -> f64 {
    let c = a.channels() as usize;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (p, &keep) in mask.iter().enumerate() {
        if keep {
            for ch in 0..c {
                let d = a.data()[p * c + ch] as f64 - b.data()[p * c + ch] as f64;
                sum += d * d;
                n += 1;
            }
        }
    }
    10.0 * (n as f64 / sum).log10()
}

fn mean_abs_error(a: &Image, b: &Image) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() as f64)
        .sum::<f64>()
        / a.data().len() as f64
}

#[test]
fn mini_fixture_parses_with_exact_values() {
    let manifest = load_kitti_sequence(&fixture("kitti_mini"), ImuPayload::Velocity).unwrap();
    assert_eq!(manifest.len(), 2);

    let cloud = manifest.load_cloud(0).unwrap();
    assert_eq!(cloud.len(), 4);
    assert_eq!(cloud.points[0], nalgebra::Point3::new(1.0, 2.0, 3.0));
    assert_eq!(cloud.intensity, vec![0.5, 0.25, 1.0, 0.0]);

    let img = manifest.load_image(0).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (8, 6, 1));
    // byte ramp (x + 8 y) * 5
    assert_eq!(img.get(0, 0, 0), 0.0);
    assert_eq!(img.get(3, 2, 0), 95.0 / 255.0);

    let k = manifest.calibration.intrinsics;
    assert_eq!((k.fx, k.fy, k.cx, k.cy), (100.0, 100.0, 4.0, 3.0));
    assert_eq!((k.width, k.height), (8, 6));

    // velocity payload picks columns 8..10, angular rates 20..22
    assert_eq!(manifest.imu[0].linear, nalgebra::Vector3::new(1.0, 0.1, -0.05));
    assert_eq!(manifest.imu[0].gyro, nalgebra::Vector3::new(0.01, 0.02, 0.03));
    assert!((manifest.frames[1].timestamp - manifest.frames[0].timestamp - 0.1).abs() < 1e-9);

    let accel = load_kitti_sequence(&fixture("kitti_mini"), ImuPayload::Acceleration).unwrap();
    assert_eq!(accel.imu[0].linear, nalgebra::Vector3::new(4.0, 5.0, 6.0));
}

#[test]
fn mini_fixture_calibration_composes_by_hand() {
    let manifest = load_kitti_sequence(&fixture("kitti_mini"), ImuPayload::Velocity).unwrap();
    // velo_to_cam is a z-rotation by 90 degrees plus (0.1, 0.2, 0.3);
    // imu_to_velo is a unit translation along x. The composition rotates
    // that offset into (0, 1, 0).
    let l2c = manifest.calibration.lidar_to_cam;
    let expected_r = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    assert!((l2c.rotation() - expected_r).norm() < 1e-12);
    assert!((l2c.translation() - nalgebra::Vector3::new(0.1, 0.2, 0.3)).norm() < 1e-12);

    let i2c = manifest.calibration.imu_to_cam;
    assert!((i2c.rotation() - expected_r).norm() < 1e-12);
    assert!((i2c.translation() - nalgebra::Vector3::new(0.1, 1.2, 0.3)).norm() < 1e-12);
}

#[test]
fn sequence_fixture_round_trips_cloud_bytes() {
    let root = fixture("kitti_seq");
    let manifest = load_kitti_sequence(&root, ImuPayload::Velocity).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for entry in &manifest.frames {
        let cloud = kitti::read_velodyne(&entry.cloud_path, entry.timestamp).unwrap();
        let out = dir.path().join("re.bin");
        kitti::write_velodyne(&cloud, &out).unwrap();
        assert_eq!(
            std::fs::read(&entry.cloud_path).unwrap(),
            std::fs::read(&out).unwrap(),
            "cloud {} changed through parse + re-emit",
            entry.cloud_path.display()
        );
    }
}

#[test]
fn static_scene_gives_zero_motion_for_every_variant() {
    let spec = SyntheticSceneSpec {
        step_translation: [0.0, 0.0, 0.0],
        step_yaw: 0.0,
        step_pitch: 0.0,
        step_roll: 0.0,
        frames: 3,
        num_points: 1500,
        width: 96,
        height: 64,
        focal: 80.0,
        resample_clouds: false,
        ..SyntheticSceneSpec::corridor(200)
    };
    let seq = synthetic::generate(&spec).unwrap();
    for variant in [Variant::SpcImu, Variant::SpcR, Variant::MpcImu] {
        let field = estimate(
            &seq.frame_window(0),
            variant,
            MergeSpec::new(3).unwrap(),
            PatchSpec::none(),
        )
        .unwrap();
        assert!(field.valid_count() > 50);
        for (_, _, du, dv, _) in field.valid_pixels() {
            assert!(
                du.abs() < 1e-6 && dv.abs() < 1e-6,
                "{variant:?} motion ({du}, {dv}) on a static scene"
            );
        }
    }
}

#[test]
fn merged_variant_is_denser_than_single() {
    let seq = synthetic::generate(&SyntheticSceneSpec {
        frames: 9,
        ..SyntheticSceneSpec::default_scene(201)
    })
    .unwrap();
    let window = seq.frame_window(4);
    let patch = PatchSpec::new(3).unwrap();
    let single = estimate(&window, Variant::SpcImu, MergeSpec::single(), patch).unwrap();
    let merged = estimate(&window, Variant::MpcImu, MergeSpec::default(), patch).unwrap();
    assert!(
        merged.density() >= single.density(),
        "merged {} vs single {}",
        merged.density(),
        single.density()
    );
}

#[test]
fn registration_beats_noisy_imu_on_endpoint_error() {
    let spec = SyntheticSceneSpec {
        frames: 3,
        num_points: 3000,
        width: 96,
        height: 64,
        focal: 80.0,
        imu_samples_per_frame: 3,
        imu_noise_velocity: 3.0,
        imu_noise_gyro: 0.12,
        resample_clouds: false,
        ..SyntheticSceneSpec::corridor(202)
    };
    let seq = synthetic::generate(&spec).unwrap();
    let window = seq.frame_window(0);
    let gt = &seq.gt_fields[0];
    let epe = |variant: Variant| {
        let field = estimate(&window, variant, MergeSpec::single(), PatchSpec::none()).unwrap();
        endpoint_error(&field, gt).unwrap().epe.unwrap()
    };
    let epe_imu = epe(Variant::SpcImu);
    let epe_icp = epe(Variant::SpcR);
    assert!(
        epe_icp <= epe_imu,
        "registration EPE {epe_icp} vs noisy-IMU EPE {epe_imu}"
    );
    // The noise injection must actually hurt for this to mean anything.
    assert!(epe_imu > 0.5, "IMU noise too benign: {epe_imu}");
    assert!(epe_icp < 0.5, "registration unexpectedly poor: {epe_icp}");
}

#[test]
fn dense_exact_field_warps_close_to_the_next_frame() {
    let seq = synthetic::generate(&SyntheticSceneSpec {
        frames: 2,
        num_points: 4000,
        width: 128,
        height: 96,
        focal: 110.0,
        ..SyntheticSceneSpec::corridor(203)
    })
    .unwrap();
    let warped = forward_warp(&seq.frames[0], &seq.gt_fields[0]).unwrap();
    let unaligned = masked_psnr(&seq.frames[0], &seq.frames[1], &warped.coverage);
    let aligned = masked_psnr(&warped.image, &seq.frames[1], &warped.coverage);
    assert!(
        aligned > unaligned + 3.0,
        "warped {aligned:.2} dB vs unwarped {unaligned:.2} dB"
    );
}

#[test]
fn compensation_reduces_mean_error_with_estimated_motion() {
    let seq = synthetic::generate(&SyntheticSceneSpec {
        frames: 9,
        ..SyntheticSceneSpec::default_scene(204)
    })
    .unwrap();
    let window = seq.frame_window(4);
    let field = estimate(
        &window,
        Variant::MpcImu,
        MergeSpec::default(),
        PatchSpec::new(7).unwrap(),
    )
    .unwrap();
    let compensated = compensate(&seq.frames[4], &field, &seq.frames[4]).unwrap();
    let before = mean_abs_error(&seq.frames[4], &seq.frames[5]);
    let after = mean_abs_error(&compensated, &seq.frames[5]);
    assert!(after < before, "MAE {after} not below {before}");
}

#[test]
fn occlusion_mask_matches_collision_count_on_synthetic_field() {
    let seq = synthetic::generate(&SyntheticSceneSpec {
        frames: 2,
        num_points: 6000,
        ..SyntheticSceneSpec::default_scene(205)
    })
    .unwrap();
    let field = &seq.gt_fields[0];
    let mask = occlusion_mask(field);
    // Independent collision counter.
    let (w, h) = (field.width() as i64, field.height() as i64);
    let mut hits = vec![0u32; (w * h) as usize];
    for (x, y, du, dv, _) in field.valid_pixels() {
        let dx = (x as f64 + du as f64).round() as i64;
        let dy = (y as f64 + dv as f64).round() as i64;
        if dx >= 0 && dy >= 0 && dx < w && dy < h {
            hits[(dy * w + dx) as usize] += 1;
        }
    }
    let expect: Vec<bool> = hits.iter().map(|&c| c >= 2).collect();
    assert_eq!(mask, expect);
    assert!(mask.iter().any(|&m| m), "moving scene should produce collisions");
}

/// Build per-neighbor fields toward `target` and run one fusion task.
fn fuse(
    seq: &synthetic::SyntheticSequence,
    task: TaskKind,
    target: usize,
    window: usize,
    patch: PatchSpec,
    sr_factor: u32,
    zero_motion: bool,
) -> Image {
    let h = window / 2;
    let mut frames = Vec::new();
    let mut fields = Vec::new();
    for j in target - h..=target + h {
        frames.push(seq.frames[j].clone());
        if j == target {
            fields.push(MotionField::empty(
                seq.calib.intrinsics.width,
                seq.calib.intrinsics.height,
            ));
            continue;
        }
        let field = if zero_motion {
            let mut f = MotionField::empty(seq.calib.intrinsics.width, seq.calib.intrinsics.height);
            for y in 0..f.height() {
                for x in 0..f.width() {
                    f.set(x, y, 0.0, 0.0, 1.0);
                }
            }
            f
        } else {
            let w = seq.frame_window(j);
            estimate_toward(&w, target, Variant::MpcImu, MergeSpec::default(), patch).unwrap()
        };
        fields.push(field);
    }
    let center = h;
    match task {
        TaskKind::Denoise => denoise_temporal(&frames, &fields, center).unwrap(),
        TaskKind::Superres => superres_shift_add(&frames, &fields, center, sr_factor).unwrap(),
        TaskKind::DeblurProxy => deblur_proxy(&frames, &fields, center).unwrap(),
    }
}

#[test]
fn denoise_gains_over_noisy_input_by_4db() {
    let spec = SyntheticSceneSpec {
        frames: 9,
        num_points: 14000,
        width: 128,
        height: 96,
        focal: 110.0,
        noise_sigma: 0.15,
        step_translation: [0.006, 0.0015, 0.18],
        step_yaw: 0.0018,
        step_pitch: 0.0006,
        step_roll: 0.0003,
        ..SyntheticSceneSpec::default_scene(206)
    };
    let seq = synthetic::generate(&spec).unwrap();
    let target = 4;
    let out = fuse(&seq, TaskKind::Denoise, target, 7, PatchSpec::new(7).unwrap(), 1, false);
    let noisy = psnr(&seq.frames[target], &seq.clean[target]).unwrap();
    let fused = psnr(&out, &seq.clean[target]).unwrap();
    assert!(
        fused >= noisy + 4.0,
        "denoise {fused:.2} dB vs noisy input {noisy:.2} dB"
    );
}

#[test]
fn superres_with_motion_beats_zero_motion() {
    let spec = SyntheticSceneSpec {
        frames: 7,
        num_points: 14000,
        width: 128,
        height: 96,
        focal: 110.0,
        downsample: 2,
        step_translation: [0.012, 0.003, 0.3],
        step_yaw: 0.003,
        step_pitch: 0.001,
        step_roll: 0.0005,
        ..SyntheticSceneSpec::default_scene(207)
    };
    let seq = synthetic::generate(&spec).unwrap();
    let target = 3;
    let patch = PatchSpec::new(3).unwrap();
    let est = fuse(&seq, TaskKind::Superres, target, 5, patch, 2, false);
    let zero = fuse(&seq, TaskKind::Superres, target, 5, patch, 2, true);
    let p_est = psnr(&est, &seq.clean[target]).unwrap();
    let p_zero = psnr(&zero, &seq.clean[target]).unwrap();
    let s_est = ssim(&est, &seq.clean[target]).unwrap();
    let s_zero = ssim(&zero, &seq.clean[target]).unwrap();
    assert!(p_est >= p_zero, "superres psnr {p_est:.2} vs zero-motion {p_zero:.2}");
    assert!(s_est >= s_zero, "superres ssim {s_est:.4} vs zero-motion {s_zero:.4}");
}

#[test]
fn deblur_with_motion_beats_zero_motion() {
    let spec = SyntheticSceneSpec {
        frames: 7,
        num_points: 14000,
        width: 128,
        height: 96,
        focal: 110.0,
        blur_sigma: 1.6,
        step_translation: [0.012, 0.003, 0.3],
        step_yaw: 0.003,
        step_pitch: 0.001,
        step_roll: 0.0005,
        ..SyntheticSceneSpec::default_scene(208)
    };
    let seq = synthetic::generate(&spec).unwrap();
    // Frame 3 carries the full blur in the cycle; neighbors 4 (none) and
    // 2, 5 (half) are sharper.
    let target = 3;
    let patch = PatchSpec::new(7).unwrap();
    let est = fuse(&seq, TaskKind::DeblurProxy, target, 5, patch, 1, false);
    let zero = fuse(&seq, TaskKind::DeblurProxy, target, 5, patch, 1, true);
    let p_est = psnr(&est, &seq.clean[target]).unwrap();
    let p_zero = psnr(&zero, &seq.clean[target]).unwrap();
    assert!(p_est >= p_zero, "deblur psnr {p_est:.2} vs zero-motion {p_zero:.2}");
}

#[test]
fn field_files_round_trip_on_estimated_data() {
    let seq = synthetic::generate(&SyntheticSceneSpec {
        frames: 2,
        num_points: 2000,
        width: 96,
        height: 64,
        focal: 80.0,
        ..SyntheticSceneSpec::default_scene(209)
    })
    .unwrap();
    let field = estimate(
        &seq.frame_window(0),
        Variant::SpcImu,
        MergeSpec::single(),
        PatchSpec::new(3).unwrap(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let native = dir.path().join("field.lfmf");
    write_field(&field, &native).unwrap();
    assert_eq!(read_field(&native).unwrap(), field);
    let flo = dir.path().join("field.flo");
    write_flo(&field, &flo).unwrap();
    let back = read_flo(&flo).unwrap();
    assert_eq!(back.valid_mask(), field.valid_mask());
    assert_eq!(back.du_plane(), field.du_plane());
    assert_eq!(back.dv_plane(), field.dv_plane());
}
