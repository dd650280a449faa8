//! End-to-end tests of the command-line surface: every subcommand, the
//! documented exit codes, and the cross-command consistency promises.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lidarflow"))
}

fn fixture_seq() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../lidarflow/tests/fixtures/kitti_seq")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn csv_column(path: &Path, column: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == column).unwrap();
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').nth(idx).unwrap().parse::<f64>().unwrap())
        .collect()
}

fn write_spec(dir: &Path, name: &str, edits: &[(&str, serde_json::Value)]) -> PathBuf {
    let emit = run(&["synth", "--emit-spec"]);
    assert_ok(&emit);
    let mut spec: serde_json::Value =
        serde_json::from_slice(&emit.stdout).expect("emitted spec parses");
    for (key, value) in edits {
        spec[key] = value.clone();
    }
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    path
}

#[test]
fn estimate_writes_fields_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fields");
    let result = run(&[
        "estimate",
        "--input",
        fixture_seq().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--variant",
        "mpc+imu",
        "--clouds",
        "5",
        "--patch",
        "3",
        "--flo",
    ]);
    assert_ok(&result);
    assert!(out.join("field_000000.lfmf").exists());
    assert!(out.join("field_000000.flo").exists());
    let densities = csv_column(&out.join("summary.csv"), "density");
    assert_eq!(densities.len(), 8);
    assert!(densities.iter().all(|d| *d > 0.0 && *d <= 1.0));
    let runtimes = csv_column(&out.join("summary.csv"), "runtime_us");
    assert!(runtimes.iter().all(|r| *r > 0.0), "kernel time must be reported");
}

#[test]
fn missing_input_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let result = run(&[
        "estimate",
        "--input",
        "/definitely/not/here",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("/definitely/not/here"), "stderr names the path: {stderr}");
}

#[test]
fn invalid_flags_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let result = run(&[
        "estimate",
        "--input",
        fixture_seq().to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--clouds",
        "4",
    ]);
    assert_eq!(result.status.code(), Some(2));
    // clap's own usage errors also use 2
    let result = run(&["sweep", "--input", "x", "--out", "y"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let result = run(&["synth", "--out", out.to_str().unwrap(), "--seed", "9"]);
        assert_ok(&result);
    }
    // Same seed, bit-identical trees.
    let mut files: Vec<PathBuf> = walk(&a);
    files.sort();
    assert!(files.len() > 10);
    for f in files {
        let rel = f.strip_prefix(&a).unwrap();
        assert_eq!(
            std::fs::read(&f).unwrap(),
            std::fs::read(b.join(rel)).unwrap(),
            "{} differs between identical-seed runs",
            rel.display()
        );
    }
    // And the produced layout feeds straight back into estimation.
    let out = dir.path().join("fields");
    let result = run(&[
        "estimate",
        "--input",
        a.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&result);
}

fn walk(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out
}

#[test]
fn synth_rejects_invalid_spec_with_code_5() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "bad.json", &[("frames", serde_json::json!(1))]);
    let result = run(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(5));
}

#[test]
fn warp_identity_motion_reproduces_input_frames() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "static.json",
        &[
            ("frames", serde_json::json!(3)),
            ("num_points", serde_json::json!(1500)),
            ("width", serde_json::json!(96)),
            ("height", serde_json::json!(64)),
            ("focal", serde_json::json!(80.0)),
            ("step_translation", serde_json::json!([0.0, 0.0, 0.0])),
            ("step_yaw", serde_json::json!(0.0)),
            ("step_pitch", serde_json::json!(0.0)),
            ("step_roll", serde_json::json!(0.0)),
        ],
    );
    let data = dir.path().join("data");
    assert_ok(&run(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]));
    let out = dir.path().join("warp");
    assert_ok(&run(&[
        "warp",
        "--input",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--frame",
        "1",
    ]));
    // Identity motion: wherever a LiDAR point landed, the warped frame is
    // the input frame; everywhere else it is the documented hole value.
    let original = lidarflow::dataio::read_image(&data.join("image_02/data/0000000001.png")).unwrap();
    let warped = lidarflow::dataio::read_image(&out.join("frame_000001_single.png")).unwrap();
    let mask = lidarflow::dataio::read_image(&out.join("frame_000001_single_coverage.png")).unwrap();
    let mut covered = 0;
    for y in 0..original.height() {
        for x in 0..original.width() {
            if mask.get(x, y, 0) > 0.5 {
                assert_eq!(warped.get(x, y, 0), original.get(x, y, 0), "pixel {x},{y}");
                covered += 1;
            } else {
                assert_eq!(warped.get(x, y, 0), 0.0, "hole {x},{y} must be black");
            }
        }
    }
    assert!(covered > 100, "suspiciously low coverage: {covered}");

    // With identity motion nothing exits the frame, so the reported
    // coverage fraction equals the field density exactly.
    let text = std::fs::read_to_string(out.join("coverage.csv")).unwrap();
    let single = text.lines().find(|l| l.contains(",single,")).unwrap();
    let cols: Vec<&str> = single.split(',').collect();
    assert_eq!(cols[2], cols[3], "density vs coverage: {single}");
}

#[test]
fn estimate_on_static_sequence_yields_zero_motion() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "static.json",
        &[
            ("frames", serde_json::json!(3)),
            ("num_points", serde_json::json!(1200)),
            ("width", serde_json::json!(96)),
            ("height", serde_json::json!(64)),
            ("focal", serde_json::json!(80.0)),
            ("step_translation", serde_json::json!([0.0, 0.0, 0.0])),
            ("step_yaw", serde_json::json!(0.0)),
            ("step_pitch", serde_json::json!(0.0)),
            ("step_roll", serde_json::json!(0.0)),
        ],
    );
    let out = dir.path().join("fields");
    assert_ok(&run(&[
        "estimate",
        "--input",
        spec.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--variant",
        "spc+imu",
        "--patch",
        "1",
    ]));
    let field = lidarflow::dataio::read_field(&out.join("field_000000.lfmf")).unwrap();
    assert!(field.valid_count() > 50);
    for (_, _, du, dv, _) in field.valid_pixels() {
        assert!(du.abs() < 1e-6 && dv.abs() < 1e-6, "motion ({du}, {dv})");
    }
}

#[test]
fn warp_coverage_grows_with_merging() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("warp");
    assert_ok(&run(&[
        "warp",
        "--input",
        fixture_seq().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--frame",
        "4",
    ]));
    let text = std::fs::read_to_string(out.join("coverage.csv")).unwrap();
    let coverage_of = |mode: &str| -> f64 {
        text.lines()
            .find(|l| l.contains(&format!(",{mode},")))
            .unwrap()
            .split(',')
            .nth(3)
            .unwrap()
            .parse()
            .unwrap()
    };
    let single = coverage_of("single");
    let merged = coverage_of("merged");
    let patched = coverage_of("patched");
    assert!(merged > single, "merged {merged} vs single {single}");
    assert!(patched > merged, "patched {patched} vs merged {merged}");
}

#[test]
fn enhance_window_one_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "noisy.json",
        &[
            ("frames", serde_json::json!(3)),
            ("num_points", serde_json::json!(800)),
            ("width", serde_json::json!(96)),
            ("height", serde_json::json!(64)),
            ("focal", serde_json::json!(80.0)),
            ("noise_sigma", serde_json::json!(0.05)),
        ],
    );
    let data = dir.path().join("data");
    assert_ok(&run(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]));
    let out = dir.path().join("enh");
    assert_ok(&run(&[
        "enhance",
        "--input",
        data.to_str().unwrap(),
        "--task",
        "denoise",
        "--window",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]));
    let original = std::fs::read(data.join("image_02/data/0000000001.png")).unwrap();
    let enhanced = std::fs::read(out.join("enhanced_000001.png")).unwrap();
    assert_eq!(original, enhanced);
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[test]
fn enhance_beats_noisy_input_and_zero_motion() {
    let dir = tempfile::tempdir().unwrap();
    let edits = [
        ("frames", serde_json::json!(9)),
        ("num_points", serde_json::json!(14000)),
        ("width", serde_json::json!(128)),
        ("height", serde_json::json!(96)),
        ("focal", serde_json::json!(110.0)),
        ("noise_sigma", serde_json::json!(0.15)),
        ("step_translation", serde_json::json!([0.006, 0.0015, 0.18])),
        ("step_yaw", serde_json::json!(0.0018)),
        ("step_pitch", serde_json::json!(0.0006)),
        ("step_roll", serde_json::json!(0.0003)),
    ];
    let spec = write_spec(dir.path(), "noisy.json", &edits);

    let enhanced = dir.path().join("enh");
    assert_ok(&run(&[
        "enhance",
        "--input",
        spec.to_str().unwrap(),
        "--task",
        "denoise",
        "--window",
        "7",
        "--patch",
        "7",
        "--out",
        enhanced.to_str().unwrap(),
    ]));
    let zero = dir.path().join("enh_zero");
    assert_ok(&run(&[
        "enhance",
        "--input",
        spec.to_str().unwrap(),
        "--task",
        "denoise",
        "--window",
        "7",
        "--patch",
        "7",
        "--zero-motion",
        "--out",
        zero.to_str().unwrap(),
    ]));
    let psnr_est = mean(&csv_column(&enhanced.join("quality.csv"), "psnr_db"));
    let psnr_zero = mean(&csv_column(&zero.join("quality.csv"), "psnr_db"));
    assert!(psnr_est >= psnr_zero, "estimated {psnr_est:.2} vs zero-motion {psnr_zero:.2}");

    // Noisy-input quality measured from files alone: synth the same spec
    // and eval the degraded frames against the dumped clean references.
    let data = dir.path().join("data");
    assert_ok(&run(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]));
    let eval_csv = dir.path().join("noisy.csv");
    assert_ok(&run(&[
        "eval",
        "--reference",
        data.join("clean").to_str().unwrap(),
        "--test",
        data.join("image_02/data").to_str().unwrap(),
        "--out",
        eval_csv.to_str().unwrap(),
    ]));
    let psnr_noisy = mean(&csv_column(&eval_csv, "psnr_db"));
    assert!(
        psnr_est >= psnr_noisy + 4.0,
        "denoise {psnr_est:.2} dB vs noisy input {psnr_noisy:.2} dB"
    );
}

#[test]
fn sweep_density_is_monotone_and_matches_enhance() {
    let dir = tempfile::tempdir().unwrap();
    let edits = [
        ("frames", serde_json::json!(7)),
        ("num_points", serde_json::json!(3000)),
        ("width", serde_json::json!(96)),
        ("height", serde_json::json!(64)),
        ("focal", serde_json::json!(80.0)),
        ("noise_sigma", serde_json::json!(0.1)),
    ];
    let spec = write_spec(dir.path(), "sweep.json", &edits);
    let clouds_csv = dir.path().join("clouds.csv");
    assert_ok(&run(&[
        "sweep",
        "--input",
        spec.to_str().unwrap(),
        "--axis",
        "clouds",
        "--task",
        "denoise",
        "--out",
        clouds_csv.to_str().unwrap(),
    ]));
    let density = csv_column(&clouds_csv, "density");
    assert_eq!(density.len(), 4);
    for pair in density.windows(2) {
        assert!(pair[1] > pair[0], "sweep density not strictly increasing: {density:?}");
    }

    // The patch sweep's first entry equals a plain enhance run at k = 1.
    let patch_csv = dir.path().join("patch.csv");
    assert_ok(&run(&[
        "sweep",
        "--input",
        spec.to_str().unwrap(),
        "--axis",
        "patch",
        "--task",
        "denoise",
        "--out",
        patch_csv.to_str().unwrap(),
    ]));
    let sweep_psnr = csv_column(&patch_csv, "psnr_db")[0];
    let enh = dir.path().join("enh_k1");
    assert_ok(&run(&[
        "enhance",
        "--input",
        spec.to_str().unwrap(),
        "--task",
        "denoise",
        "--patch",
        "1",
        "--out",
        enh.to_str().unwrap(),
    ]));
    let enhance_psnr = mean(&csv_column(&enh.join("quality.csv"), "psnr_db"));
    assert!(
        (sweep_psnr - enhance_psnr).abs() < 1e-6,
        "sweep k=1 {sweep_psnr} vs enhance {enhance_psnr}"
    );
}

#[test]
fn eval_identical_directories_report_infinite_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_ok(&run(&["synth", "--out", data.to_str().unwrap(), "--seed", "3"]));
    let csv = dir.path().join("eval.csv");
    let images = data.join("image_02/data");
    assert_ok(&run(&[
        "eval",
        "--reference",
        images.to_str().unwrap(),
        "--test",
        images.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    for line in text.lines().skip(1) {
        assert!(line.split(',').nth(1).unwrap() == "inf", "expected inf psnr: {line}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "clouds = 4\n").unwrap(); // even: invalid
    // Config alone is rejected...
    let result = run(&[
        "estimate",
        "--input",
        fixture_seq().to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--config",
        conf.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    // ...but an explicit flag wins over the file.
    let result = run(&[
        "estimate",
        "--input",
        fixture_seq().to_str().unwrap(),
        "--out",
        dir.path().join("y").to_str().unwrap(),
        "--config",
        conf.to_str().unwrap(),
        "--clouds",
        "3",
    ]);
    assert_ok(&result);
}
