//! Pipeline driver around the lidarflow library.
//!
//! Subcommands: `estimate` (motion fields to LFMF/flow files), `warp`
//! (forward-warped frame triplets), `enhance` (motion-compensated fusion),
//! `sweep` (patch/cloud sensitivity tables), `synth` (synthetic dataset in
//! the KITTI raw layout), `eval` (image-sequence quality reports).
//!
//! Inputs are either a KITTI raw directory or a synthetic scene spec
//! (`.json`), generated in memory. All outputs are files written atomically
//! (temp + rename); diagnostics go to stderr. Exit codes: 0 success,
//! 2 usage/config, 3 missing input, 4 malformed data, 5 invalid
//! spec/dimensions, 1 anything else.

mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lidarflow::dataio::{
    self, kitti, read_image, synthetic, write_field, write_flo, write_image, Calibration,
    DataError, SyntheticSceneSpec,
};
use lidarflow::egomotion::{EgomotionError, ImuPayload, ImuRecord};
use lidarflow::enhance::{deblur_proxy, denoise_temporal, superres_shift_add, TaskKind};
use lidarflow::metrics::{psnr, ssim, QualityReport};
use lidarflow::motion::{estimate_toward, MergeSpec, MotionError, MotionField, PatchSpec, Variant};
use lidarflow::warp::{forward_warp, Image};
use lidarflow::{FrameWindow, PointCloud};

use config::ConfigFile;

#[derive(Parser)]
#[command(name = "lidarflow", version, about = "LiDAR-guided motion fields for video enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    #[value(name = "spc+imu", alias = "spc_imu")]
    SpcImu,
    #[value(name = "spc+r", alias = "spc_r")]
    SpcR,
    #[value(name = "mpc+imu", alias = "mpc_imu")]
    MpcImu,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::SpcImu => Variant::SpcImu,
            VariantArg::SpcR => Variant::SpcR,
            VariantArg::MpcImu => Variant::MpcImu,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Denoise,
    Superres,
    Deblur,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Denoise => TaskKind::Denoise,
            TaskArg::Superres => TaskKind::Superres,
            TaskArg::Deblur => TaskKind::DeblurProxy,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    Patch,
    Clouds,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PayloadArg {
    Velocity,
    Acceleration,
}

/// Options shared by the pipeline commands; unset values fall back to the
/// config file, then to defaults.
#[derive(Args, Clone)]
struct PipelineOpts {
    /// KITTI raw directory or synthetic scene spec (.json)
    #[arg(long)]
    input: PathBuf,
    /// Output directory (or file for sweep)
    #[arg(long)]
    out: PathBuf,
    /// key = value config file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pipeline variant
    #[arg(long)]
    variant: Option<VariantArg>,
    /// Merged clouds (odd)
    #[arg(long)]
    clouds: Option<usize>,
    /// Patch duplication side (odd); defaults to the task's patch
    #[arg(long)]
    patch: Option<usize>,
    /// Fusion window (odd)
    #[arg(long)]
    window: Option<usize>,
    /// Super-resolution factor
    #[arg(long)]
    sr_factor: Option<u32>,
    /// Worker threads for frame-level parallelism
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed override for synthetic inputs
    #[arg(long)]
    seed: Option<u64>,
    /// IMU linear channel when reading OXTS records
    #[arg(long)]
    payload: Option<PayloadArg>,
    /// KITTI camera index
    #[arg(long)]
    camera: Option<u8>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate motion fields for every consecutive frame pair
    Estimate {
        #[command(flatten)]
        opts: PipelineOpts,
        /// Also export standard .flo files next to the native containers
        #[arg(long)]
        flo: bool,
    },
    /// Forward-warp each frame toward its successor with single, merged
    /// and merged+patched fields
    Warp {
        #[command(flatten)]
        opts: PipelineOpts,
        /// Only this frame index
        #[arg(long)]
        frame: Option<usize>,
    },
    /// Motion-compensated enhancement over a sliding window
    Enhance {
        #[command(flatten)]
        opts: PipelineOpts,
        /// Fusion backend
        #[arg(long)]
        task: Option<TaskArg>,
        /// Replace estimated motion with zero fields (baseline)
        #[arg(long)]
        zero_motion: bool,
    },
    /// Sensitivity sweep over patch size or merged-cloud count
    Sweep {
        #[command(flatten)]
        opts: PipelineOpts,
        #[arg(long)]
        axis: AxisArg,
        #[arg(long)]
        task: Option<TaskArg>,
    },
    /// Generate a synthetic dataset in the KITTI raw layout
    Synth {
        /// Scene spec (.json); omit for the built-in default scene
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory (required unless --emit-spec)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override
        #[arg(long)]
        seed: Option<u64>,
        /// Print the default spec as JSON to stdout and exit
        #[arg(long)]
        emit_spec: bool,
    },
    /// PSNR/SSIM between two image directories, paired by sorted name
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(error_code(&err));
        }
    }
}

fn error_code(err: &anyhow::Error) -> i32 {
    if let Some(data) = err.downcast_ref::<DataError>() {
        return match data {
            DataError::MissingFile(_) => 3,
            DataError::MalformedRecord { .. }
            | DataError::CalibrationParseError { .. }
            | DataError::DecodeError { .. } => 4,
            DataError::InvalidSpec(_) => 5,
            DataError::Io { .. } => 1,
        };
    }
    if let Some(motion) = err.downcast_ref::<MotionError>() {
        return match motion {
            MotionError::Egomotion(_) => 4,
            _ => 5,
        };
    }
    if err.downcast_ref::<EgomotionError>().is_some() {
        return 4;
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    1
}

/// Marker for configuration/usage problems so they exit with code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

/// Resolved run parameters after flag/config/default merging.
#[derive(Clone)]
struct RunConfig {
    variant: Variant,
    merge: MergeSpec,
    patch: PatchSpec,
    window: usize,
    sr_factor: u32,
    jobs: usize,
    seed: Option<u64>,
    payload: ImuPayload,
    camera: u8,
}

impl RunConfig {
    fn resolve(opts: &PipelineOpts, task: Option<TaskKind>) -> Result<Self> {
        let file = ConfigFile::load(opts.config.as_deref())?;
        let variant_raw = file.resolve(
            opts.variant.map(|v| Variant::from(v).label().to_string()),
            "variant",
            "MPC+IMU".to_string(),
        )?;
        let variant = Variant::parse(&variant_raw)
            .ok_or_else(|| usage(format!("unknown variant {variant_raw:?}")))?;
        let clouds = file.resolve(opts.clouds, "clouds", 5)?;
        let default_patch = task.map(|t| t.default_patch()).unwrap_or(3);
        let patch = file.resolve(opts.patch, "patch", default_patch)?;
        let window = file.resolve(opts.window, "window", 5)?;
        let sr_factor = file.resolve(opts.sr_factor, "sr_factor", 2)?;
        let jobs = file.resolve(opts.jobs, "jobs", 0)?;
        let seed = file.resolve_opt(opts.seed, "seed")?;
        let payload = match file.resolve(
            opts.payload.map(|p| match p {
                PayloadArg::Velocity => "velocity".to_string(),
                PayloadArg::Acceleration => "acceleration".to_string(),
            }),
            "payload",
            "velocity".to_string(),
        )? {
            s if s.eq_ignore_ascii_case("velocity") => ImuPayload::Velocity,
            s if s.eq_ignore_ascii_case("acceleration") => ImuPayload::Acceleration,
            s => return Err(usage(format!("unknown payload {s:?}"))),
        };
        let camera = file.resolve(opts.camera, "camera", 2)?;

        let merge = MergeSpec::new(clouds)
            .ok_or_else(|| usage(format!("clouds must be odd, got {clouds}")))?;
        let patch = PatchSpec::new(patch)
            .ok_or_else(|| usage(format!("patch must be odd, got {patch}")))?;
        if window % 2 == 0 {
            return Err(usage(format!("window must be odd, got {window}")));
        }
        if sr_factor == 0 {
            return Err(usage("sr_factor must be at least 1"));
        }
        Ok(Self {
            variant,
            merge,
            patch,
            window,
            sr_factor,
            jobs,
            seed,
            payload,
            camera,
        })
    }

    fn init_parallelism(&self) {
        #[cfg(feature = "parallel")]
        if self.jobs > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build_global()
            {
                log::warn!("could not size thread pool: {e}");
            }
        }
        #[cfg(not(feature = "parallel"))]
        if self.jobs > 0 {
            log::warn!("built without the parallel feature; --jobs is ignored");
        }
    }
}

/// A fully loaded input sequence, either from disk or generated.
struct Sequence {
    images: Vec<Image>,
    clouds: Vec<PointCloud>,
    timestamps: Vec<f64>,
    imu: Vec<ImuRecord>,
    calib: Calibration,
    /// Clean reference frames when the input is synthetic.
    reference: Option<Vec<Image>>,
}

impl Sequence {
    fn window(&self, center: usize) -> FrameWindow<'_> {
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

    fn len(&self) -> usize {
        self.images.len()
    }
}

fn load_input(path: &Path, cfg: &RunConfig) -> Result<Sequence> {
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let text = std::fs::read_to_string(path)
            .map_err(|_| anyhow!(DataError::MissingFile(path.to_path_buf())))?;
        let mut spec: SyntheticSceneSpec = serde_json::from_str(&text)
            .map_err(|e| anyhow!(DataError::InvalidSpec(e.to_string())))?;
        if let Some(seed) = cfg.seed {
            spec.seed = seed;
        }
        let seq = synthetic::generate(&spec)?;
        Ok(Sequence {
            images: seq.frames,
            clouds: seq.clouds,
            timestamps: seq.timestamps,
            imu: seq.imu,
            calib: seq.calib,
            reference: Some(seq.clean),
        })
    } else {
        let manifest = kitti::load_sequence_camera(path, cfg.payload, cfg.camera)?;
        let mut images = Vec::with_capacity(manifest.len());
        let mut clouds = Vec::with_capacity(manifest.len());
        for i in 0..manifest.len() {
            images.push(manifest.load_image(i)?);
            clouds.push(manifest.load_cloud(i)?);
        }
        Ok(Sequence {
            images,
            clouds,
            timestamps: manifest.timestamps(),
            imu: manifest.imu.clone(),
            calib: manifest.calibration,
            reference: None,
        })
    }
}

fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn map_frames<T: Send>(
    indices: Vec<usize>,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        indices.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    indices.into_iter().map(f).collect()
}

/// Concatenate same-shaped images horizontally with a 2-pixel white gap.
fn horizontal_strip(images: &[Image]) -> Image {
    let gap = 2u32;
    let (w, h, c) = (images[0].width(), images[0].height(), images[0].channels());
    let total = w * images.len() as u32 + gap * (images.len() as u32 - 1);
    Image::from_fn(total, h, c, |x, y, ch| {
        let slot = (x / (w + gap)) as usize;
        let local = x % (w + gap);
        if local >= w || slot >= images.len() {
            1.0
        } else {
            images[slot].get(local, y, ch)
        }
    })
}

fn full_zero_field(width: u32, height: u32) -> MotionField {
    let mut f = MotionField::empty(width, height);
    for y in 0..height {
        for x in 0..width {
            f.set(x, y, 0.0, 0.0, 1.0);
        }
    }
    f
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate { opts, flo } => cmd_estimate(&opts, flo),
        Command::Warp { opts, frame } => cmd_warp(&opts, frame),
        Command::Enhance { opts, task, zero_motion } => cmd_enhance(&opts, task, zero_motion),
        Command::Sweep { opts, axis, task } => cmd_sweep(&opts, axis, task),
        Command::Synth { spec, out, seed, emit_spec } => {
            cmd_synth(spec.as_deref(), out.as_deref(), seed, emit_spec)
        }
        Command::Eval { reference, test, out } => cmd_eval(&reference, &test, &out),
    }
}

fn cmd_estimate(opts: &PipelineOpts, flo: bool) -> Result<()> {
    let cfg = RunConfig::resolve(opts, None)?;
    cfg.init_parallelism();
    let seq = load_input(&opts.input, &cfg)?;
    if seq.len() < 2 {
        bail!(usage("need at least two frames to estimate motion"));
    }
    std::fs::create_dir_all(&opts.out)?;
    let results = map_frames((0..seq.len() - 1).collect(), |i| {
        let started = Instant::now();
        let field = lidarflow::motion::estimate(&seq.window(i), cfg.variant, cfg.merge, cfg.patch)?;
        let runtime_us = started.elapsed().as_micros();
        let path = opts.out.join(format!("field_{i:06}.lfmf"));
        write_field(&field, &path)?;
        if flo {
            write_flo(&field, &opts.out.join(format!("field_{i:06}.flo")))?;
        }
        Ok((i, field.density(), runtime_us))
    })?;
    let mut csv = String::from("frame,density,runtime_us\n");
    for (i, density, runtime) in results {
        csv.push_str(&format!("{i},{density:.6},{runtime}\n"));
    }
    write_text_atomic(&opts.out.join("summary.csv"), &csv)?;
    Ok(())
}

fn cmd_warp(opts: &PipelineOpts, frame: Option<usize>) -> Result<()> {
    let cfg = RunConfig::resolve(opts, None)?;
    cfg.init_parallelism();
    let seq = load_input(&opts.input, &cfg)?;
    if seq.len() < 2 {
        bail!(usage("need at least two frames to warp"));
    }
    let indices: Vec<usize> = match frame {
        Some(i) if i + 1 < seq.len() => vec![i],
        Some(i) => bail!(usage(format!("frame {i} has no successor"))),
        None => (0..seq.len() - 1).collect(),
    };
    std::fs::create_dir_all(&opts.out)?;
    // Single-cloud mode keeps the configured egomotion source; the merged
    // modes merge through IMU chaining.
    let single_variant = if cfg.variant == Variant::SpcR { Variant::SpcR } else { Variant::SpcImu };
    let modes: [(&str, Variant, MergeSpec, PatchSpec); 3] = [
        ("single", single_variant, MergeSpec::single(), PatchSpec::none()),
        ("merged", Variant::MpcImu, cfg.merge, PatchSpec::none()),
        ("patched", Variant::MpcImu, cfg.merge, cfg.patch),
    ];
    let rows = map_frames(indices, |i| {
        let window = seq.window(i);
        let mut out_rows = Vec::new();
        let mut strip = vec![seq.images[i].clone()];
        for (name, variant, merge, patch) in &modes {
            let field = lidarflow::motion::estimate(&window, *variant, *merge, *patch)?;
            let warped = forward_warp(&seq.images[i], &field)?;
            let coverage =
                1.0 - warped.hole_count as f64 / (field.width() as f64 * field.height() as f64);
            write_image(
                &warped.image,
                &opts.out.join(format!("frame_{i:06}_{name}.png")),
            )?;
            let mask = Image::from_fn(field.width(), field.height(), 1, |x, y, _| {
                if warped.covered(x, y) {
                    1.0
                } else {
                    0.0
                }
            });
            write_image(&mask, &opts.out.join(format!("frame_{i:06}_{name}_coverage.png")))?;
            out_rows.push(format!(
                "{i},{name},{:.6},{coverage:.6},{}",
                field.density(),
                warped.hole_count
            ));
            strip.push(warped.image);
        }
        write_image(&seq.images[i + 1], &opts.out.join(format!("frame_{i:06}_target.png")))?;
        // One side-by-side strip: source, the three warps, then the target.
        strip.push(seq.images[i + 1].clone());
        write_image(
            &horizontal_strip(&strip),
            &opts.out.join(format!("frame_{i:06}_comparison.png")),
        )?;
        Ok(out_rows)
    })?;
    let mut csv = String::from("frame,mode,density,coverage,holes\n");
    for group in rows {
        for row in group {
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    write_text_atomic(&opts.out.join("coverage.csv"), &csv)?;
    Ok(())
}

/// Estimate per-neighbor fields toward `target` and fuse the window.
fn enhance_one(
    seq: &Sequence,
    cfg: &RunConfig,
    task: TaskKind,
    target: usize,
    zero_motion: bool,
) -> Result<(Image, f64)> {
    let h = cfg.window / 2;
    let lo = target - h;
    let hi = target + h;
    let mut frames = Vec::with_capacity(cfg.window);
    let mut fields = Vec::with_capacity(cfg.window);
    let mut density_sum = 0.0;
    let mut density_n = 0usize;
    for j in lo..=hi {
        frames.push(seq.images[j].clone());
        if j == target {
            fields.push(MotionField::empty(
                seq.calib.intrinsics.width,
                seq.calib.intrinsics.height,
            ));
            continue;
        }
        let field = if zero_motion {
            full_zero_field(seq.calib.intrinsics.width, seq.calib.intrinsics.height)
        } else {
            estimate_toward(&seq.window(j), target, cfg.variant, cfg.merge, cfg.patch)?
        };
        density_sum += field.density();
        density_n += 1;
        fields.push(field);
    }
    let center = target - lo;
    let out = match task {
        TaskKind::Denoise => denoise_temporal(&frames, &fields, center)?,
        TaskKind::Superres => superres_shift_add(&frames, &fields, center, cfg.sr_factor)?,
        TaskKind::DeblurProxy => deblur_proxy(&frames, &fields, center)?,
    };
    Ok((out, density_sum / density_n.max(1) as f64))
}

fn cmd_enhance(opts: &PipelineOpts, task: Option<TaskArg>, zero_motion: bool) -> Result<()> {
    let task: TaskKind = task
        .map(TaskKind::from)
        .ok_or_else(|| usage("--task is required for enhance"))?;
    let cfg = RunConfig::resolve(opts, Some(task))?;
    cfg.init_parallelism();
    let seq = load_input(&opts.input, &cfg)?;
    let h = cfg.window / 2;
    if seq.len() < cfg.window {
        bail!(usage(format!(
            "window {} needs at least as many frames, sequence has {}",
            cfg.window,
            seq.len()
        )));
    }
    std::fs::create_dir_all(&opts.out)?;
    let targets: Vec<usize> = (h..seq.len() - h).collect();
    let rows = map_frames(targets, |t| {
        let (out, density) = enhance_one(&seq, &cfg, task, t, zero_motion)?;
        write_image(&out, &opts.out.join(format!("enhanced_{t:06}.png")))?;
        let report = match &seq.reference {
            Some(clean) if clean[t].same_shape(&out) => QualityReport {
                psnr_db: Some(psnr(&out, &clean[t])?),
                ssim: Some(ssim(&out, &clean[t])?),
                epe: None,
                density: Some(density),
            },
            _ => QualityReport {
                density: Some(density),
                ..QualityReport::default()
            },
        };
        Ok(format!("{t},{}", report.csv_row()))
    })?;
    let mut csv = format!("frame,{}\n", QualityReport::CSV_HEADER);
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    write_text_atomic(&opts.out.join("quality.csv"), &csv)?;
    Ok(())
}

fn cmd_sweep(opts: &PipelineOpts, axis: AxisArg, task: Option<TaskArg>) -> Result<()> {
    let task: TaskKind = task.map(TaskKind::from).unwrap_or(TaskKind::Denoise);
    let mut cfg = RunConfig::resolve(opts, Some(task))?;
    if axis == AxisArg::Clouds && cfg.variant != Variant::MpcImu {
        log::warn!("cloud-count sweep uses the merged variant; overriding --variant");
        cfg.variant = Variant::MpcImu;
    }
    cfg.init_parallelism();
    let seq = load_input(&opts.input, &cfg)?;
    let h = cfg.window / 2;
    if seq.len() < cfg.window {
        bail!(usage(format!(
            "window {} needs at least as many frames, sequence has {}",
            cfg.window,
            seq.len()
        )));
    }
    let targets: Vec<usize> = (h..seq.len() - h).collect();
    let values = [1usize, 3, 5, 7];
    let mut csv = String::from("parameter,psnr_db,ssim,density\n");
    for value in values {
        let mut run_cfg = cfg.clone();
        match axis {
            AxisArg::Clouds => run_cfg.merge = MergeSpec::new(value).expect("odd"),
            AxisArg::Patch => run_cfg.patch = PatchSpec::new(value).expect("odd"),
        }
        let results = map_frames(targets.clone(), |t| {
            let (out, density) = enhance_one(&seq, &run_cfg, task, t, false)?;
            let quality = match &seq.reference {
                Some(clean) if clean[t].same_shape(&out) => {
                    Some((psnr(&out, &clean[t])?, ssim(&out, &clean[t])?))
                }
                _ => None,
            };
            Ok((quality, density))
        })?;
        let n = results.len() as f64;
        let density = results.iter().map(|(_, d)| d).sum::<f64>() / n;
        let quality: Vec<(f64, f64)> = results.iter().filter_map(|(q, _)| *q).collect();
        if quality.is_empty() {
            csv.push_str(&format!("{value},,,{density:.6}\n"));
        } else {
            let qn = quality.len() as f64;
            let mean_psnr = quality.iter().map(|(p, _)| p).sum::<f64>() / qn;
            let mean_ssim = quality.iter().map(|(_, s)| s).sum::<f64>() / qn;
            csv.push_str(&format!("{value},{mean_psnr:.6},{mean_ssim:.6},{density:.6}\n"));
        }
    }
    if let Some(parent) = opts.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_text_atomic(&opts.out, &csv)?;
    Ok(())
}

fn cmd_synth(spec: Option<&Path>, out: Option<&Path>, seed: Option<u64>, emit_spec: bool) -> Result<()> {
    if emit_spec {
        let spec = SyntheticSceneSpec::default_scene(seed.unwrap_or(0));
        println!("{}", serde_json::to_string_pretty(&spec)?);
        return Ok(());
    }
    let out = out.ok_or_else(|| usage("--out is required to write a dataset"))?;
    let mut spec = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|_| anyhow!(DataError::MissingFile(path.to_path_buf())))?;
            serde_json::from_str(&text).map_err(|e| anyhow!(DataError::InvalidSpec(e.to_string())))?
        }
        None => SyntheticSceneSpec::default_scene(0),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let seq = synthetic::generate(&spec)?;
    std::fs::create_dir_all(out)?;
    kitti::write_layout(out, &seq.frames, &seq.clouds, &seq.imu, &seq.timestamps, &seq.calib)?;
    // Degraded datasets also get their clean references, outside the
    // KITTI-shaped tree, so quality can be measured from files alone.
    if spec.noise_sigma > 0.0 || spec.blur_sigma > 0.0 || spec.downsample > 1 {
        let clean_dir = out.join("clean");
        std::fs::create_dir_all(&clean_dir)?;
        for (i, img) in seq.clean.iter().enumerate() {
            write_image(img, &clean_dir.join(format!("{i:010}.png")))?;
        }
    }
    // Loading back validates the layout and produces the manifest export.
    let manifest = dataio::load_kitti_sequence(out, ImuPayload::Velocity)?;
    write_text_atomic(
        &out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest.to_json(Some(out)))?,
    )?;
    write_text_atomic(&out.join("scene_spec.json"), &serde_json::to_string_pretty(&spec)?)?;
    Ok(())
}

fn cmd_eval(reference: &Path, test: &Path, out: &Path) -> Result<()> {
    let list = |dir: &Path| -> Result<Vec<PathBuf>> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|_| anyhow!(DataError::MissingFile(dir.to_path_buf())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|s| s.to_str()) == Some("png"))
            .collect();
        files.sort();
        Ok(files)
    };
    let refs = list(reference)?;
    let tests = list(test)?;
    if refs.is_empty() || refs.len() != tests.len() {
        bail!(usage(format!(
            "directories must hold the same number of images ({} vs {})",
            refs.len(),
            tests.len()
        )));
    }
    let mut csv = format!("file,{}\n", QualityReport::CSV_HEADER);
    for (r, t) in refs.iter().zip(&tests) {
        let a = read_image(t)?;
        let b = read_image(r)?;
        let report = QualityReport::from_images(&a, &b)?;
        let name = t.file_name().unwrap_or_default().to_string_lossy();
        csv.push_str(&format!("{name},{}\n", report.csv_row()));
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_text_atomic(out, &csv)?;
    Ok(())
}

