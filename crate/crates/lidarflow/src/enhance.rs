//! Classical motion-compensated fusion backends.
//!
//! Three consumers of motion fields: temporal averaging for denoise,
//! shift-and-add for super-resolution, and a sharpest-tile fusion standing
//! in for deblurring. They are deliberately simple: the point is that each
//! one gets strictly better when fed accurate motion, which is what the
//! pipeline-level tests measure.

use thiserror::Error;

use crate::imgproc::bicubic_upsample;
use crate::motion::MotionField;
use crate::warp::{forward_warp, occlusion_mask, Image, WarpError};

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("window of {got} frames is too small (need at least {need})")]
    WindowTooSmall { got: usize, need: usize },
    #[error("frames, fields and center index do not line up")]
    MismatchedInputs,
    #[error(transparent)]
    Warp(#[from] WarpError),
}

/// Which fusion backend to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Denoise,
    Superres,
    DeblurProxy,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "denoise" => Some(Self::Denoise),
            "superres" | "sr" => Some(Self::Superres),
            "deblur" | "deblur_proxy" => Some(Self::DeblurProxy),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Denoise => "denoise",
            Self::Superres => "superres",
            Self::DeblurProxy => "deblur",
        }
    }

    /// Motion duplication patch that suits the backend: small for
    /// super-resolution, large for denoise and deblur.
    pub fn default_patch(&self) -> usize {
        match self {
            Self::Superres => 3,
            Self::Denoise | Self::DeblurProxy => 7,
        }
    }
}

/// A fusion task configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnhanceTask {
    pub kind: TaskKind,
    /// Odd number of frames fused per output frame.
    pub window: usize,
    /// Upsampling factor, super-resolution only.
    pub sr_factor: u32,
}

impl EnhanceTask {
    pub fn new(kind: TaskKind, window: usize, sr_factor: u32) -> Option<Self> {
        (window % 2 == 1 && sr_factor >= 1).then_some(Self { kind, window, sr_factor })
    }
}

fn check_window(frames: &[Image], fields: &[MotionField], center: usize, need: usize) -> Result<(), EnhanceError> {
    if frames.len() < need {
        return Err(EnhanceError::WindowTooSmall { got: frames.len(), need });
    }
    if fields.len() != frames.len() || center >= frames.len() {
        return Err(EnhanceError::MismatchedInputs);
    }
    let c = &frames[center];
    if frames.iter().any(|f| !f.same_shape(c)) {
        return Err(EnhanceError::MismatchedInputs);
    }
    Ok(())
}

/// Motion-compensated temporal mean.
///
/// Every neighbor is warped to the center frame and averaged with it. A
/// neighbor pixel joins the mean only where its warp actually landed a
/// source and the conflict rule discarded nothing there; holes and
/// occlusion-mask pixels are excluded rather than filled, since unaligned
/// fallback content would push the fused frame below the noisy input.
/// `fields[i]` maps `frames[i]` to the center frame and `fields[center]`
/// is ignored.
pub fn denoise_temporal(
    frames: &[Image],
    fields: &[MotionField],
    center: usize,
) -> Result<Image, EnhanceError> {
    check_window(frames, fields, center, 1)?;
    let base = &frames[center];
    let (w, h, c) = (base.width(), base.height(), base.channels());
    let n = w as usize * h as usize;
    let mut sum: Vec<f64> = base.data().iter().map(|&v| v as f64).collect();
    let mut weight = vec![1.0f64; n];
    for (i, frame) in frames.iter().enumerate() {
        if i == center {
            continue;
        }
        let aligned = forward_warp(frame, &fields[i])?;
        let masked = occlusion_mask(&fields[i]);
        for p in 0..n {
            if aligned.coverage[p] && !masked[p] {
                for ch in 0..c as usize {
                    sum[p * c as usize + ch] += aligned.image.data()[p * c as usize + ch] as f64;
                }
                weight[p] += 1.0;
            }
        }
    }
    let mut out = base.clone();
    for (p, wgt) in weight.iter().enumerate() {
        for ch in 0..c as usize {
            let idx = p * c as usize + ch;
            out.data_mut()[idx] = ((sum[idx] / wgt) as f32).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Shift-and-add super-resolution.
///
/// Low-resolution samples are splatted into a `factor`-times-larger grid at
/// their motion-corrected positions and averaged per cell; cells nobody
/// reached are filled from a bicubic upsample of the center frame. With
/// zero motion and identical frames this degrades to the grid-aligned splat
/// of the center frame with bicubic in between.
pub fn superres_shift_add(
    frames: &[Image],
    fields: &[MotionField],
    center: usize,
    factor: u32,
) -> Result<Image, EnhanceError> {
    check_window(frames, fields, center, 1)?;
    let base = &frames[center];
    let f = factor as f64;
    let (w, h, c) = (base.width(), base.height(), base.channels());
    let (ow, oh) = (w * factor, h * factor);
    let n = ow as usize * oh as usize;
    let mut sum = vec![0.0f64; n * c as usize];
    let mut hits = vec![0u32; n];
    // Low-res pixel centers sit at f*x + (f-1)/2 on the high-res grid.
    let offset = (f - 1.0) / 2.0;
    for (i, frame) in frames.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let (du, dv) = if i == center {
                    (0.0, 0.0)
                } else {
                    match fields[i].at(x, y) {
                        Some((du, dv, _)) => (du as f64, dv as f64),
                        None => continue,
                    }
                };
                let hx = (f * (x as f64 + du) + offset).round();
                let hy = (f * (y as f64 + dv) + offset).round();
                if hx < 0.0 || hy < 0.0 || hx >= ow as f64 || hy >= oh as f64 {
                    continue;
                }
                let cell = hy as usize * ow as usize + hx as usize;
                for ch in 0..c {
                    sum[cell * c as usize + ch as usize] += frame.get(x, y, ch) as f64;
                }
                hits[cell] += 1;
            }
        }
    }
    let fill = bicubic_upsample(base, factor);
    let mut out = Image::zeros(ow, oh, c);
    for cell in 0..n {
        let x = (cell % ow as usize) as u32;
        let y = (cell / ow as usize) as u32;
        for ch in 0..c {
            let v = if hits[cell] > 0 {
                (sum[cell * c as usize + ch as usize] / hits[cell] as f64) as f32
            } else {
                fill.get(x, y, ch)
            };
            out.set(x, y, ch, v.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

const TILE: usize = 8;
const FEATHER: usize = 4;
/// Minimum warp coverage for a neighbor tile to compete.
const TILE_COVERAGE: f64 = 0.5;

fn laplacian_map(img: &Image) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut lap = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let c = img.luma(x as u32, y as u32) as f64;
            let l = img.luma(x as u32 - 1, y as u32) as f64;
            let r = img.luma(x as u32 + 1, y as u32) as f64;
            let u = img.luma(x as u32, y as u32 - 1) as f64;
            let d = img.luma(x as u32, y as u32 + 1) as f64;
            lap[y * w + x] = 4.0 * c - l - r - u - d;
        }
    }
    lap
}

/// Sharpest-tile temporal fusion, a stand-in deblurring consumer.
///
/// Neighbors are warped to the center; per 8x8 tile the candidate with the
/// highest Laplacian energy wins (the center frame competes and breaks
/// ties), and tiles are blended with a 4-pixel feather. Neighbor tiles with
/// poor warp coverage are not eligible, so a field that is invalid
/// everywhere reproduces the center frame.
pub fn deblur_proxy(
    frames: &[Image],
    fields: &[MotionField],
    center: usize,
) -> Result<Image, EnhanceError> {
    check_window(frames, fields, center, 3)?;
    let base = &frames[center];
    let (w, h, c) = (base.width() as usize, base.height() as usize, base.channels());

    // Candidate images: center first, then compensated neighbors with their
    // coverage maps.
    let mut candidates: Vec<(Image, Option<Vec<bool>>)> = vec![(base.clone(), None)];
    for (i, frame) in frames.iter().enumerate() {
        if i == center {
            continue;
        }
        let warped = forward_warp(frame, &fields[i])?;
        let coverage = warped.coverage.clone();
        let mut filled = warped.image;
        for (p, covered) in coverage.iter().enumerate() {
            if !covered {
                for ch in 0..c as usize {
                    filled.data_mut()[p * c as usize + ch] = base.data()[p * c as usize + ch];
                }
            }
        }
        candidates.push((filled, Some(coverage)));
    }
    let lap_maps: Vec<Vec<f64>> = candidates.iter().map(|(img, _)| laplacian_map(img)).collect();

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut choice = vec![0usize; tiles_x * tiles_y];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let x0 = tx * TILE;
            let y0 = ty * TILE;
            let x1 = (x0 + TILE).min(w);
            let y1 = (y0 + TILE).min(h);
            let area = ((x1 - x0) * (y1 - y0)) as f64;
            let mut best = 0usize;
            let mut best_energy = f64::NEG_INFINITY;
            for (ci, (_, coverage)) in candidates.iter().enumerate() {
                if let Some(cov) = coverage {
                    let covered: usize = (y0..y1)
                        .map(|y| (x0..x1).filter(|&x| cov[y * w + x]).count())
                        .sum();
                    if (covered as f64) < TILE_COVERAGE * area {
                        continue;
                    }
                }
                let energy: f64 = (y0..y1)
                    .map(|y| (x0..x1).map(|x| lap_maps[ci][y * w + x].powi(2)).sum::<f64>())
                    .sum();
                if energy > best_energy {
                    best_energy = energy;
                    best = ci;
                }
            }
            choice[ty * tiles_x + tx] = best;
        }
    }

    // Feathered blend: each tile contributes over its extent plus a margin,
    // with weights ramping linearly to zero across the feather.
    let mut acc = vec![0.0f64; w * h * c as usize];
    let mut wacc = vec![0.0f64; w * h];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let src = &candidates[choice[ty * tiles_x + tx]].0;
            let x0 = tx * TILE;
            let y0 = ty * TILE;
            let x1 = (x0 + TILE).min(w);
            let y1 = (y0 + TILE).min(h);
            let ex0 = x0.saturating_sub(FEATHER);
            let ey0 = y0.saturating_sub(FEATHER);
            let ex1 = (x1 + FEATHER).min(w);
            let ey1 = (y1 + FEATHER).min(h);
            for y in ey0..ey1 {
                let wy = ramp(y, y0, y1);
                for x in ex0..ex1 {
                    let weight = wy * ramp(x, x0, x1);
                    if weight <= 0.0 {
                        continue;
                    }
                    wacc[y * w + x] += weight;
                    for ch in 0..c as usize {
                        acc[(y * w + x) * c as usize + ch] +=
                            weight * src.data()[(y * w + x) * c as usize + ch] as f64;
                    }
                }
            }
        }
    }
    let mut out = base.clone();
    for p in 0..w * h {
        for ch in 0..c as usize {
            out.data_mut()[p * c as usize + ch] =
                ((acc[p * c as usize + ch] / wacc[p]) as f32).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// 1 inside `[lo, hi)`, decaying linearly to 0 over the feather outside.
#[inline]
fn ramp(p: usize, lo: usize, hi: usize) -> f64 {
    let p = p as f64;
    let (lo, hi) = (lo as f64, hi as f64);
    if p >= lo && p < hi {
        1.0
    } else if p < lo {
        (1.0 - (lo - p) / (FEATHER as f64 + 1.0)).max(0.0)
    } else {
        (1.0 - (p - hi + 1.0) / (FEATHER as f64 + 1.0)).max(0.0)
    }
}
