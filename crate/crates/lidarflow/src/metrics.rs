//! Image quality metrics and motion field error.
//!
//! PSNR is computed over all samples jointly with a dynamic range of 1.0
//! (conventions differ; per-channel averaging is not used here). SSIM is
//! the standard single-scale variant: 11x11 Gaussian window with sigma 1.5,
//! K1 = 0.01, K2 = 0.03, evaluated on luma and averaged over every position
//! where the full window fits.

use thiserror::Error;

use crate::motion::MotionField;
use crate::warp::Image;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("inputs have different dimensions")]
    DimensionMismatch,
    #[error("image is smaller than the {0}x{0} analysis window")]
    ImageTooSmall(usize),
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Metric bundle with a fixed serialization order. Fields are present when
/// the producing comparison computed them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QualityReport {
    /// Peak signal-to-noise ratio in dB; `+inf` for identical images.
    pub psnr_db: Option<f64>,
    /// Structural similarity in `[-1, 1]`.
    pub ssim: Option<f64>,
    /// Mean endpoint error in pixels over jointly valid motion pixels.
    pub epe: Option<f64>,
    /// Valid-pixel fraction of the estimated field.
    pub density: Option<f64>,
}

impl QualityReport {
    pub const CSV_HEADER: &'static str = "psnr_db,ssim,epe,density";

    /// PSNR and SSIM of `a` against the reference `b`.
    pub fn from_images(a: &Image, b: &Image) -> Result<Self, MetricsError> {
        Ok(Self {
            psnr_db: Some(psnr(a, b)?),
            ssim: Some(ssim(a, b)?),
            ..Self::default()
        })
    }

    fn field(v: Option<f64>) -> String {
        match v {
            None => String::new(),
            Some(x) if x.is_infinite() => "inf".to_string(),
            Some(x) => format!("{x:.6}"),
        }
    }

    /// One CSV row in [`CSV_HEADER`](Self::CSV_HEADER) order. Missing
    /// fields are empty, infinite PSNR is the literal `inf`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            Self::field(self.psnr_db),
            Self::field(self.ssim),
            Self::field(self.epe),
            Self::field(self.density)
        )
    }

    /// JSON object with the same field order; missing fields are `null`,
    /// infinite PSNR is the string `"inf"`.
    pub fn to_json(&self) -> String {
        fn value(v: Option<f64>) -> String {
            match v {
                None => "null".to_string(),
                Some(x) if x.is_infinite() => "\"inf\"".to_string(),
                Some(x) => format!("{x}"),
            }
        }
        format!(
            "{{\"psnr_db\":{},\"ssim\":{},\"epe\":{},\"density\":{}}}",
            value(self.psnr_db),
            value(self.ssim),
            value(self.epe),
            value(self.density)
        )
    }
}

/// Peak signal-to-noise ratio in dB over all samples, `MAX = 1.0`.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::DimensionMismatch);
    }
    let mut sum = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        let d = *x as f64 - *y as f64;
        sum += d * d;
    }
    let mse = sum / a.data().len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn luma_plane(img: &Image) -> Vec<f64> {
    let mut plane = Vec::with_capacity(img.width() as usize * img.height() as usize);
    for y in 0..img.height() {
        for x in 0..img.width() {
            plane.push(img.luma(x, y) as f64);
        }
    }
    plane
}

/// Horizontal then vertical pass of the separable window over `plane`,
/// valid positions only. Output is `(w - win + 1) x (h - win + 1)`.
fn window_filter(plane: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * plane[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Single-scale structural similarity on luma.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::DimensionMismatch);
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::ImageTooSmall(SSIM_WINDOW));
    }
    let kernel = gaussian_kernel();
    let pa = luma_plane(a);
    let pb = luma_plane(b);
    let sq_a: Vec<f64> = pa.iter().map(|v| v * v).collect();
    let sq_b: Vec<f64> = pb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

    let mu_a = window_filter(&pa, w, h, &kernel);
    let mu_b = window_filter(&pb, w, h, &kernel);
    let e_aa = window_filter(&sq_a, w, h, &kernel);
    let e_bb = window_filter(&sq_b, w, h, &kernel);
    let e_ab = window_filter(&ab, w, h, &kernel);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let var_a = e_aa[i] - mu_a[i] * mu_a[i];
        let var_b = e_bb[i] - mu_b[i] * mu_b[i];
        let cov = e_ab[i] - mu_a[i] * mu_b[i];
        let num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
        let den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
        sum += num / den;
    }
    Ok(sum / mu_a.len() as f64)
}

/// Mean endpoint error of an estimated motion field against a reference,
/// over pixels valid in both. Also reports the estimate's density. `epe`
/// is `None` when the fields share no valid pixel.
pub fn endpoint_error(est: &MotionField, gt: &MotionField) -> Result<QualityReport, MetricsError> {
    if est.width() != gt.width() || est.height() != gt.height() {
        return Err(MetricsError::DimensionMismatch);
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, (&ev, &gv)) in est.valid_mask().iter().zip(gt.valid_mask()).enumerate() {
        if ev && gv {
            let du = est.du_plane()[i] as f64 - gt.du_plane()[i] as f64;
            let dv = est.dv_plane()[i] as f64 - gt.dv_plane()[i] as f64;
            sum += (du * du + dv * dv).sqrt();
            count += 1;
        }
    }
    Ok(QualityReport {
        epe: (count > 0).then(|| sum / count as f64),
        density: Some(est.density()),
        ..QualityReport::default()
    })
}
