//! Forward (splat) warping of images by a motion field.
//!
//! The field is anchored at frame-`t` pixels, where projected cloud points
//! land, so warping pushes each source pixel to its rounded destination
//! instead of sampling backwards. Destinations nobody reaches stay holes;
//! destinations reached more than once keep the source with smaller depth,
//! the same conflict rule the motion module uses.

use thiserror::Error;

use crate::motion::MotionField;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("image is {iw}x{ih}x{ic} but the operation expected {ew}x{eh}x{ec}")]
    DimensionMismatch {
        iw: u32,
        ih: u32,
        ic: u32,
        ew: u32,
        eh: u32,
        ec: u32,
    },
    #[error("invalid image: {0}")]
    InvalidImage(&'static str),
}

/// Row-major, channel-interleaved f32 image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<f32>,
}

impl Image {
    /// A black image.
    pub fn zeros(width: u32, height: u32, channels: u32) -> Self {
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self, WarpError> {
        if channels != 1 && channels != 3 {
            return Err(WarpError::InvalidImage("channels must be 1 or 3"));
        }
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(WarpError::InvalidImage("data length does not match dimensions"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(WarpError::InvalidImage("non-finite sample"));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Fill from a per-pixel function returning one value per channel.
    pub fn from_fn(width: u32, height: u32, channels: u32, mut f: impl FnMut(u32, u32, u32) -> f32) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(x, y, c);
                    img.set(x, y, c, v);
                }
            }
        }
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u32) -> f32 {
        self.data[self.offset(x, y) + c as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u32, v: f32) {
        let i = self.offset(x, y) + c as usize;
        self.data[i] = v;
    }

    /// All channel samples of one pixel.
    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels as usize]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Luma value of a pixel: the sample itself for grayscale, BT.601
    /// weights for RGB.
    #[inline]
    pub fn luma(&self, x: u32, y: u32) -> f32 {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            p[0]
        } else {
            0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    fn expect_shape(&self, w: u32, h: u32, c: u32) -> Result<(), WarpError> {
        if self.width == w && self.height == h && self.channels == c {
            Ok(())
        } else {
            Err(WarpError::DimensionMismatch {
                iw: self.width,
                ih: self.height,
                ic: self.channels,
                ew: w,
                eh: h,
                ec: c,
            })
        }
    }

    /// Clamp every sample into `[0, 1]`.
    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}

/// A forward-warped image plus which destinations actually received a
/// source pixel. Uncovered pixels hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedImage {
    pub image: Image,
    pub coverage: Vec<bool>,
    pub hole_count: usize,
}

impl WarpedImage {
    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.coverage[y as usize * self.image.width() as usize + x as usize]
    }
}

/// Splat every valid source pixel to its motion-displaced destination.
///
/// Destination conflicts keep the smaller source depth, ties the smaller
/// source linear index, so the result does not depend on traversal order.
pub fn forward_warp(src: &Image, field: &MotionField) -> Result<WarpedImage, WarpError> {
    src.expect_shape(field.width(), field.height(), src.channels())?;
    let w = field.width();
    let h = field.height();
    let n = w as usize * h as usize;
    // winner per destination: (depth, source linear index)
    let mut best: Vec<(f32, u32)> = vec![(f32::INFINITY, u32::MAX); n];
    for (x, y, du, dv, depth) in field.valid_pixels() {
        let dx = (x as f64 + du as f64).round();
        let dy = (y as f64 + dv as f64).round();
        if dx < 0.0 || dy < 0.0 || dx >= w as f64 || dy >= h as f64 {
            continue;
        }
        let dest = dy as usize * w as usize + dx as usize;
        let src_idx = y * w + x;
        let slot = &mut best[dest];
        if depth < slot.0 || (depth == slot.0 && src_idx < slot.1) {
            *slot = (depth, src_idx);
        }
    }
    let mut image = Image::zeros(w, h, src.channels());
    let mut coverage = vec![false; n];
    let mut hole_count = n;
    for (dest, &(_, src_idx)) in best.iter().enumerate() {
        if src_idx != u32::MAX {
            let sx = src_idx % w;
            let sy = src_idx / w;
            let dx = (dest % w as usize) as u32;
            let dy = (dest / w as usize) as u32;
            for c in 0..src.channels() {
                image.set(dx, dy, c, src.get(sx, sy, c));
            }
            coverage[dest] = true;
            hole_count -= 1;
        }
    }
    Ok(WarpedImage { image, coverage, hole_count })
}

/// Forward-warp `src` and fill every hole from `fallback` at the same
/// pixel. The result is complete: every sample comes from `src` or
/// `fallback`. Passing `src` itself as the fallback degrades gracefully to
/// the unwarped input wherever motion is unknown.
pub fn compensate(src: &Image, field: &MotionField, fallback: &Image) -> Result<Image, WarpError> {
    fallback.expect_shape(src.width(), src.height(), src.channels())?;
    let warped = forward_warp(src, field)?;
    let mut out = warped.image;
    if warped.hole_count > 0 {
        for y in 0..out.height() {
            for x in 0..out.width() {
                if !warped.coverage[y as usize * out.width() as usize + x as usize] {
                    for c in 0..out.channels() {
                        out.set(x, y, c, fallback.get(x, y, c));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Destination pixels where the forward-warp conflict rule discarded at
/// least one source (two or more sources landed there).
pub fn occlusion_mask(field: &MotionField) -> Vec<bool> {
    let w = field.width();
    let h = field.height();
    let n = w as usize * h as usize;
    let mut hits = vec![0u32; n];
    for (x, y, du, dv, _) in field.valid_pixels() {
        let dx = (x as f64 + du as f64).round();
        let dy = (y as f64 + dv as f64).round();
        if dx < 0.0 || dy < 0.0 || dx >= w as f64 || dy >= h as f64 {
            continue;
        }
        hits[dy as usize * w as usize + dx as usize] += 1;
    }
    hits.into_iter().map(|c| c >= 2).collect()
}
