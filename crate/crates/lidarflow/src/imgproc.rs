//! Small image-processing helpers: bicubic upsampling, Gaussian blur and
//! box downsampling. These back the fusion fallback paths and the
//! degradation models; none of them is motion-aware.

use crate::warp::Image;

/// Cubic convolution kernel, a = -0.5.
#[inline]
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic upsampling by an integer factor, aligned so that each
/// low-resolution pixel is the box average of a `factor x factor` block:
/// high-resolution pixel `X` samples the source at `(X - (f-1)/2) / f`.
/// Output is clamped to `[0, 1]`.
pub fn bicubic_upsample(img: &Image, factor: u32) -> Image {
    if factor == 1 {
        return img.clone();
    }
    let f = factor as f64;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let (ow, oh) = (w * factor, h * factor);
    let sample = |x: i64, y: i64, ch: u32| -> f64 {
        let x = x.clamp(0, w as i64 - 1) as u32;
        let y = y.clamp(0, h as i64 - 1) as u32;
        img.get(x, y, ch) as f64
    };
    Image::from_fn(ow, oh, c, |ox, oy, ch| {
        let sx = (ox as f64 - (f - 1.0) / 2.0) / f;
        let sy = (oy as f64 - (f - 1.0) / 2.0) / f;
        let bx = sx.floor() as i64;
        let by = sy.floor() as i64;
        let mut acc = 0.0;
        for j in -1..=2 {
            let wy = cubic(sy - (by + j) as f64);
            if wy == 0.0 {
                continue;
            }
            for i in -1..=2 {
                let wx = cubic(sx - (bx + i) as f64);
                acc += wx * wy * sample(bx + i, by + j, ch);
            }
        }
        acc.clamp(0.0, 1.0) as f32
    })
}

/// Box average over non-overlapping `factor x factor` blocks. Trailing rows
/// and columns that do not fill a block are dropped.
pub fn box_downsample(img: &Image, factor: u32) -> Image {
    if factor == 1 {
        return img.clone();
    }
    let (ow, oh) = (img.width() / factor, img.height() / factor);
    let inv = 1.0 / (factor * factor) as f64;
    Image::from_fn(ow, oh, img.channels(), |ox, oy, ch| {
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img.get(ox * factor + dx, oy * factor + dy, ch) as f64;
            }
        }
        (acc * inv) as f32
    })
}

/// Separable Gaussian blur with clamp-to-edge boundaries. A non-positive
/// sigma returns the input unchanged.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let w = (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(w);
        sum += w;
    }
    for w in &mut kernel {
        *w /= sum;
    }
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let horiz = Image::from_fn(w, h, c, |x, y, ch| {
        let mut acc = 0.0;
        for (ki, kv) in kernel.iter().enumerate() {
            let sx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as u32;
            acc += kv * img.get(sx, y, ch) as f64;
        }
        acc as f32
    });
    Image::from_fn(w, h, c, |x, y, ch| {
        let mut acc = 0.0;
        for (ki, kv) in kernel.iter().enumerate() {
            let sy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as u32;
            acc += kv * horiz.get(x, sy, ch) as f64;
        }
        acc as f32
    })
}
