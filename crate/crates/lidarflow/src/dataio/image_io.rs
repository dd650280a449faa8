//! 8-bit PNG in and out. Samples scale to `[0, 1]` on read and round to
//! nearest on write, so a write/read round trip moves a sample by at most
//! 1/255. Writes go through a temporary file and rename, so readers never
//! observe a partial image.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageReader};

use super::DataError;
use crate::warp::Image;

pub fn read_image(path: &Path) -> Result<Image, DataError> {
    let reader = ImageReader::open(path).map_err(|e| super::missing_or_io(path, e))?;
    let decoded = reader.decode().map_err(|e| DataError::DecodeError {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (decoded.width(), decoded.height());
    let img = match decoded {
        DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Image::from_data(w, h, 1, data)
        }
        DynamicImage::ImageLumaA8(buf) => {
            let data = buf
                .into_raw()
                .chunks_exact(2)
                .map(|px| px[0] as f32 / 255.0)
                .collect();
            Image::from_data(w, h, 1, data)
        }
        other => {
            let rgb = other.into_rgb8();
            let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Image::from_data(w, h, 3, data)
        }
    };
    img.map_err(|e| DataError::DecodeError {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Image dimensions without decoding the pixel data.
pub(super) fn image_size(path: &Path) -> Result<(u32, u32), DataError> {
    let reader = ImageReader::open(path).map_err(|e| super::missing_or_io(path, e))?;
    reader
        .into_dimensions()
        .map_err(|e| DataError::DecodeError {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn write_image(img: &Image, path: &Path) -> Result<(), DataError> {
    let quantize = |v: f32| -> u8 { (v.clamp(0.0, 1.0) * 255.0).round() as u8 };
    let bytes: Vec<u8> = img.data().iter().copied().map(quantize).collect();
    let tmp = path.with_extension("png.tmp");
    let result = match img.channels() {
        1 => image::GrayImage::from_raw(img.width(), img.height(), bytes)
            .expect("buffer sized from image")
            .save_with_format(&tmp, image::ImageFormat::Png),
        _ => image::RgbImage::from_raw(img.width(), img.height(), bytes)
            .expect("buffer sized from image")
            .save_with_format(&tmp, image::ImageFormat::Png),
    };
    result.map_err(|e| DataError::DecodeError {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn write_read_round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = StdRng::seed_from_u64(70);
        for channels in [1u32, 3] {
            let img = Image::from_fn(9, 7, channels, |_, _, _| rng.random_range(0.0..1.0));
            let path = dir.path().join(format!("t{channels}.png"));
            write_image(&img, &path).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(back.channels(), channels);
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn tiny_black_png_reads_as_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        write_image(&Image::zeros(1, 1, 1), &path).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (1, 1, 1));
        assert_eq!(img.get(0, 0, 0), 0.0);
    }

    #[test]
    fn fixture_with_known_bytes_decodes_exactly() {
        // 3x2 RGB with one distinct byte value per sample.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.png");
        let raw: Vec<u8> = (0u8..18).map(|v| v * 10).collect();
        image::RgbImage::from_raw(3, 2, raw.clone())
            .unwrap()
            .save_with_format(&path, image::ImageFormat::Png)
            .unwrap();
        let img = read_image(&path).unwrap();
        for (i, &byte) in raw.iter().enumerate() {
            assert_eq!(img.data()[i], byte as f32 / 255.0);
        }
    }

    #[test]
    fn missing_and_corrupt_files_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_image(&dir.path().join("absent.png")),
            Err(DataError::MissingFile(_))
        ));
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not a png at all").unwrap();
        assert!(matches!(read_image(&bad), Err(DataError::DecodeError { .. })));
    }
}
