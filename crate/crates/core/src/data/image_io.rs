//! 8-bit grayscale tile I/O (PNG and PGM) and the value mapping between
//! byte images and [0,1] float tensors.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn open_gray8(path: &Path) -> Result<ImageBuffer<Luma<u8>, Vec<u8>>> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot read image {}: {e}", path.display())))?;
    match img {
        DynamicImage::ImageLuma8(buf) => Ok(buf),
        other => Err(Error::data(format!(
            "{} is not 8-bit grayscale (got {:?})",
            path.display(),
            other.color()
        ))),
    }
}

/// Loads an 8-bit grayscale tile as a `(1,1,h,w)` tensor with values `v/255`.
pub fn load_tile(path: &Path) -> Result<Tensor> {
    let buf = open_gray8(path)?;
    let (w, h) = buf.dimensions();
    let data = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Tensor::from_vec(Shape::new(1, 1, h as usize, w as usize), data)
}

/// Loads a binary mask stored as {0, 255}; any other byte value is rejected.
pub fn load_mask(path: &Path) -> Result<Tensor> {
    let buf = open_gray8(path)?;
    let (w, h) = buf.dimensions();
    let mut data = Vec::with_capacity((w * h) as usize);
    for &v in buf.as_raw() {
        match v {
            0 => data.push(0.0),
            255 => data.push(1.0),
            other => {
                return Err(Error::data(format!(
                    "mask {} contains value {other}, expected only 0 and 255",
                    path.display()
                )))
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 1, h as usize, w as usize), data)
}

fn to_gray8(t: &Tensor, map: impl Fn(f64) -> u8) -> Result<ImageBuffer<Luma<u8>, Vec<u8>>> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape(format!(
            "image tensors must be (1,1,h,w), got {s}"
        )));
    }
    let bytes: Vec<u8> = t.data().iter().map(|&v| map(v)).collect();
    ImageBuffer::from_raw(s.w as u32, s.h as u32, bytes)
        .ok_or_else(|| Error::shape("image buffer size mismatch"))
}

fn save_gray8(path: &Path, buf: ImageBuffer<Luma<u8>, Vec<u8>>) -> Result<()> {
    buf.save(path)
        .map_err(|e| Error::data(format!("cannot write image {}: {e}", path.display())))
}

/// Saves a [0,1] intensity tile as `round(255 * v)` bytes.
pub fn save_tile(path: &Path, t: &Tensor) -> Result<()> {
    save_gray8(
        path,
        to_gray8(t, |v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)?,
    )
}

/// Saves a binary mask as {0, 255}.
pub fn save_mask(path: &Path, mask: &Tensor) -> Result<()> {
    if !mask.is_binary() {
        return Err(Error::shape("mask tensor must be binary"));
    }
    save_gray8(path, to_gray8(mask, |v| if v == 1.0 { 255 } else { 0 })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_every_byte_value() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gradient.png");
        let data: Vec<f64> = (0..=255).map(|v| v as f64 / 255.0).collect();
        let t = Tensor::from_vec(Shape::new(1, 1, 16, 16), data).unwrap();
        save_tile(&path, &t).unwrap();
        let back = load_tile(&path).unwrap();
        assert_eq!(back.data(), t.data());
        // And a second save is byte-identical on disk.
        let path2 = dir.path().join("gradient2.png");
        save_tile(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn zero_image_loads_as_zero_tensor() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("zero.png");
        save_tile(&path, &Tensor::zeros(Shape::new(1, 1, 4, 4))).unwrap();
        let t = load_tile(&path).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn known_bytes_map_to_stated_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("two.png");
        let img = ImageBuffer::from_raw(2, 1, vec![255u8, 128]).unwrap();
        save_gray8(&path, img).unwrap();
        let t = load_tile(&path).unwrap();
        assert_eq!(t.data()[0], 1.0);
        assert!((t.data()[1] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn pgm_files_work_too() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tile.pgm");
        let data: Vec<f64> = (0..64).map(|v| (v * 4) as f64 / 255.0).collect();
        let t = Tensor::from_vec(Shape::new(1, 1, 8, 8), data).unwrap();
        save_tile(&path, &t).unwrap();
        let back = load_tile(&path).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn non_grayscale_rejected_with_path() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([1, 2, 3]));
        rgb.save(&path).unwrap();
        let err = load_tile(&path).unwrap_err();
        assert!(err.to_string().contains("rgb.png"));
    }

    #[test]
    fn missing_file_rejected_with_path() {
        let err = load_tile(Path::new("/nonexistent/nowhere.png")).unwrap_err();
        assert!(err.to_string().contains("nowhere.png"));
    }

    #[test]
    fn mask_with_stray_values_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad_mask.png");
        let img = ImageBuffer::from_raw(2, 1, vec![0u8, 7]).unwrap();
        save_gray8(&path, img).unwrap();
        assert!(load_mask(&path).is_err());
    }
}
