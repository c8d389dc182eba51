//! PNG <-> tensor conversion. Tensors are `[3, H, W]` with values in [0, 1].

use std::path::Path;

use image::RgbImage;

use super::manifest::{DatasetManifest, ImageRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (i, p) in img.as_raw().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = p[c] as f64 / 255.0;
        }
    }
    Tensor::new([3, h, w], data).expect("length matches shape")
}

/// Quantize `[3, H, W]` back to 8 bits, clamping to [0, 1].
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape(format!("expected [3, H, W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = t.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            raw.push((d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions"))
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    crate::fsutil::write_atomic(path, &bytes)
}

pub fn save_rgb(t: &Tensor, path: &Path) -> Result<()> {
    save_png(&tensor_to_rgb(t)?, path)
}

/// Load every record of `records` (resolved against `manifest`); failures are
/// returned per record so callers can collect them.
pub fn load_records(manifest: &DatasetManifest, records: &[ImageRecord]) -> Vec<Result<Tensor>> {
    records.iter().map(|r| load_rgb(&manifest.resolve(r))).collect()
}

/// Load all records or fail on the first unreadable image.
pub fn load_all(manifest: &DatasetManifest, records: &[ImageRecord]) -> Result<Vec<Tensor>> {
    load_records(manifest, records).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_roundtrip_is_exact() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([(x * 40) as u8, (y * 70) as u8, (x + y) as u8]));
        let t = rgb_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 3, 5]);
        assert_eq!(tensor_to_rgb(&t).unwrap(), img);
    }

    #[test]
    fn png_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = RgbImage::from_fn(4, 4, |x, y| image::Rgb([x as u8 * 60, y as u8 * 60, 7]));
        save_png(&img, &p).unwrap();
        assert_eq!(load_rgb(&p).unwrap(), rgb_to_tensor(&img));
    }
}
