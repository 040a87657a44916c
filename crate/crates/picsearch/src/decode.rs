//! Decoding catalog files into RGB buffers.

use std::path::Path;

use image::{DynamicImage, ImageReader};
use picsearch_core::{CatalogEntry, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },
}

/// Loads a catalog entry relative to `root`.
pub fn load_image(root: &Path, entry: &CatalogEntry) -> Result<RgbImage, DecodeError> {
    load_path(&root.join(&entry.relative_path))
}

pub fn load_path(path: &Path) -> Result<RgbImage, DecodeError> {
    let shown = path.display().to_string();
    let reader = ImageReader::open(path)
        .map_err(|source| DecodeError::Io { path: shown.clone(), source })?
        .with_guessed_format()
        .map_err(|source| DecodeError::Io { path: shown.clone(), source })?;
    let decoded = reader
        .decode()
        .map_err(|e| DecodeError::Decode { path: shown.clone(), reason: e.to_string() })?;
    to_rgb(decoded).map_err(|reason| DecodeError::Decode { path: shown, reason })
}

pub fn decode_bytes(bytes: &[u8]) -> Result<RgbImage, DecodeError> {
    let decoded = image::load_from_memory(bytes)
        .map_err(|e| DecodeError::Decode { path: "<memory>".into(), reason: e.to_string() })?;
    to_rgb(decoded).map_err(|reason| DecodeError::Decode { path: "<memory>".into(), reason })
}

/// Grayscale is promoted to three equal channels; alpha is composited over
/// white.
pub fn to_rgb(image: DynamicImage) -> Result<RgbImage, String> {
    let (w, h) = (image.width(), image.height());
    let data = if image.color().has_alpha() {
        let rgba = image.into_rgba8();
        let mut out = Vec::with_capacity(w as usize * h as usize * 3);
        for px in rgba.pixels() {
            let a = px[3] as u32;
            for c in 0..3 {
                let v = px[c] as u32 * a + 255 * (255 - a);
                out.push(((v + 127) / 255) as u8);
            }
        }
        out
    } else {
        image.into_rgb8().into_raw()
    };
    RgbImage::new(w, h, data).map_err(|e| e.to_string())
}

/// Converts back for encoding (thumbnails).
pub fn to_dynamic(image: &RgbImage) -> DynamicImage {
    let buf = image::RgbImage::from_raw(image.width(), image.height(), image.as_bytes().to_vec())
        .expect("RgbImage buffers always match their dimensions");
    DynamicImage::ImageRgb8(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgba, RgbaImage};

    fn write(img: DynamicImage) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        img.save(&p).unwrap();
        (dir, p)
    }

    #[test]
    fn pure_red_png() {
        let (_d, p) = write(DynamicImage::ImageRgb8(image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]))));
        let img = load_path(&p).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert!(img.as_bytes().chunks(3).all(|px| px == [255, 0, 0]));
    }

    #[test]
    fn grayscale_is_promoted() {
        let (_d, p) = write(DynamicImage::ImageLuma8(GrayImage::from_pixel(3, 1, Luma([77]))));
        assert!(load_path(&p).unwrap().as_bytes().iter().all(|&v| v == 77));
    }

    #[test]
    fn alpha_is_composited_over_white() {
        let mut rgba = RgbaImage::new(2, 1);
        rgba.put_pixel(0, 0, Rgba([0, 0, 255, 0]));
        rgba.put_pixel(1, 0, Rgba([0, 0, 255, 255]));
        let (_d, p) = write(DynamicImage::ImageRgba8(rgba));
        assert_eq!(load_path(&p).unwrap().as_bytes(), [255, 255, 255, 0, 0, 255]);
    }

    #[test]
    fn garbage_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jpg");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(load_path(&p), Err(DecodeError::Decode { .. })));
        assert!(matches!(load_path(&dir.path().join("none.jpg")), Err(DecodeError::Io { .. })));
    }
}
