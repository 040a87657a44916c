//! Decoded 8-bit RGB images and box cropping.

use alloc::vec::Vec;

use crate::detect::BBox;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
}

/// A row-major, 3-channel, 8-bit image.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl core::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImageError::BufferSize { expected, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    /// Image filled with a single color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImageError> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// # Panics
    /// If `(x, y)` is outside the image.
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// The box covering the whole image.
    pub fn full_box(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width as f32, self.height as f32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum CropError {
    #[error("bounding box {0:?} is not a valid box")]
    InvalidBox(BBox),
    #[error("bounding box {0:?} has zero area inside the image")]
    DegenerateBox(BBox),
}

/// Cuts `bbox` out of `image`.
///
/// The box is grown by `pad_fraction * max(box_width, box_height)` on every
/// side, snapped outwards to whole pixels and clamped to the image.
pub fn crop(image: &RgbImage, bbox: BBox, pad_fraction: f32) -> Result<RgbImage, CropError> {
    if !bbox.is_well_formed() || !pad_fraction.is_finite() || pad_fraction < 0.0 {
        return Err(CropError::InvalidBox(bbox));
    }
    let pad = pad_fraction * bbox.width().max(bbox.height());
    let clamp_x = |v: f32| v.clamp(0.0, image.width as f32);
    let clamp_y = |v: f32| v.clamp(0.0, image.height as f32);
    let x0 = libm::floorf(clamp_x(bbox.x_min - pad)) as u32;
    let y0 = libm::floorf(clamp_y(bbox.y_min - pad)) as u32;
    let x1 = libm::ceilf(clamp_x(bbox.x_max + pad)) as u32;
    let y1 = libm::ceilf(clamp_y(bbox.y_max + pad)) as u32;
    if x1 <= x0 || y1 <= y0 {
        return Err(CropError::DegenerateBox(bbox));
    }

    let (w, h) = (x1 - x0, y1 - y0);
    let row_len = image.width as usize * 3;
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for y in y0..y1 {
        let start = y as usize * row_len + x0 as usize * 3;
        data.extend_from_slice(&image.data[start..start + w as usize * 3]);
    }
    Ok(RgbImage { width: w, height: h, data })
}
