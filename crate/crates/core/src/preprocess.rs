//! Resize + normalize an [`RgbImage`] into a planar float tensor.

use alloc::vec::Vec;

use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    /// Resize both axes independently to the target size.
    Stretch,
    /// Scale so the image covers the target, then cut the centered window.
    ShorterSideCenterCrop,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessSpecError {
    #[error("target size must be at least 1x1")]
    EmptyTarget,
    #[error("std components must be finite and nonzero")]
    BadStd,
    #[error("scale and mean must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSpec {
    pub target_width: u32,
    pub target_height: u32,
    pub channel_order: ChannelOrder,
    /// Multiplier applied to raw 0..=255 values before mean/std.
    pub scale: f32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub resize_mode: ResizeMode,
}

impl PreprocessSpec {
    /// The usual ImageNet normalization at the given square size.
    pub fn imagenet(size: u32) -> Self {
        Self {
            target_width: size,
            target_height: size,
            channel_order: ChannelOrder::Rgb,
            scale: 1.0 / 255.0,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            resize_mode: ResizeMode::Stretch,
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessSpecError> {
        if self.target_width == 0 || self.target_height == 0 {
            return Err(PreprocessSpecError::EmptyTarget);
        }
        if self.std.iter().any(|s| *s == 0.0 || !s.is_finite()) {
            return Err(PreprocessSpecError::BadStd);
        }
        if !self.scale.is_finite() || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(PreprocessSpecError::NonFinite);
        }
        Ok(())
    }

    /// Where the target grid sits on a `src_w x src_h` image: returns
    /// `(scale_x, scale_y, offset_x, offset_y)` such that target coordinate
    /// `t` lies at source coordinate `(t + offset) * scale`.
    fn placement(&self, src_w: u32, src_h: u32) -> (f64, f64, f64, f64) {
        let (w, h) = (src_w as f64, src_h as f64);
        let (tw, th) = (self.target_width as f64, self.target_height as f64);
        match self.resize_mode {
            ResizeMode::Stretch => (w / tw, h / th, 0.0, 0.0),
            ResizeMode::ShorterSideCenterCrop => {
                let s = (tw / w).max(th / h);
                let rw = libm::round(w * s).max(tw);
                let rh = libm::round(h * s).max(th);
                let ox = libm::floor((rw - tw) / 2.0);
                let oy = libm::floor((rh - th) / 2.0);
                (w / rw, h / rh, ox, oy)
            }
        }
    }

    /// Maps a point given in target-tensor pixel coordinates back onto the
    /// source image.
    pub fn target_to_source(&self, src_w: u32, src_h: u32, x: f32, y: f32) -> (f32, f32) {
        let (sx, sy, ox, oy) = self.placement(src_w, src_h);
        (((x as f64 + ox) * sx) as f32, ((y as f64 + oy) * sy) as f32)
    }
}

/// Planar `(3, height, width)` float tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn shape(&self) -> [usize; 3] {
        [3, self.height, self.width]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Bilinear resize (half-pixel centers, edge clamped) followed by
/// `(raw * scale - mean[c]) / std[c]`.
///
/// `spec` is assumed valid; see [`PreprocessSpec::validate`].
pub fn preprocess(image: &RgbImage, spec: &PreprocessSpec) -> ImageTensor {
    let (tw, th) = (spec.target_width as usize, spec.target_height as usize);
    let (w, h) = (image.width() as usize, image.height() as usize);
    let (sx, sy, ox, oy) = spec.placement(image.width(), image.height());
    let src = image.as_bytes();

    let taps = |t: usize, offset: f64, scale: f64, len: usize| -> (usize, usize, f64) {
        let pos = ((t as f64 + offset + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f64)
    };
    let xs: Vec<_> = (0..tw).map(|x| taps(x, ox, sx, w)).collect();
    let ys: Vec<_> = (0..th).map(|y| taps(y, oy, sy, h)).collect();

    let source_channel = |c: usize| match spec.channel_order {
        ChannelOrder::Rgb => c,
        ChannelOrder::Bgr => 2 - c,
    };

    let mut data = alloc::vec![0f32; 3 * tw * th];
    for c in 0..3 {
        let sc = source_channel(c);
        let (scale, mean, std) = (spec.scale as f64, spec.mean[c] as f64, spec.std[c] as f64);
        let plane = &mut data[c * tw * th..(c + 1) * tw * th];
        for (ty, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (tx, &(x0, x1, fx)) in xs.iter().enumerate() {
                let px = |x: usize, y: usize| src[(y * w + x) * 3 + sc] as f64;
                let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
                let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
                let raw = top * (1.0 - fy) + bottom * fy;
                plane[ty * tw + tx] = ((raw * scale - mean) / std) as f32;
            }
        }
    }
    ImageTensor { height: th, width: tw, data }
}
