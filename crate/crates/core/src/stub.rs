//! Deterministic stand-ins for the neural models, used to exercise the whole
//! pipeline without model files.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use crate::backend::{normalize_prompt, BackendError, Detector, FeatureExtractor};
use crate::detect::{sanitize_all, BBox, Detection};
use crate::image::RgbImage;
use crate::vector::FeatureVector;

pub const QUADRANT_DIM: usize = 12;

/// Embeds an image as its mean color in each quadrant, scaled to `[0, 1]`
/// and flattened as `[top-left rgb, top-right rgb, bottom-left rgb,
/// bottom-right rgb]`, then L2-normalized.
///
/// Quadrants split at `ceil(w/2)` / `floor(w/2)`, so on odd sizes the middle
/// row/column belongs to both halves. All-black images have no direction and
/// fail to embed.
#[derive(Debug, Clone)]
pub struct QuadrantMeanExtractor {
    model_id: String,
    revision: String,
}

impl QuadrantMeanExtractor {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self { model_id: model_id.into(), revision: String::from("quadrant-mean-v1") }
    }

    /// Raw (unnormalized) quadrant means.
    pub fn quadrant_means(image: &RgbImage) -> [f32; QUADRANT_DIM] {
        let (w, h) = (image.width(), image.height());
        let cols = [(0, w.div_ceil(2)), (w / 2, w)];
        let rows = [(0, h.div_ceil(2)), (h / 2, h)];
        let mut out = [0f32; QUADRANT_DIM];
        for (qy, &(y0, y1)) in rows.iter().enumerate() {
            for (qx, &(x0, x1)) in cols.iter().enumerate() {
                let mut sum = [0u64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.pixel(x, y);
                        for c in 0..3 {
                            sum[c] += p[c] as u64;
                        }
                    }
                }
                let n = ((x1 - x0) as u64 * (y1 - y0) as u64) as f64;
                let q = qy * 2 + qx;
                for c in 0..3 {
                    out[q * 3 + c] = (sum[c] as f64 / n / 255.0) as f32;
                }
            }
        }
        out
    }
}

impl FeatureExtractor for QuadrantMeanExtractor {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn revision(&self) -> &str {
        &self.revision
    }

    fn feature_dim(&self) -> usize {
        QUADRANT_DIM
    }

    fn extract(&self, image: &RgbImage) -> Result<FeatureVector, BackendError> {
        FeatureVector::from_raw(self.model_id.clone(), Self::quadrant_means(image).to_vec())
            .map_err(|e| BackendError::InferenceFailure(alloc::format!("{e}")))
    }
}

/// Identity of an image's decoded pixels (dimensions included).
pub fn image_fingerprint(image: &RgbImage) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.as_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScriptedRegion {
    /// The whole image, whatever its size.
    Full,
    Box(BBox),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedBox {
    pub region: ScriptedRegion,
    pub score: f32,
}

/// A detector that answers from a fixture table keyed by (image pixels,
/// prompt). Prompts match case-insensitively after trimming; unknown pairs
/// yield no detections. Counts its calls.
#[derive(Debug, Default)]
pub struct ScriptedDetector {
    model_id: String,
    table: BTreeMap<([u8; 32], String), Vec<ScriptedBox>>,
    calls: AtomicUsize,
}

fn prompt_key(prompt: &str) -> String {
    prompt.trim().to_lowercase()
}

impl ScriptedDetector {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self { model_id: model_id.into(), ..Self::default() }
    }

    /// Adds boxes reported for `image` under `prompt`.
    pub fn script(&mut self, image: &RgbImage, prompt: &str, boxes: impl IntoIterator<Item = ScriptedBox>) {
        self.script_fingerprint(image_fingerprint(image), prompt, boxes);
    }

    pub fn script_fingerprint(
        &mut self,
        fingerprint: [u8; 32],
        prompt: &str,
        boxes: impl IntoIterator<Item = ScriptedBox>,
    ) {
        self.table.entry((fingerprint, prompt_key(prompt))).or_default().extend(boxes);
    }

    /// Number of `detect` calls so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl Detector for ScriptedDetector {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn detect(&self, image: &RgbImage, prompt: &str) -> Result<Vec<Detection>, BackendError> {
        let prompt = normalize_prompt(prompt)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = (image_fingerprint(image), prompt_key(prompt));
        let Some(boxes) = self.table.get(&key) else {
            return Ok(Vec::new());
        };
        let raw = boxes
            .iter()
            .map(|b| Detection {
                bbox: match b.region {
                    ScriptedRegion::Full => image.full_box(),
                    ScriptedRegion::Box(bbox) => bbox,
                },
                score: b.score,
                label_index: 0,
            })
            .collect();
        Ok(sanitize_all(raw, image.width(), image.height()))
    }
}
