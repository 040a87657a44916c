//! Choosing the query crop: random catalog draws until the detector finds the
//! prompt above threshold.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::backend::{normalize_prompt, BackendError, Detector};
use crate::catalog::CatalogEntry;
use crate::detect::{best_detection, BBox};
use crate::image::{crop, CropError, RgbImage};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_THRESHOLD: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub prompt: String,
    /// Minimum detector confidence, exclusive.
    pub threshold: f32,
    pub k: usize,
    /// Fixed seed for the random draws; drawn from entropy by callers when absent.
    pub seed: Option<u64>,
    /// Cap on catalog draws; the catalog size when absent.
    pub max_attempts: Option<usize>,
    /// Padding added around the detected box, as a fraction of its longer side.
    pub pad_fraction: f32,
}

impl QuerySpec {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            threshold: DEFAULT_THRESHOLD,
            k: DEFAULT_K,
            seed: None,
            max_attempts: None,
            pad_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        normalize_prompt(&self.prompt).map_err(|_| QueryError::EmptyPrompt)?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(QueryError::BadThreshold(self.threshold));
        }
        if self.k == 0 {
            return Err(QueryError::BadK);
        }
        if self.max_attempts == Some(0) {
            return Err(QueryError::BadMaxAttempts);
        }
        if !(self.pad_fraction >= 0.0 && self.pad_fraction.is_finite()) {
            return Err(QueryError::BadPad(self.pad_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("threshold {0} is outside [0, 1]")]
    BadThreshold(f32),
    #[error("k must be at least 1")]
    BadK,
    #[error("max_attempts must be at least 1")]
    BadMaxAttempts,
    #[error("pad fraction {0} must be a non-negative number")]
    BadPad(f32),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("no image contains the prompt above the threshold ({draws} images tried)")]
    PromptNotFound { draws: usize, detector_calls: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Crop(#[from] CropError),
}

/// The query image cut from a catalog image at the detector's best box.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryCrop {
    pub source_path: String,
    pub bbox: BBox,
    pub detector_score: f32,
    pub crop: RgbImage,
    /// Detector invocations spent finding it.
    pub detector_calls: usize,
}

/// Draws catalog entries uniformly at random without replacement, runs the
/// detector on each, and returns the crop of the first image whose best
/// detection clears `spec.threshold`.
///
/// At most `min(entries.len(), spec.max_attempts)` images are drawn. Entries
/// `load` cannot decode use up a draw but no detector call.
pub fn select_query_image<R: Rng + ?Sized>(
    entries: &[CatalogEntry],
    detector: &dyn Detector,
    spec: &QuerySpec,
    rng: &mut R,
    mut load: impl FnMut(&CatalogEntry) -> Option<RgbImage>,
) -> Result<QueryCrop, QueryError> {
    spec.validate()?;
    if entries.is_empty() {
        return Err(QueryError::EmptyCatalog);
    }
    let prompt = normalize_prompt(&spec.prompt)?;
    let limit = spec.max_attempts.map_or(entries.len(), |m| m.min(entries.len()));

    // Partial Fisher-Yates: order[..draw] holds the entries drawn so far.
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut detector_calls = 0;
    for draw in 0..limit {
        let pick = rng.random_range(draw..entries.len());
        order.swap(draw, pick);
        let entry = &entries[order[draw]];
        let Some(image) = load(entry) else { continue };

        detector_calls += 1;
        let detections = detector.detect(&image, prompt)?;
        if let Some(best) = best_detection(&detections, spec.threshold) {
            let crop = crop(&image, best.bbox, spec.pad_fraction)?;
            return Ok(QueryCrop {
                source_path: entry.relative_path.clone(),
                bbox: best.bbox,
                detector_score: best.score,
                crop,
                detector_calls,
            });
        }
    }
    Err(QueryError::PromptNotFound { draws: limit, detector_calls })
}
