//! Model contracts shared by the real inference runtime and the stubs.

use alloc::string::String;
use alloc::vec::Vec;

use crate::detect::Detection;
use crate::image::RgbImage;
use crate::vector::FeatureVector;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("inference failed: {0}")]
    InferenceFailure(String),
    #[error("prompt is empty")]
    EmptyPrompt,
}

/// Turns an image into a unit-norm embedding.
pub trait FeatureExtractor: Send + Sync {
    fn model_id(&self) -> &str;
    /// Content hash of the model; indexes built with another revision are stale.
    fn revision(&self) -> &str;
    fn feature_dim(&self) -> usize;
    /// Deterministic for identical inputs.
    fn extract(&self, image: &RgbImage) -> Result<FeatureVector, BackendError>;
}

/// Text-conditioned object detector.
pub trait Detector: Send + Sync {
    fn model_id(&self) -> &str;
    /// All candidate boxes for a single prompt, unfiltered by score, with
    /// boxes inside the image and scores in `[0, 1]`.
    fn detect(&self, image: &RgbImage, prompt: &str) -> Result<Vec<Detection>, BackendError>;
}

/// Trims a prompt, rejecting blank ones.
pub fn normalize_prompt(prompt: &str) -> Result<&str, BackendError> {
    match prompt.trim() {
        "" => Err(BackendError::EmptyPrompt),
        p => Ok(p),
    }
}
