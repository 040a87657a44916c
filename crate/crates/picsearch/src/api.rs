//! JSON shapes shared by `picsearch search --json` and the HTTP service.

use picsearch_core::RankedResults;
use serde::{Deserialize, Serialize};

use crate::pipeline::SearchOutcome;

pub const DEFAULT_THUMBNAIL_SIZE: u32 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub prompt: String,
    #[serde(default)]
    pub threshold: Option<f32>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub model: String,
    pub detector: String,
    pub items: Vec<ResultItem>,
    pub provenance: Provenance,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub rank: usize,
    pub path: String,
    pub score: f64,
    pub thumbnail_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_path: String,
    pub source_url: String,
    /// `[x_min, y_min, x_max, y_max]` in source-image pixels.
    pub bbox: [f32; 4],
    pub detector_score: f32,
    pub prompt: String,
    pub threshold: f32,
    pub seed: u64,
    pub detector_calls: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub detect_ms: f64,
    pub extract_ms: f64,
    pub rank_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

impl ErrorBody {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { error: ErrorDetail { code: code.into(), message: message.into() } }
    }
}

pub fn image_url(path: &str, size: Option<u32>) -> String {
    let enc: String = form_urlencoded::byte_serialize(path.as_bytes()).collect();
    match size {
        Some(s) => format!("/api/image?path={enc}&size={s}"),
        None => format!("/api/image?path={enc}"),
    }
}

impl SearchResponse {
    pub fn from_outcome(model: &str, detector: &str, outcome: &SearchOutcome) -> Self {
        let RankedResults { items, provenance } = &outcome.results;
        let p = provenance.as_ref().expect("search results always carry provenance");
        Self {
            model: model.into(),
            detector: detector.into(),
            items: items
                .iter()
                .enumerate()
                .map(|(i, item)| ResultItem {
                    rank: i + 1,
                    path: item.path.clone(),
                    score: item.score,
                    thumbnail_url: image_url(&item.path, Some(DEFAULT_THUMBNAIL_SIZE)),
                })
                .collect(),
            provenance: Provenance {
                source_path: p.source_path.clone(),
                source_url: image_url(&p.source_path, None),
                bbox: p.bbox.to_array(),
                detector_score: p.detector_score,
                prompt: p.prompt.clone(),
                threshold: p.threshold,
                seed: p.seed,
                detector_calls: outcome.detector_calls,
            },
            timing: Timing {
                detect_ms: outcome.timing.detect_ms,
                extract_ms: outcome.timing.extract_ms,
                rank_ms: outcome.timing.rank_ms,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_urls_escape_paths() {
        assert_eq!(image_url("a b/c&d.jpg", Some(64)), "/api/image?path=a+b%2Fc%26d.jpg&size=64");
    }

    #[test]
    fn requests_need_only_a_prompt() {
        let r: SearchRequest = serde_json::from_str(r#"{"prompt":"cat"}"#).unwrap();
        assert_eq!(r.prompt, "cat");
        assert_eq!((r.threshold, r.k, r.seed), (None, None, None));
        assert!(serde_json::from_str::<SearchRequest>(r#"{"prompt":"cat","bogus":1}"#).is_err());
    }
}
