//! The full search: pick a query crop, embed it, rank the index.

use std::path::Path;
use std::time::Instant;

use picsearch_core::index::IndexError;
use picsearch_core::{
    select_query_image, BackendError, CatalogSnapshot, Detector, FeatureExtractor, FeatureIndex, QueryCrop,
    QueryError, QueryProvenance, QuerySpec, RankedResults,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decode::load_image;
use crate::indexer::{check_model, pending_changes};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("the catalog changed since the index was built ({added} added, {removed} removed, {modified} modified)")]
    StaleIndex { added: usize, removed: usize, modified: usize },
    #[error("index does not match the extractor: {0}")]
    ModelMismatch(String),
    #[error("embedding the query crop failed: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

impl SearchError {
    pub fn is_prompt_not_found(&self) -> bool {
        matches!(self, SearchError::Query(QueryError::PromptNotFound { .. }))
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTiming {
    pub detect_ms: f64,
    pub extract_ms: f64,
    pub rank_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub results: RankedResults,
    pub detector_calls: usize,
    pub timing: StageTiming,
}

pub struct SearchContext<'a> {
    pub root: &'a Path,
    /// The catalog as it is now.
    pub snapshot: &'a CatalogSnapshot,
    pub index: &'a FeatureIndex,
    pub extractor: &'a dyn FeatureExtractor,
    pub detector: &'a dyn Detector,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// The seed a search will use: the requested one, or a fresh random one.
pub fn resolve_seed(spec: &QuerySpec) -> u64 {
    spec.seed.unwrap_or_else(rand::random)
}

/// Draws catalog images with a generator seeded from `seed` until the detector
/// finds the prompt.
pub fn pick_query(
    root: &Path,
    snapshot: &CatalogSnapshot,
    detector: &dyn Detector,
    spec: &QuerySpec,
    seed: u64,
) -> Result<QueryCrop, QueryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    select_query_image(snapshot.entries(), detector, spec, &mut rng, |e| load_image(root, e).ok())
}

/// Embeds a query crop and ranks the index against it.
pub fn rank_crop(
    index: &FeatureIndex,
    extractor: &dyn FeatureExtractor,
    crop: &QueryCrop,
    spec: &QuerySpec,
    seed: u64,
) -> Result<(RankedResults, f64, f64), SearchError> {
    let t = Instant::now();
    let query = extractor.extract(&crop.crop)?;
    let extract_ms = ms_since(t);
    let t = Instant::now();
    let mut results = index.rank(&query, spec.k)?;
    let rank_ms = ms_since(t);
    results.provenance = Some(QueryProvenance {
        source_path: crop.source_path.clone(),
        bbox: crop.bbox,
        detector_score: crop.detector_score,
        prompt: spec.prompt.trim().to_string(),
        threshold: spec.threshold,
        seed,
    });
    Ok((results, extract_ms, rank_ms))
}

/// Runs one search. The index must cover exactly the current catalog and
/// come from this extractor.
pub fn search(ctx: &SearchContext<'_>, spec: &QuerySpec) -> Result<SearchOutcome, SearchError> {
    spec.validate()?;
    check_model(ctx.index, ctx.extractor).map_err(|e| SearchError::ModelMismatch(e.to_string()))?;
    let changes = pending_changes(ctx.index, ctx.snapshot)
        .map_err(|e| SearchError::ModelMismatch(e.to_string()))?;
    if !changes.is_empty() {
        return Err(SearchError::StaleIndex {
            added: changes.added.len(),
            removed: changes.removed.len(),
            modified: changes.modified.len(),
        });
    }

    let seed = resolve_seed(spec);
    let t = Instant::now();
    let crop = pick_query(ctx.root, ctx.snapshot, ctx.detector, spec, seed)?;
    let detect_ms = ms_since(t);
    let (results, extract_ms, rank_ms) = rank_crop(ctx.index, ctx.extractor, &crop, spec, seed)?;
    Ok(SearchOutcome {
        results,
        detector_calls: crop.detector_calls,
        timing: StageTiming { detect_ms, extract_ms, rank_ms },
    })
}
