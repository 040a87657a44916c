//! Building and incrementally updating feature indexes.

use std::path::Path;

use picsearch_core::catalog::CatalogError;
use picsearch_core::index::{IndexError, SkippedEntry};
use picsearch_core::{diff_catalog, CatalogEntry, CatalogSnapshot, ChangeSet, FeatureExtractor, FeatureIndex, FeatureVector};

use crate::decode::load_image;
use crate::store::{self, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum IndexerError {
    #[error("index was built with model revision {index}, the model is now {model}; a full rebuild is required")]
    RevisionMismatch { index: String, model: String },
    #[error("index belongs to model `{index}`, not `{model}`")]
    ModelMismatch { index: String, model: String },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Progress callback: `(done, total)`.
pub type Progress<'a> = &'a mut dyn FnMut(usize, usize);

fn extract_all(
    root: &Path,
    entries: &[&CatalogEntry],
    extractor: &dyn FeatureExtractor,
    progress: Progress<'_>,
) -> (Vec<(CatalogEntry, FeatureVector)>, Vec<SkippedEntry>) {
    let mut rows = Vec::with_capacity(entries.len());
    let mut skipped = Vec::new();
    progress(0, entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let result = load_image(root, entry)
            .map_err(|e| e.to_string())
            .and_then(|img| extractor.extract(&img).map_err(|e| e.to_string()));
        match result {
            Ok(v) => rows.push(((*entry).clone(), v)),
            Err(reason) => skipped.push(SkippedEntry { entry: (*entry).clone(), reason }),
        }
        progress(i + 1, entries.len());
    }
    (rows, skipped)
}

/// One row per decodable entry; failures are recorded as skipped entries.
pub fn build_index(
    root: &Path,
    snapshot: &CatalogSnapshot,
    extractor: &dyn FeatureExtractor,
    progress: Progress<'_>,
) -> Result<FeatureIndex, IndexerError> {
    let entries: Vec<&CatalogEntry> = snapshot.entries().iter().collect();
    let (rows, skipped) = extract_all(root, &entries, extractor, progress);
    Ok(FeatureIndex::from_rows(
        extractor.model_id(),
        extractor.revision(),
        extractor.feature_dim(),
        rows,
        skipped,
    )?)
}

/// Re-extracts only added and modified entries; other rows are kept bit for bit.
pub fn update_index(
    root: &Path,
    index: &FeatureIndex,
    current: &CatalogSnapshot,
    changes: &ChangeSet,
    extractor: &dyn FeatureExtractor,
    progress: Progress<'_>,
) -> Result<FeatureIndex, IndexerError> {
    check_model(index, extractor)?;
    let todo: Vec<&CatalogEntry> = changes.added.iter().chain(&changes.modified).collect();
    let (rows, skipped) = extract_all(root, &todo, extractor, progress);
    Ok(index.updated(current, changes, rows, skipped)?)
}

pub fn check_model(index: &FeatureIndex, extractor: &dyn FeatureExtractor) -> Result<(), IndexerError> {
    if index.model_id() != extractor.model_id() {
        return Err(IndexerError::ModelMismatch {
            index: index.model_id().into(),
            model: extractor.model_id().into(),
        });
    }
    if index.model_revision() != extractor.revision() {
        return Err(IndexerError::RevisionMismatch {
            index: index.model_revision().into(),
            model: extractor.revision().into(),
        });
    }
    Ok(())
}

/// Changes between what an index covers and the current catalog.
pub fn pending_changes(index: &FeatureIndex, current: &CatalogSnapshot) -> Result<ChangeSet, IndexerError> {
    Ok(diff_catalog(&index.covered_snapshot(current.root()), current)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshKind {
    Built,
    Updated,
    Reused,
}

#[derive(Debug, Clone)]
pub struct RefreshOutcome {
    pub index: FeatureIndex,
    pub kind: RefreshKind,
    pub added: usize,
    pub removed: usize,
    pub modified: usize,
    pub unchanged: usize,
}

/// Brings the stored index for `current` up to date and saves it when it
/// changed. Without `force` an existing index of the same model revision is
/// updated from the catalog diff; otherwise it is rebuilt from scratch.
pub fn refresh_index(
    root: &Path,
    index_dir: &Path,
    current: &CatalogSnapshot,
    extractor: &dyn FeatureExtractor,
    force: bool,
    progress: Progress<'_>,
) -> Result<RefreshOutcome, IndexerError> {
    let existing = match store::load_index(index_dir) {
        Ok(index) if !force && check_model(&index, extractor).is_ok() => Some(index),
        Ok(_) | Err(StoreError::NotFound(_)) | Err(StoreError::Codec { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let outcome = match existing {
        Some(index) => {
            let changes = pending_changes(&index, current)?;
            let unchanged = current.len() - changes.added.len() - changes.modified.len();
            let (added, removed, modified) = (changes.added.len(), changes.removed.len(), changes.modified.len());
            if changes.is_empty() {
                RefreshOutcome { index, kind: RefreshKind::Reused, added, removed, modified, unchanged }
            } else {
                let index = update_index(root, &index, current, &changes, extractor, progress)?;
                RefreshOutcome { index, kind: RefreshKind::Updated, added, removed, modified, unchanged }
            }
        }
        None => {
            let index = build_index(root, current, extractor, progress)?;
            RefreshOutcome { index, kind: RefreshKind::Built, added: current.len(), removed: 0, modified: 0, unchanged: 0 }
        }
    };
    if outcome.kind != RefreshKind::Reused {
        store::save_index(&outcome.index, index_dir)?;
    }
    Ok(outcome)
}
