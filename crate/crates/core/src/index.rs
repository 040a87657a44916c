//! The per-model feature index and exhaustive cosine ranking.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::catalog::{is_valid_relative_path, CatalogEntry, CatalogSnapshot, ChangeSet};
use crate::detect::BBox;
use crate::vector::{dot, norm, FeatureVector, NORM_TOLERANCE};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("feature dimension must be positive")]
    ZeroDimension,
    #[error("expected {expected} features per row, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector from model {actual:?} does not belong in an index of {expected:?}")]
    ModelMismatch { expected: String, actual: String },
    #[error("matrix holds {values} values, not a multiple of {rows} rows")]
    MatrixShape { rows: usize, values: usize },
    #[error("rows are not sorted by unique path at {0:?}")]
    Unsorted(String),
    #[error("invalid path {0:?}")]
    InvalidPath(String),
    #[error("row {row} is not a finite unit vector")]
    BadRow { row: usize },
    #[error("{0:?} is listed both as indexed and as skipped")]
    SkippedAndIndexed(String),
    #[error("k must be at least 1")]
    ZeroK,
}

/// An image the index could not embed, kept so the index still accounts for
/// every catalog entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedEntry {
    pub entry: CatalogEntry,
    pub reason: String,
}

/// Unit-norm feature rows for one catalog under one model, sorted by path.
///
/// The matrix is stored row-major exactly as it is written to disk, so
/// unchanged rows survive updates and round trips bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    model_id: String,
    model_revision: String,
    feature_dim: usize,
    entries: Vec<CatalogEntry>,
    matrix: Vec<f32>,
    skipped: Vec<SkippedEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub path: String,
    pub score: f64,
}

/// Where a query came from: the catalog image, box and detector score that
/// produced the query crop.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryProvenance {
    pub source_path: String,
    pub bbox: BBox,
    pub detector_score: f32,
    pub prompt: String,
    pub threshold: f32,
    pub seed: u64,
}

/// Results in descending score order, ties by ascending path.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResults {
    pub items: Vec<RankedItem>,
    pub provenance: Option<QueryProvenance>,
}

fn row_is_unit(row: &[f32]) -> bool {
    row.iter().all(|v| v.is_finite()) && (norm(row) - 1.0).abs() <= NORM_TOLERANCE
}

fn by_score_then_path(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

impl FeatureIndex {
    /// Empty index for a model.
    pub fn empty(
        model_id: impl Into<String>,
        model_revision: impl Into<String>,
        feature_dim: usize,
    ) -> Result<Self, IndexError> {
        Self::from_parts(model_id, model_revision, feature_dim, Vec::new(), Vec::new(), Vec::new())
    }

    /// Builds an index from extracted rows; rows may come in any order.
    pub fn from_rows(
        model_id: impl Into<String>,
        model_revision: impl Into<String>,
        feature_dim: usize,
        mut rows: Vec<(CatalogEntry, FeatureVector)>,
        skipped: Vec<SkippedEntry>,
    ) -> Result<Self, IndexError> {
        let model_id = model_id.into();
        if let Some((_, v)) = rows.iter().find(|(_, v)| v.model_id() != model_id) {
            return Err(IndexError::ModelMismatch {
                expected: model_id,
                actual: v.model_id().into(),
            });
        }
        if let Some((_, v)) = rows.iter().find(|(_, v)| v.dim() != feature_dim) {
            return Err(IndexError::DimensionMismatch { expected: feature_dim, actual: v.dim() });
        }
        rows.sort_by(|a, b| a.0.relative_path.cmp(&b.0.relative_path));
        let mut entries = Vec::with_capacity(rows.len());
        let mut matrix = Vec::with_capacity(rows.len() * feature_dim);
        for (entry, vector) in rows {
            entries.push(entry);
            matrix.extend_from_slice(vector.values());
        }
        Self::from_parts(model_id, model_revision, feature_dim, entries, matrix, skipped)
    }

    /// Assembles an index from its stored parts, checking every invariant.
    pub fn from_parts(
        model_id: impl Into<String>,
        model_revision: impl Into<String>,
        feature_dim: usize,
        entries: Vec<CatalogEntry>,
        matrix: Vec<f32>,
        mut skipped: Vec<SkippedEntry>,
    ) -> Result<Self, IndexError> {
        if feature_dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        if matrix.len() != entries.len() * feature_dim {
            return Err(IndexError::MatrixShape { rows: entries.len(), values: matrix.len() });
        }
        if let Some(e) = entries.iter().find(|e| !is_valid_relative_path(&e.relative_path)) {
            return Err(IndexError::InvalidPath(e.relative_path.clone()));
        }
        if let Some(w) = entries.windows(2).find(|w| w[0].relative_path >= w[1].relative_path) {
            return Err(IndexError::Unsorted(w[1].relative_path.clone()));
        }
        if let Some(row) = matrix.chunks_exact(feature_dim).position(|r| !row_is_unit(r)) {
            return Err(IndexError::BadRow { row });
        }
        skipped.sort_by(|a, b| a.entry.relative_path.cmp(&b.entry.relative_path));
        if let Some(s) = skipped.iter().find(|s| !is_valid_relative_path(&s.entry.relative_path)) {
            return Err(IndexError::InvalidPath(s.entry.relative_path.clone()));
        }
        if let Some(w) = skipped.windows(2).find(|w| w[0].entry.relative_path == w[1].entry.relative_path) {
            return Err(IndexError::Unsorted(w[1].entry.relative_path.clone()));
        }
        let indexed: BTreeSet<&str> = entries.iter().map(|e| e.relative_path.as_str()).collect();
        if let Some(s) = skipped.iter().find(|s| indexed.contains(s.entry.relative_path.as_str())) {
            return Err(IndexError::SkippedAndIndexed(s.entry.relative_path.clone()));
        }
        Ok(Self {
            model_id: model_id.into(),
            model_revision: model_revision.into(),
            feature_dim,
            entries,
            matrix,
            skipped,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn model_revision(&self) -> &str {
        &self.model_revision
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn skipped(&self) -> &[SkippedEntry] {
        &self.skipped
    }

    /// Row-major `len() x feature_dim()` matrix.
    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> (&CatalogEntry, &[f32]) {
        let d = self.feature_dim;
        (&self.entries[i], &self.matrix[i * d..(i + 1) * d])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&CatalogEntry, &[f32])> {
        self.entries.iter().zip(self.matrix.chunks_exact(self.feature_dim))
    }

    /// The catalog this index was built from: indexed and skipped entries.
    pub fn covered_snapshot(&self, root: &str) -> CatalogSnapshot {
        let all = self.entries.iter().chain(self.skipped.iter().map(|s| &s.entry)).cloned().collect();
        CatalogSnapshot::new(root, all, 0).expect("index paths are valid and unique")
    }

    /// Top `k` rows by cosine similarity to `query`, found by scoring every row.
    ///
    /// Rows and query are unit vectors, so the score is the dot product.
    pub fn rank(&self, query: &FeatureVector, k: usize) -> Result<RankedResults, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.model_id() != self.model_id {
            return Err(IndexError::ModelMismatch {
                expected: self.model_id.clone(),
                actual: query.model_id().into(),
            });
        }
        if query.dim() != self.feature_dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.feature_dim,
                actual: query.dim(),
            });
        }
        let mut scored: Vec<(f64, &str)> = self
            .rows()
            .map(|(e, row)| (dot(row, query.values()), e.relative_path.as_str()))
            .collect();
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_score_then_path);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_score_then_path);
        Ok(RankedResults {
            items: scored
                .into_iter()
                .map(|(score, path)| RankedItem { path: path.into(), score })
                .collect(),
            provenance: None,
        })
    }

    /// Applies a catalog change set.
    ///
    /// Removed and modified paths are dropped; `fresh` holds the rows
    /// extracted for added and modified paths, `fresh_skipped` the ones that
    /// failed. Kept rows take their metadata from `current` and their
    /// features unchanged from `self`.
    pub fn updated(
        &self,
        current: &CatalogSnapshot,
        changes: &ChangeSet,
        fresh: Vec<(CatalogEntry, FeatureVector)>,
        fresh_skipped: Vec<SkippedEntry>,
    ) -> Result<Self, IndexError> {
        let dropped: BTreeSet<&str> = changes
            .removed
            .iter()
            .map(String::as_str)
            .chain(changes.modified.iter().map(|e| e.relative_path.as_str()))
            .collect();
        let refresh = |e: &CatalogEntry| current.get(&e.relative_path).cloned().unwrap_or_else(|| e.clone());

        let mut kept: Vec<(CatalogEntry, &[f32])> = self
            .rows()
            .filter(|(e, _)| !dropped.contains(e.relative_path.as_str()))
            .map(|(e, row)| (refresh(e), row))
            .collect();
        for (entry, vector) in &fresh {
            if vector.model_id() != self.model_id {
                return Err(IndexError::ModelMismatch {
                    expected: self.model_id.clone(),
                    actual: vector.model_id().into(),
                });
            }
            if vector.dim() != self.feature_dim {
                return Err(IndexError::DimensionMismatch {
                    expected: self.feature_dim,
                    actual: vector.dim(),
                });
            }
            kept.push((entry.clone(), vector.values()));
        }
        kept.sort_by(|a, b| a.0.relative_path.cmp(&b.0.relative_path));

        let mut entries = Vec::with_capacity(kept.len());
        let mut matrix = Vec::with_capacity(kept.len() * self.feature_dim);
        for (entry, row) in kept {
            entries.push(entry);
            matrix.extend_from_slice(row);
        }
        let skipped = self
            .skipped
            .iter()
            .filter(|s| !dropped.contains(s.entry.relative_path.as_str()))
            .map(|s| SkippedEntry { entry: refresh(&s.entry), reason: s.reason.clone() })
            .chain(fresh_skipped)
            .collect();
        Self::from_parts(
            self.model_id.clone(),
            self.model_revision.clone(),
            self.feature_dim,
            entries,
            matrix,
            skipped,
        )
    }
}
