//! Catalog snapshots of an image directory and the diff between two of them.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use sha2::{Digest, Sha256};

/// SHA-256 of a file's bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for ContentHash {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("invalid relative path {0:?}")]
    InvalidPath(String),
    #[error("duplicate path {0:?} in snapshot")]
    DuplicatePath(String),
    #[error("snapshots have different roots: {0:?} vs {1:?}")]
    RootMismatch(String, String),
}

/// Whether `path` is a forward-slash relative path that stays under its root
/// and can be written to a tab-separated line.
pub fn is_valid_relative_path(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains(['\\', '\t', '\n', '\r', '\0'])
        && path.split('/').all(|c| !c.is_empty() && c != "." && c != "..")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub relative_path: String,
    pub content_hash: ContentHash,
    pub byte_size: u64,
    /// Seconds since the Unix epoch.
    pub modified_time: i64,
}

/// Entries of one catalog root, sorted by path with no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogSnapshot {
    root: String,
    entries: Vec<CatalogEntry>,
    taken_at: i64,
}

impl CatalogSnapshot {
    /// Sorts `entries` by path and validates them.
    pub fn new(
        root: impl Into<String>,
        mut entries: Vec<CatalogEntry>,
        taken_at: i64,
    ) -> Result<Self, CatalogError> {
        if let Some(bad) = entries.iter().find(|e| !is_valid_relative_path(&e.relative_path)) {
            return Err(CatalogError::InvalidPath(bad.relative_path.clone()));
        }
        entries.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
        if let Some(w) = entries.windows(2).find(|w| w[0].relative_path == w[1].relative_path) {
            return Err(CatalogError::DuplicatePath(w[0].relative_path.clone()));
        }
        Ok(Self { root: root.into(), entries, taken_at })
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn taken_at(&self) -> i64 {
        self.taken_at
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&CatalogEntry> {
        self.entries
            .binary_search_by(|e| e.relative_path.as_str().cmp(path))
            .ok()
            .map(|i| &self.entries[i])
    }
}

/// What changed between two snapshots of the same root. Each list is sorted
/// by path and the three are disjoint.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChangeSet {
    pub added: Vec<CatalogEntry>,
    pub removed: Vec<String>,
    pub modified: Vec<CatalogEntry>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    pub fn change_count(&self) -> usize {
        self.added.len() + self.removed.len() + self.modified.len()
    }

    /// Applies the change set to a set of paths.
    pub fn apply_to_paths(&self, paths: &BTreeSet<String>) -> BTreeSet<String> {
        let mut out = paths.clone();
        for p in &self.removed {
            out.remove(p);
        }
        for e in self.added.iter().chain(&self.modified) {
            out.insert(e.relative_path.clone());
        }
        out
    }
}

/// Paths only in `new` are added, paths only in `old` are removed, and paths
/// in both whose content hash differs are modified. Metadata-only changes
/// (mtime, a touched file) are not modifications.
pub fn diff_catalog(old: &CatalogSnapshot, new: &CatalogSnapshot) -> Result<ChangeSet, CatalogError> {
    if old.root != new.root {
        return Err(CatalogError::RootMismatch(old.root.clone(), new.root.clone()));
    }
    let mut changes = ChangeSet::default();
    let (mut i, mut j) = (0, 0);
    let (a, b) = (&old.entries, &new.entries);
    while i < a.len() || j < b.len() {
        let order = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.relative_path.cmp(&y.relative_path),
            (Some(_), None) => core::cmp::Ordering::Less,
            _ => core::cmp::Ordering::Greater,
        };
        match order {
            core::cmp::Ordering::Less => {
                changes.removed.push(a[i].relative_path.clone());
                i += 1;
            }
            core::cmp::Ordering::Greater => {
                changes.added.push(b[j].clone());
                j += 1;
            }
            core::cmp::Ordering::Equal => {
                if a[i].content_hash != b[j].content_hash {
                    changes.modified.push(b[j].clone());
                }
                i += 1;
                j += 1;
            }
        }
    }
    Ok(changes)
}
