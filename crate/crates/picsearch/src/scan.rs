//! Walking a catalog directory into a [`CatalogSnapshot`].

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use picsearch_core::catalog::CatalogError;
use picsearch_core::{CatalogEntry, CatalogSnapshot, ContentHash};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const DEFAULT_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "bmp", "webp"];

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("catalog root {0} does not exist")]
    RootNotFound(PathBuf),
    #[error("catalog root {0} is not a directory")]
    RootNotADirectory(PathBuf),
    #[error("catalog root {0} is not valid UTF-8")]
    RootNotUtf8(PathBuf),
    #[error("cannot read catalog root {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// A file the scan found but could not fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unreadable {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ScanReport {
    pub snapshot: CatalogSnapshot,
    pub unreadable: Vec<Unreadable>,
}

pub fn default_extensions() -> BTreeSet<String> {
    DEFAULT_EXTENSIONS.iter().map(|e| e.to_string()).collect()
}

/// Absolute, symlink-free form of a catalog root, checked to be a directory.
pub fn canonical_root(root: &Path) -> Result<PathBuf, ScanError> {
    let canonical = match root.canonicalize() {
        Ok(p) => p,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ScanError::RootNotFound(root.to_path_buf()))
        }
        Err(source) => return Err(ScanError::Io { path: root.to_path_buf(), source }),
    };
    if !canonical.is_dir() {
        return Err(ScanError::RootNotADirectory(root.to_path_buf()));
    }
    Ok(canonical)
}

pub fn hash_file(path: &Path) -> io::Result<(ContentHash, u64)> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((ContentHash(hasher.finalize().into()), total))
}

fn unix_seconds(t: SystemTime) -> i64 {
    match t.duration_since(UNIX_EPOCH) {
        Ok(d) => d.as_secs() as i64,
        Err(e) => -(e.duration().as_secs() as i64),
    }
}

/// Lists every regular file under `root` whose lowercase extension is in
/// `extensions`. Hidden (dot-prefixed) files and directories are skipped and
/// symlinks are not followed. Files that cannot be read are reported instead
/// of failing the scan.
pub fn scan_directory(root: &Path, extensions: &BTreeSet<String>) -> Result<ScanReport, ScanError> {
    scan_directory_reusing(root, extensions, None)
}

/// Like [`scan_directory`], but files whose size and modification time match
/// their entry in `previous` keep that entry's hash instead of being re-read.
pub fn scan_directory_reusing(
    root: &Path,
    extensions: &BTreeSet<String>,
    previous: Option<&CatalogSnapshot>,
) -> Result<ScanReport, ScanError> {
    let root = canonical_root(root)?;
    let root_str = root.to_str().ok_or_else(|| ScanError::RootNotUtf8(root.clone()))?.to_string();

    let mut entries = Vec::new();
    let mut unreadable = Vec::new();
    let walker = WalkDir::new(&root)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for item in walker {
        let item = match item {
            Ok(item) => item,
            Err(e) => {
                if e.depth() == 0 {
                    return Err(ScanError::Io {
                        path: root.clone(),
                        source: e.into_io_error().unwrap_or_else(|| io::Error::other("walk failed")),
                    });
                }
                let path = e.path().map(|p| relative(&root, p)).unwrap_or_default();
                unreadable.push(Unreadable { path, reason: e.to_string() });
                continue;
            }
        };
        if !item.file_type().is_file() {
            continue;
        }
        let ext = item.path().extension().and_then(|e| e.to_str()).map(str::to_lowercase);
        if !ext.is_some_and(|e| extensions.contains(&e)) {
            continue;
        }
        let rel = relative(&root, item.path());
        if item.path().strip_prefix(&root).ok().and_then(Path::to_str).is_none() {
            unreadable.push(Unreadable { path: rel, reason: "path is not valid UTF-8".into() });
            continue;
        }
        let metadata = item.metadata().ok();
        let modified = metadata.as_ref().and_then(|m| m.modified().ok()).map_or(0, unix_seconds);
        let size = metadata.as_ref().map(|m| m.len());
        let known = previous
            .and_then(|p| p.get(&rel))
            .filter(|e| Some(e.byte_size) == size && e.modified_time == modified);
        if let Some(e) = known {
            entries.push(e.clone());
            continue;
        }
        match hash_file(item.path()) {
            Ok((content_hash, byte_size)) => entries.push(CatalogEntry {
                relative_path: rel,
                content_hash,
                byte_size,
                modified_time: modified,
            }),
            Err(e) => unreadable.push(Unreadable { path: rel, reason: e.to_string() }),
        }
    }
    let snapshot = CatalogSnapshot::new(root_str, entries, unix_seconds(SystemTime::now()))?;
    Ok(ScanReport { snapshot, unreadable })
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}
