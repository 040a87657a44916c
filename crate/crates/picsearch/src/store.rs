//! Index directories on disk: `manifest`, `features.bin` and `skipped`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use picsearch_core::codec::{self, CodecError, FEATURES_FILE, MANIFEST_FILE, SKIPPED_FILE};
use picsearch_core::FeatureIndex;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no index at {0}")]
    NotFound(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("index at {path} is invalid: {source}")]
    Codec { path: PathBuf, source: CodecError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Where the index of `model_id` over the catalog at `root` lives.
pub fn index_dir(cache_dir: &Path, root: &str, model_id: &str) -> PathBuf {
    let key = codec::sha256_hex(root.as_bytes());
    cache_dir.join(&key[..16]).join(model_id)
}

/// Writes the index next to `dir` and renames it into place, so readers see
/// either the old index or the new one.
pub fn save_index(index: &FeatureIndex, dir: &Path) -> Result<(), StoreError> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(parent).map_err(io_err(parent))?;

    let features = codec::encode_features(index);
    let manifest = codec::encode_manifest(index, &features);
    for (name, bytes) in [
        (FEATURES_FILE, features.as_slice()),
        (SKIPPED_FILE, codec::encode_skipped(index).as_bytes()),
        (MANIFEST_FILE, manifest.as_bytes()),
    ] {
        let p = staging.path().join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }

    let retired = if dir.exists() {
        let old = tempfile::Builder::new().prefix(".retired-").tempdir_in(parent).map_err(io_err(parent))?;
        let old = old.keep();
        fs::remove_dir(&old).map_err(io_err(&old))?;
        fs::rename(dir, &old).map_err(io_err(dir))?;
        Some(old)
    } else {
        None
    };
    let staged = staging.keep();
    fs::rename(&staged, dir).map_err(io_err(dir))?;
    if let Some(old) = retired {
        let _ = fs::remove_dir_all(old);
    }
    Ok(())
}

pub fn load_index(dir: &Path) -> Result<FeatureIndex, StoreError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = match fs::read_to_string(&manifest_path) {
        Ok(m) => m,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(dir.into())),
        Err(e) => return Err(io_err(&manifest_path)(e)),
    };
    let features_path = dir.join(FEATURES_FILE);
    let features = fs::read(&features_path).map_err(io_err(&features_path))?;
    let skipped_path = dir.join(SKIPPED_FILE);
    let skipped = match fs::read_to_string(&skipped_path) {
        Ok(s) => Some(s),
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => return Err(io_err(&skipped_path)(e)),
    };
    codec::decode(&manifest, &features, skipped.as_deref())
        .map_err(|source| StoreError::Codec { path: dir.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use picsearch_core::{CatalogEntry, ContentHash, FeatureVector};

    fn index(n: usize) -> FeatureIndex {
        let rows = (0..n)
            .map(|i| {
                let entry = CatalogEntry {
                    relative_path: format!("img{i}.jpg"),
                    content_hash: ContentHash([i as u8; 32]),
                    byte_size: i as u64,
                    modified_time: 7,
                };
                (entry, FeatureVector::from_raw("m", vec![1.0 + i as f32, 2.0, 0.5]).unwrap())
            })
            .collect();
        FeatureIndex::from_rows("m", "rev", 3, rows, vec![]).unwrap()
    }

    #[test]
    fn round_trip_and_overwrite() {
        let cache = tempfile::tempdir().unwrap();
        let dir = index_dir(cache.path(), "/photos", "m");
        assert!(matches!(load_index(&dir), Err(StoreError::NotFound(_))));
        save_index(&index(3), &dir).unwrap();
        assert_eq!(load_index(&dir).unwrap(), index(3));
        save_index(&index(5), &dir).unwrap();
        assert_eq!(load_index(&dir).unwrap(), index(5));
        let leftovers: Vec<_> = fs::read_dir(dir.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn truncated_features_are_rejected() {
        let cache = tempfile::tempdir().unwrap();
        let dir = cache.path().join("idx");
        save_index(&index(3), &dir).unwrap();
        let f = dir.join(FEATURES_FILE);
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_index(&dir), Err(StoreError::Codec { .. })));
    }

    #[test]
    fn indexes_are_namespaced_by_root_and_model() {
        let c = Path::new("/cache");
        assert_ne!(index_dir(c, "/a", "m"), index_dir(c, "/b", "m"));
        assert_ne!(index_dir(c, "/a", "m"), index_dir(c, "/a", "n"));
        assert_eq!(index_dir(c, "/a", "m"), index_dir(c, "/a", "m"));
    }
}
