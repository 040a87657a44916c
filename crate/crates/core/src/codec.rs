//! On-disk encoding of a [`FeatureIndex`].
//!
//! An index directory holds three files:
//!
//! * `features.bin`: the feature matrix as little-endian `f32`, row-major,
//!   `row_count x feature_dim` values, no header.
//! * `manifest`: UTF-8 text. A magic line, `key=value` header lines
//!   (`schema_version`, `model_id`, `model_revision`, `feature_dim`,
//!   `row_count`, `features_sha256`), a `rows` line, then one tab-separated
//!   line per row: `relative_path content_hash byte_size modified_time
//!   row_ordinal`.
//! * `skipped`: tab-separated `relative_path content_hash byte_size
//!   modified_time reason` lines for catalog entries that could not be
//!   embedded.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use sha2::{Digest, Sha256};

use crate::catalog::{CatalogEntry, ContentHash};
use crate::index::{FeatureIndex, IndexError, SkippedEntry, SCHEMA_VERSION};

pub const MANIFEST_FILE: &str = "manifest";
pub const FEATURES_FILE: &str = "features.bin";
pub const SKIPPED_FILE: &str = "skipped";

const MAGIC: &str = "picsearch-feature-index";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("not a feature index manifest")]
    BadMagic,
    #[error("manifest is missing `{0}`")]
    MissingField(&'static str),
    #[error("manifest field `{field}` has invalid value {value:?}")]
    BadField { field: &'static str, value: String },
    #[error("unsupported schema version {0}")]
    SchemaUnsupported(u32),
    #[error("features.bin checksum mismatch: manifest {expected}, file {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("manifest and matrix disagree: {0}")]
    Inconsistent(String),
    #[error("malformed line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_features(index: &FeatureIndex) -> Vec<u8> {
    index.matrix().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn entry_fields(out: &mut String, e: &CatalogEntry) {
    let _ = write!(out, "{}\t{}\t{}\t{}", e.relative_path, e.content_hash, e.byte_size, e.modified_time);
}

/// Manifest text for `index`; `features` must be [`encode_features`]'s output.
pub fn encode_manifest(index: &FeatureIndex, features: &[u8]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "schema_version={SCHEMA_VERSION}");
    let _ = writeln!(out, "model_id={}", index.model_id());
    let _ = writeln!(out, "model_revision={}", index.model_revision());
    let _ = writeln!(out, "feature_dim={}", index.feature_dim());
    let _ = writeln!(out, "row_count={}", index.len());
    let _ = writeln!(out, "features_sha256={}", sha256_hex(features));
    out.push_str("rows\n");
    for (ordinal, entry) in index.entries().iter().enumerate() {
        entry_fields(&mut out, entry);
        let _ = writeln!(out, "\t{ordinal}");
    }
    out
}

pub fn encode_skipped(index: &FeatureIndex) -> String {
    let mut out = String::new();
    for s in index.skipped() {
        entry_fields(&mut out, &s.entry);
        let reason: String =
            s.reason.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
        let _ = writeln!(out, "\t{reason}");
    }
    out
}

struct Header {
    model_id: String,
    model_revision: String,
    feature_dim: usize,
    row_count: usize,
    features_sha256: String,
}

fn parse_num<T: core::str::FromStr>(field: &'static str, value: &str) -> Result<T, CodecError> {
    value.parse().map_err(|_| CodecError::BadField { field, value: value.to_string() })
}

fn parse_entry(fields: &[&str], line: usize) -> Result<CatalogEntry, CodecError> {
    let bad = |reason: &str| CodecError::BadLine { line, reason: reason.to_string() };
    Ok(CatalogEntry {
        relative_path: fields[0].to_string(),
        content_hash: fields[1].parse::<ContentHash>().map_err(|_| bad("bad content hash"))?,
        byte_size: fields[2].parse().map_err(|_| bad("bad byte size"))?,
        modified_time: fields[3].parse().map_err(|_| bad("bad modified time"))?,
    })
}

fn parse_header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<Header, CodecError> {
    if lines.next().map(|(_, l)| l) != Some(MAGIC) {
        return Err(CodecError::BadMagic);
    }
    let (mut version, mut model_id, mut revision, mut dim, mut rows, mut sum) =
        (None, None, None, None, None, None);
    for (_, line) in lines.by_ref() {
        if line == "rows" {
            break;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CodecError::BadField { field: "header", value: line.to_string() });
        };
        match key {
            "schema_version" => version = Some(parse_num::<u32>("schema_version", value)?),
            "model_id" => model_id = Some(value.to_string()),
            "model_revision" => revision = Some(value.to_string()),
            "feature_dim" => dim = Some(parse_num::<usize>("feature_dim", value)?),
            "row_count" => rows = Some(parse_num::<usize>("row_count", value)?),
            "features_sha256" => sum = Some(value.to_string()),
            // Unknown keys are ignored so later minor additions stay readable.
            _ => {}
        }
    }
    let version = version.ok_or(CodecError::MissingField("schema_version"))?;
    if version != SCHEMA_VERSION {
        return Err(CodecError::SchemaUnsupported(version));
    }
    Ok(Header {
        model_id: model_id.ok_or(CodecError::MissingField("model_id"))?,
        model_revision: revision.ok_or(CodecError::MissingField("model_revision"))?,
        feature_dim: dim.ok_or(CodecError::MissingField("feature_dim"))?,
        row_count: rows.ok_or(CodecError::MissingField("row_count"))?,
        features_sha256: sum.ok_or(CodecError::MissingField("features_sha256"))?,
    })
}

fn decode_skipped(text: &str) -> Result<Vec<SkippedEntry>, CodecError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        if fields.len() != 5 {
            return Err(CodecError::BadLine { line: i + 1, reason: "expected 5 fields".into() });
        }
        out.push(SkippedEntry { entry: parse_entry(&fields, i + 1)?, reason: fields[4].to_string() });
    }
    Ok(out)
}

/// Decodes an index, verifying the checksum, the matrix size against the
/// header, row ordinals, and every [`FeatureIndex`] invariant.
pub fn decode(manifest: &str, features: &[u8], skipped: Option<&str>) -> Result<FeatureIndex, CodecError> {
    let mut lines = manifest.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header = parse_header(&mut lines)?;

    let expected_bytes = header
        .row_count
        .checked_mul(header.feature_dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CodecError::Inconsistent("row_count x feature_dim overflows".into()))?;
    if features.len() != expected_bytes {
        return Err(CodecError::Inconsistent(format!(
            "manifest declares {} rows x {} dims ({} bytes) but features.bin has {} bytes",
            header.row_count,
            header.feature_dim,
            expected_bytes,
            features.len()
        )));
    }
    let actual = sha256_hex(features);
    if !actual.eq_ignore_ascii_case(&header.features_sha256) {
        return Err(CodecError::ChecksumMismatch { expected: header.features_sha256, actual });
    }

    let mut entries = Vec::with_capacity(header.row_count);
    for (line_no, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(CodecError::BadLine { line: line_no, reason: "expected 5 fields".into() });
        }
        let ordinal: usize = fields[4]
            .parse()
            .map_err(|_| CodecError::BadLine { line: line_no, reason: "bad row ordinal".into() })?;
        if ordinal != entries.len() {
            return Err(CodecError::BadLine { line: line_no, reason: format!("row ordinal {ordinal} out of sequence") });
        }
        entries.push(parse_entry(&fields, line_no)?);
    }
    if entries.len() != header.row_count {
        return Err(CodecError::Inconsistent(format!(
            "manifest declares {} rows but lists {}",
            header.row_count,
            entries.len()
        )));
    }

    let matrix = features
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let skipped = skipped.map(decode_skipped).transpose()?.unwrap_or_default();
    Ok(FeatureIndex::from_parts(
        header.model_id,
        header.model_revision,
        header.feature_dim,
        entries,
        matrix,
        skipped,
    )?)
}
