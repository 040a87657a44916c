//! `key = value` text files, used for model manifests and the config file.

use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("bad value for `{key}`: {value:?}")]
    BadValue { key: String, value: String },
}

/// Parsed key-value pairs. Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvFile {
    pairs: BTreeMap<String, String>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(KvError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::Syntax { line: i + 1 });
            }
            if pairs.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(KvError::Duplicate { line: i + 1, key: key.into() });
            }
        }
        Ok(Self { pairs })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::Missing(key.into()))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|_| KvError::BadValue { key: key.into(), value: v.into() })
            })
            .transpose()
    }

    pub fn parse_req<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.parse_opt(key)?.ok_or_else(|| KvError::Missing(key.into()))
    }

    /// Three comma-separated floats.
    pub fn triple(&self, key: &str) -> Result<Option<[f32; 3]>, KvError> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let bad = || KvError::BadValue { key: key.into(), value: v.into() };
        let parts: Vec<f32> =
            v.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        <[f32; 3]>::try_from(parts).map(Some).map_err(|_| bad())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_spacing() {
        let kv = KvFile::parse("# models\nmodel_id = vgg16\n\nfeature_dim=4096\nmean = 1, 2,3\n").unwrap();
        assert_eq!(kv.get("model_id"), Some("vgg16"));
        assert_eq!(kv.parse_req::<usize>("feature_dim").unwrap(), 4096);
        assert_eq!(kv.triple("mean").unwrap(), Some([1.0, 2.0, 3.0]));
        assert_eq!(kv.triple("std").unwrap(), None);
    }

    #[test]
    fn values_may_contain_equals() {
        let kv = KvFile::parse("template = a=b").unwrap();
        assert_eq!(kv.get("template"), Some("a=b"));
    }

    #[test]
    fn rejects_malformed_input() {
        assert_eq!(KvFile::parse("a = 1\njunk"), Err(KvError::Syntax { line: 2 }));
        assert_eq!(KvFile::parse(" = 1"), Err(KvError::Syntax { line: 1 }));
        assert!(matches!(KvFile::parse("a=1\na=2"), Err(KvError::Duplicate { line: 2, .. })));
        let kv = KvFile::parse("k = x\nm = 1,2").unwrap();
        assert!(matches!(kv.parse_req::<u32>("k"), Err(KvError::BadValue { .. })));
        assert!(matches!(kv.triple("m"), Err(KvError::BadValue { .. })));
        assert_eq!(kv.require("nope"), Err(KvError::Missing("nope".into())));
    }
}
