//! Model manifests and the registry that loads them on first use.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use picsearch_core::stub::{QuadrantMeanExtractor, ScriptedBox, ScriptedDetector, ScriptedRegion};
use picsearch_core::{BBox, ChannelOrder, Detector, FeatureExtractor, PreprocessSpec, ResizeMode};

use crate::decode;
use crate::kv::{KvError, KvFile};
use crate::onnx::{OnnxDetector, OnnxExtractor};
use crate::scan::hash_file;

pub const MANIFEST_EXTENSION: &str = "model";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Extractor,
    Detector,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Extractor => "extractor",
            Role::Detector => "detector",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Onnx,
    /// [`QuadrantMeanExtractor`]; needs no model file.
    QuadrantStub,
    /// [`ScriptedDetector`] fed from a fixture table.
    ScriptedStub,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model file {0} is missing")]
    ModelFileMissing(PathBuf),
    #[error("model `{model_id}` does not have the declared signature: {reason}")]
    GraphSignatureMismatch { model_id: String, reason: String },
    #[error("model `{model_id}` failed to load: {reason}")]
    Load { model_id: String, reason: String },
    #[error("bad model manifest {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model `{0}` is registered twice")]
    DuplicateId(String),
    #[error("model `{model_id}` is a {actual}, not a {expected}")]
    WrongRole { model_id: String, expected: Role, actual: Role },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Everything needed to load one model. Relative paths in a manifest are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub role: Role,
    pub backend: BackendKind,
    pub file_path: Option<PathBuf>,
    pub preprocess: PreprocessSpec,
    pub feature_dim: Option<usize>,
    pub tokenizer: Option<PathBuf>,
    pub text_length: usize,
    pub text_pad_id: i64,
    /// Detector text with `{}` standing for the prompt.
    pub prompt_template: String,
    /// Scripted detector table: `path<TAB>prompt<TAB>score<TAB>box`.
    pub fixtures: Option<PathBuf>,
    /// Directory the fixture paths are relative to.
    pub fixtures_root: Option<PathBuf>,
}

fn bad(path: &Path, reason: impl fmt::Display) -> ModelError {
    ModelError::BadManifest { path: path.to_path_buf(), reason: reason.to_string() }
}

impl ModelDescriptor {
    pub fn parse(text: &str, manifest_path: &Path) -> Result<Self, ModelError> {
        let kv = KvFile::parse(text).map_err(|e| bad(manifest_path, e))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let kv_err = |e: KvError| bad(manifest_path, e);
        let resolve = |key: &str| kv.get(key).map(|p| base.join(p));

        let model_id = kv.require("model_id").map_err(kv_err)?.to_string();
        if model_id.is_empty() || model_id.contains(['/', '\\']) || model_id.starts_with('.') {
            return Err(bad(manifest_path, format!("invalid model_id {model_id:?}")));
        }
        let role = match kv.require("role").map_err(kv_err)? {
            "extractor" => Role::Extractor,
            "detector" => Role::Detector,
            other => return Err(bad(manifest_path, format!("unknown role {other:?}"))),
        };
        let backend = match kv.get("backend").unwrap_or("onnx") {
            "onnx" => BackendKind::Onnx,
            "quadrant-stub" => BackendKind::QuadrantStub,
            "scripted-stub" => BackendKind::ScriptedStub,
            other => return Err(bad(manifest_path, format!("unknown backend {other:?}"))),
        };
        match (backend, role) {
            (BackendKind::QuadrantStub, Role::Detector) | (BackendKind::ScriptedStub, Role::Extractor) => {
                return Err(bad(manifest_path, "stub backend does not provide that role"))
            }
            _ => {}
        }

        let mut preprocess = PreprocessSpec::imagenet(224);
        if let Some(w) = kv.parse_opt("preprocess.width").map_err(kv_err)? {
            preprocess.target_width = w;
        }
        if let Some(h) = kv.parse_opt("preprocess.height").map_err(kv_err)? {
            preprocess.target_height = h;
        }
        if let Some(s) = kv.parse_opt("preprocess.scale").map_err(kv_err)? {
            preprocess.scale = s;
        }
        if let Some(m) = kv.triple("preprocess.mean").map_err(kv_err)? {
            preprocess.mean = m;
        }
        if let Some(s) = kv.triple("preprocess.std").map_err(kv_err)? {
            preprocess.std = s;
        }
        preprocess.channel_order = match kv.get("preprocess.order").unwrap_or("RGB") {
            o if o.eq_ignore_ascii_case("rgb") => ChannelOrder::Rgb,
            o if o.eq_ignore_ascii_case("bgr") => ChannelOrder::Bgr,
            other => return Err(bad(manifest_path, format!("unknown channel order {other:?}"))),
        };
        preprocess.resize_mode = match kv.get("preprocess.resize").unwrap_or("stretch") {
            "stretch" => ResizeMode::Stretch,
            "shorter-side-then-center-crop" | "center-crop" => ResizeMode::ShorterSideCenterCrop,
            other => return Err(bad(manifest_path, format!("unknown resize mode {other:?}"))),
        };
        preprocess.validate().map_err(|e| bad(manifest_path, e))?;

        let feature_dim: Option<usize> = kv.parse_opt("feature_dim").map_err(kv_err)?;
        let feature_dim = match (role, backend, feature_dim) {
            (Role::Extractor, BackendKind::QuadrantStub, None) => Some(picsearch_core::stub::QUADRANT_DIM),
            (Role::Extractor, _, Some(d)) if d > 0 => Some(d),
            (Role::Extractor, _, _) => return Err(bad(manifest_path, "extractors need a positive feature_dim")),
            (Role::Detector, _, Some(_)) => return Err(bad(manifest_path, "detectors take no feature_dim")),
            (Role::Detector, _, None) => None,
        };
        let file_path = resolve("file");
        if backend == BackendKind::Onnx && file_path.is_none() {
            return Err(bad(manifest_path, "missing key `file`"));
        }
        let fixtures = resolve("fixtures");
        if backend == BackendKind::ScriptedStub && fixtures.is_none() {
            return Err(bad(manifest_path, "missing key `fixtures`"));
        }
        Ok(Self {
            model_id,
            role,
            backend,
            file_path,
            preprocess,
            feature_dim,
            tokenizer: resolve("tokenizer"),
            text_length: kv.parse_opt("text_length").map_err(kv_err)?.unwrap_or(16),
            text_pad_id: kv.parse_opt("text_pad_id").map_err(kv_err)?.unwrap_or(0),
            prompt_template: kv.get("prompt_template").unwrap_or("{}").to_string(),
            fixtures_root: resolve("fixtures_root").or_else(|| fixtures.as_ref().and_then(|f| f.parent().map(Path::to_path_buf))),
            fixtures,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    /// Byte size of the model file.
    pub fn file_size(&self) -> Result<u64, ModelError> {
        let path = self.file_path.as_ref().ok_or_else(|| ModelError::ModelFileMissing(PathBuf::new()))?;
        fs::metadata(path)
            .ok()
            .filter(|m| m.is_file())
            .map(|m| m.len())
            .ok_or_else(|| ModelError::ModelFileMissing(path.clone()))
    }

    /// Content hash identifying this exact model.
    pub fn revision(&self) -> Result<String, ModelError> {
        let hashed = match self.backend {
            BackendKind::QuadrantStub => return Ok("quadrant-mean-v1".into()),
            BackendKind::ScriptedStub => self.fixtures.as_ref(),
            BackendKind::Onnx => self.file_path.as_ref(),
        };
        let path = hashed.expect("checked when parsing");
        match hash_file(path) {
            Ok((hash, _)) => Ok(hash.to_hex()),
            Err(_) => Err(ModelError::ModelFileMissing(path.clone())),
        }
    }

    fn existing_file(&self) -> Result<&Path, ModelError> {
        let path = self.file_path.as_deref().expect("checked when parsing");
        if path.is_file() {
            Ok(path)
        } else {
            Err(ModelError::ModelFileMissing(path.to_path_buf()))
        }
    }
}

/// Reads a scripted-detector fixture table. Each line is
/// `path<TAB>prompt<TAB>score<TAB>box`, with box `full` or `x0,y0,x1,y1`.
pub fn load_scripted_detector(model_id: &str, table: &Path, root: &Path) -> Result<ScriptedDetector, ModelError> {
    let text = fs::read_to_string(table).map_err(|_| ModelError::ModelFileMissing(table.into()))?;
    let mut det = ScriptedDetector::new(model_id);
    let mut fingerprints = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| bad(table, format!("line {}: {reason}", i + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [path, prompt, score, region] = cols[..] else { return Err(err("expected 4 tab-separated columns")) };
        let score: f32 = score.trim().parse().map_err(|_| err("bad score"))?;
        let region = match region.trim() {
            "full" => ScriptedRegion::Full,
            b => {
                let v: Vec<f32> = b.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().map_err(|_| err("bad box"))?;
                let [x0, y0, x1, y1] = v[..] else { return Err(err("bad box")) };
                ScriptedRegion::Box(BBox::new(x0, y0, x1, y1))
            }
        };
        let fp = match fingerprints.get(path) {
            Some(fp) => *fp,
            None => {
                let image = decode::load_path(&root.join(path)).map_err(|e| err(&e.to_string()))?;
                let fp = picsearch_core::stub::image_fingerprint(&image);
                fingerprints.insert(path.to_string(), fp);
                fp
            }
        };
        det.script_fingerprint(fp, prompt, [ScriptedBox { region, score }]);
    }
    Ok(det)
}

struct Slot {
    descriptor: ModelDescriptor,
    extractor: Mutex<Option<Arc<dyn FeatureExtractor>>>,
    detector: Mutex<Option<Arc<dyn Detector>>>,
    revision: OnceLock<String>,
}

/// Registered models by id. Each model is loaded at most once, on first use,
/// and then shared.
#[derive(Default)]
pub struct Registry {
    slots: BTreeMap<String, Slot>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.slots.keys()).finish()
    }
}

impl Registry {
    /// Reads every `*.model` manifest in `dir`. A missing directory gives an
    /// empty registry.
    pub fn open(dir: &Path) -> Result<Self, ModelError> {
        let mut descriptors = Vec::new();
        let listing = match fs::read_dir(dir) {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(source) => return Err(ModelError::Io { path: dir.into(), source }),
        };
        let mut paths: Vec<PathBuf> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == MANIFEST_EXTENSION))
            .collect();
        paths.sort();
        for p in paths {
            descriptors.push(ModelDescriptor::from_file(&p)?);
        }
        Self::from_descriptors(descriptors)
    }

    pub fn from_descriptors(descriptors: Vec<ModelDescriptor>) -> Result<Self, ModelError> {
        let mut slots = BTreeMap::new();
        for descriptor in descriptors {
            let id = descriptor.model_id.clone();
            let slot = Slot {
                descriptor,
                extractor: Mutex::new(None),
                detector: Mutex::new(None),
                revision: OnceLock::new(),
            };
            if slots.insert(id.clone(), slot).is_some() {
                return Err(ModelError::DuplicateId(id));
            }
        }
        Ok(Self { slots })
    }

    /// Registry combining two directories; ids must not collide.
    pub fn merged(mut self, other: Registry) -> Result<Self, ModelError> {
        for (id, slot) in other.slots {
            if self.slots.insert(id.clone(), slot).is_some() {
                return Err(ModelError::DuplicateId(id));
            }
        }
        Ok(self)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ModelDescriptor> {
        self.slots.values().map(|s| &s.descriptor)
    }

    fn slot(&self, id: &str) -> Result<&Slot, ModelError> {
        self.slots.get(id).ok_or_else(|| ModelError::UnknownModel(id.into()))
    }

    pub fn descriptor(&self, id: &str) -> Result<&ModelDescriptor, ModelError> {
        Ok(&self.slot(id)?.descriptor)
    }

    fn checked(&self, id: &str, expected: Role) -> Result<&Slot, ModelError> {
        let slot = self.slot(id)?;
        if slot.descriptor.role != expected {
            return Err(ModelError::WrongRole { model_id: id.into(), expected, actual: slot.descriptor.role });
        }
        Ok(slot)
    }

    /// Model revision, hashed once per registry.
    pub fn revision(&self, id: &str) -> Result<String, ModelError> {
        let slot = self.slot(id)?;
        if let Some(r) = slot.revision.get() {
            return Ok(r.clone());
        }
        let r = slot.descriptor.revision()?;
        Ok(slot.revision.get_or_init(|| r).clone())
    }

    pub fn extractor(&self, id: &str) -> Result<Arc<dyn FeatureExtractor>, ModelError> {
        let slot = self.checked(id, Role::Extractor)?;
        let mut cached = slot.extractor.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(e) = cached.as_ref() {
            return Ok(e.clone());
        }
        let d = &slot.descriptor;
        let loaded: Arc<dyn FeatureExtractor> = match d.backend {
            BackendKind::QuadrantStub => Arc::new(QuadrantMeanExtractor::new(d.model_id.clone())),
            BackendKind::Onnx => {
                let file = d.existing_file()?;
                Arc::new(OnnxExtractor::load(d, file, self.revision(id)?)?)
            }
            BackendKind::ScriptedStub => unreachable!("rejected when parsing"),
        };
        *cached = Some(loaded.clone());
        Ok(loaded)
    }

    pub fn detector(&self, id: &str) -> Result<Arc<dyn Detector>, ModelError> {
        let slot = self.checked(id, Role::Detector)?;
        let mut cached = slot.detector.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(d) = cached.as_ref() {
            return Ok(d.clone());
        }
        let d = &slot.descriptor;
        let loaded: Arc<dyn Detector> = match d.backend {
            BackendKind::ScriptedStub => {
                let table = d.fixtures.as_deref().expect("checked when parsing");
                let root = d.fixtures_root.as_deref().unwrap_or(Path::new("."));
                Arc::new(load_scripted_detector(&d.model_id, table, root)?)
            }
            BackendKind::Onnx => Arc::new(OnnxDetector::load(d, d.existing_file()?)?),
            BackendKind::QuadrantStub => unreachable!("rejected when parsing"),
        };
        *cached = Some(loaded.clone());
        Ok(loaded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VGG: &str = "model_id = vgg16\nrole = extractor\nfile = vgg16.onnx\nfeature_dim = 4096\n\
preprocess.width = 224\npreprocess.height = 224\npreprocess.scale = 0.00392156862745098\n\
preprocess.mean = 0.485,0.456,0.406\npreprocess.std = 0.229,0.224,0.225\npreprocess.order = RGB\n\
preprocess.resize = stretch\n";

    #[test]
    fn parses_an_extractor_manifest() {
        let d = ModelDescriptor::parse(VGG, Path::new("/models/vgg16.model")).unwrap();
        assert_eq!(d.model_id, "vgg16");
        assert_eq!(d.role, Role::Extractor);
        assert_eq!(d.backend, BackendKind::Onnx);
        assert_eq!(d.file_path.as_deref(), Some(Path::new("/models/vgg16.onnx")));
        assert_eq!(d.feature_dim, Some(4096));
        assert_eq!(d.preprocess.std, [0.229, 0.224, 0.225]);
        assert_eq!(d.preprocess.resize_mode, ResizeMode::Stretch);
    }

    #[test]
    fn feature_dim_is_set_iff_extractor() {
        let p = Path::new("x.model");
        assert!(ModelDescriptor::parse("model_id=a\nrole=extractor\nfile=a.onnx\n", p).is_err());
        assert!(ModelDescriptor::parse("model_id=a\nrole=detector\nfile=a.onnx\nfeature_dim=3\n", p).is_err());
        let q = ModelDescriptor::parse("model_id=q\nrole=extractor\nbackend=quadrant-stub\n", p).unwrap();
        assert_eq!(q.feature_dim, Some(12));
    }

    #[test]
    fn missing_file_is_reported_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vgg16.model");
        fs::write(&p, VGG).unwrap();
        let reg = Registry::open(dir.path()).unwrap();
        assert!(matches!(reg.extractor("vgg16"), Err(ModelError::ModelFileMissing(_))));
        assert!(matches!(reg.descriptor("vgg16").unwrap().file_size(), Err(ModelError::ModelFileMissing(_))));
        assert!(matches!(reg.extractor("nope"), Err(ModelError::UnknownModel(_))));
        assert!(matches!(reg.detector("vgg16"), Err(ModelError::WrongRole { .. })));
    }

    #[test]
    fn empty_model_file_has_size_zero() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("vgg16.onnx"), b"").unwrap();
        let d = ModelDescriptor::parse(VGG, &dir.path().join("vgg16.model")).unwrap();
        assert_eq!(d.file_size().unwrap(), 0);
        let reg = Registry::from_descriptors(vec![d]).unwrap();
        assert!(matches!(reg.extractor("vgg16"), Err(ModelError::Load { .. })));
    }

    #[test]
    fn stub_extractor_loads_once() {
        let d = ModelDescriptor::parse("model_id=q\nrole=extractor\nbackend=quadrant-stub\n", Path::new("q.model"))
            .unwrap();
        let reg = Registry::from_descriptors(vec![d.clone()]).unwrap();
        assert!(Arc::ptr_eq(&reg.extractor("q").unwrap(), &reg.extractor("q").unwrap()));
        assert!(matches!(Registry::from_descriptors(vec![d.clone(), d]), Err(ModelError::DuplicateId(_))));
    }
}
