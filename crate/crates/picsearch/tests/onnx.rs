mod common;

use std::fs;

use picsearch::decode::load_path;
use picsearch::model::{ModelDescriptor, ModelError, Registry};
use picsearch_core::vector::norm;

fn models() -> std::path::PathBuf {
    common::onnx_models(&["mobilenetv2"], true).unwrap_or_else(|e| panic!("{e}"))
}

#[test]
fn extractor_gives_deterministic_unit_vectors() {
    let registry = Registry::open(&models()).unwrap();
    let ex = registry.extractor("mobilenetv2").unwrap();
    assert_eq!(ex.feature_dim(), 1280);
    assert_eq!(ex.revision(), registry.revision("mobilenetv2").unwrap());
    let img = load_path(&common::dataset().join("gallery/cat/chelsea01.jpg")).unwrap();
    let a = ex.extract(&img).unwrap();
    let b = ex.extract(&img).unwrap();
    assert_eq!(a.dim(), 1280);
    assert!((norm(a.values()) - 1.0).abs() < 1e-5);
    assert_eq!(a, b);
    // The same registry hands out the same loaded model.
    assert!(std::sync::Arc::ptr_eq(&ex, &registry.extractor("mobilenetv2").unwrap()));
}

#[test]
fn detector_boxes_are_in_bounds_with_probabilities() {
    let registry = Registry::open(&models()).unwrap();
    let det = registry.detector("owlvit-tiny").unwrap();
    let img = load_path(&common::dataset().join("gallery/cat/chelsea01.jpg")).unwrap();
    let found = det.detect(&img, "a cat").unwrap();
    assert!(!found.is_empty());
    for d in &found {
        assert!((0.0..=1.0).contains(&d.score), "{d:?}");
        assert!(d.bbox.is_well_formed(), "{d:?}");
        assert!(d.bbox.x_max <= img.width() as f32 && d.bbox.y_max <= img.height() as f32, "{d:?}");
    }
    assert_eq!(found, det.detect(&img, "  a cat ").unwrap());
    assert!(det.detect(&img, " ").is_err());
}

#[test]
fn mismatched_graphs_and_missing_files_are_reported() {
    let dir = models();
    let scratch = tempfile::tempdir().unwrap();
    // A detector graph declared as an extractor.
    let wrong = scratch.path().join("wrong.model");
    fs::write(
        &wrong,
        format!("model_id = wrong\nrole = extractor\nfile = {}\nfeature_dim = 512\n", dir.join("owlvit-tiny.onnx").display()),
    )
    .unwrap();
    // An extractor whose declared width is not what the graph produces.
    let narrow = scratch.path().join("narrow.model");
    fs::write(
        &narrow,
        format!("model_id = narrow\nrole = extractor\nfile = {}\nfeature_dim = 999\n", dir.join("mobilenetv2.onnx").display()),
    )
    .unwrap();
    let gone = scratch.path().join("gone.model");
    fs::write(&gone, "model_id = gone\nrole = extractor\nfile = gone.onnx\nfeature_dim = 8\n").unwrap();

    let registry = Registry::from_descriptors(
        [wrong, narrow, gone].iter().map(|p| ModelDescriptor::from_file(p).unwrap()).collect(),
    )
    .unwrap();
    assert!(matches!(registry.extractor("wrong"), Err(ModelError::GraphSignatureMismatch { .. })));
    assert!(matches!(registry.extractor("narrow"), Err(ModelError::GraphSignatureMismatch { .. })));
    assert!(matches!(registry.extractor("gone"), Err(ModelError::ModelFileMissing(_))));
    assert!(matches!(registry.detector("gone"), Err(ModelError::WrongRole { .. })));
}
