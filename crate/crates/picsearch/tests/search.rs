mod common;

use std::fs;
use std::path::{Path, PathBuf};

use picsearch::indexer::build_index;
use picsearch::pipeline::{search, SearchContext, SearchError};
use picsearch::scan::{default_extensions, scan_directory};
use picsearch_core::stub::{QuadrantMeanExtractor, ScriptedBox, ScriptedDetector, ScriptedRegion};
use picsearch_core::{BBox, CatalogSnapshot, FeatureIndex, QueryError, QuerySpec, RgbImage};

use common::{full_frame_detector, write_png};

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    snapshot: CatalogSnapshot,
    index: FeatureIndex,
    images: Vec<(String, RgbImage)>,
    extractor: QuadrantMeanExtractor,
}

fn fixture(colors: &[(&str, [u8; 3])]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().canonicalize().unwrap();
    let images: Vec<(String, RgbImage)> =
        colors.iter().map(|(name, c)| (name.to_string(), write_png(&root, name, 12, 10, *c))).collect();
    let snapshot = scan_directory(&root, &default_extensions()).unwrap().snapshot;
    let extractor = QuadrantMeanExtractor::new("quadrant");
    let index = build_index(&root, &snapshot, &extractor, &mut |_, _| {}).unwrap();
    Fixture { _dir: dir, root, snapshot, index, images, extractor }
}

impl Fixture {
    fn run(&self, detector: &ScriptedDetector, spec: &QuerySpec) -> Result<picsearch::pipeline::SearchOutcome, SearchError> {
        let ctx = SearchContext {
            root: &self.root,
            snapshot: &self.snapshot,
            index: &self.index,
            extractor: &self.extractor,
            detector,
        };
        search(&ctx, spec)
    }

    fn image(&self, name: &str) -> &RgbImage {
        &self.images.iter().find(|(n, _)| n == name).unwrap().1
    }
}

fn spec(prompt: &str, k: usize, seed: u64) -> QuerySpec {
    QuerySpec { k, seed: Some(seed), ..QuerySpec::new(prompt) }
}

fn clusters() -> Fixture {
    let mut colors = Vec::new();
    for i in 0..5u8 {
        colors.push((format!("red{i}.png"), [200 + i * 10, 20 + i * 5, 10]));
        colors.push((format!("blue{i}.png"), [10, 30 + i * 5, 200 + i * 10]));
    }
    let refs: Vec<(&str, [u8; 3])> = colors.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    fixture(&refs)
}

#[test]
fn every_image_retrieves_itself_first() {
    let f = clusters();
    for (name, img) in &f.images {
        let det = full_frame_detector("thing", &[(img, 0.9)]);
        let out = f.run(&det, &spec("thing", 10, 1)).unwrap();
        let top = &out.results.items[0];
        assert_eq!(&top.path, name);
        assert!(top.score >= 1.0 - 1e-4, "{name}: {}", top.score);
    }
}

#[test]
fn a_red_query_ranks_the_red_cluster_first() {
    let f = clusters();
    let det = full_frame_detector("red", &[(f.image("red2.png"), 0.8)]);
    let out = f.run(&det, &spec("red", 5, 3)).unwrap();
    assert_eq!(out.results.items.len(), 5);
    assert!(out.results.items.iter().all(|i| i.path.starts_with("red")), "{:?}", out.results.items);
    let scores: Vec<f64> = out.results.items.iter().map(|i| i.score).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn k_caps_the_result_count() {
    let f = clusters();
    let det = full_frame_detector("red", &[(f.image("red0.png"), 0.8)]);
    assert_eq!(f.run(&det, &spec("red", 3, 1)).unwrap().results.items.len(), 3);
    assert_eq!(f.run(&det, &spec("red", 50, 1)).unwrap().results.items.len(), 10);
}

#[test]
fn provenance_records_the_query() {
    let f = clusters();
    let mut det = ScriptedDetector::new("scripted");
    let bbox = BBox::new(2.0, 1.0, 9.0, 8.0);
    det.script(f.image("blue3.png"), "Blue", [ScriptedBox { region: ScriptedRegion::Box(bbox), score: 0.6 }]);
    let out = f.run(&det, &spec("  blue ", 4, 42)).unwrap();
    let p = out.results.provenance.unwrap();
    assert_eq!(p.source_path, "blue3.png");
    assert_eq!(p.bbox, bbox);
    assert_eq!(p.detector_score, 0.6);
    assert_eq!((p.prompt.as_str(), p.seed), ("blue", 42));
}

#[test]
fn same_seed_same_results() {
    let f = clusters();
    let imgs: Vec<(&RgbImage, f32)> = f.images.iter().map(|(_, i)| (i, 0.5)).collect();
    let det = full_frame_detector("any", &imgs);
    let a = f.run(&det, &spec("any", 4, 9)).unwrap();
    let b = f.run(&det, &spec("any", 4, 9)).unwrap();
    assert_eq!(a.results, b.results);
    assert_eq!(a.detector_calls, b.detector_calls);
    // Different seeds draw different first images at least sometimes.
    let sources: std::collections::BTreeSet<String> = (0..20)
        .map(|s| f.run(&det, &spec("any", 4, s)).unwrap().results.provenance.unwrap().source_path)
        .collect();
    assert!(sources.len() > 1);
}

#[test]
fn absent_prompt_stops_after_each_image_once() {
    let f = fixture(&[("a.png", [1, 2, 3]), ("b.png", [4, 5, 6]), ("c.png", [7, 8, 9]), ("d.png", [9, 9, 9]), ("e.png", [0, 0, 0])]);
    let det = ScriptedDetector::new("scripted");
    let err = f.run(&det, &spec("unicorn", 10, 5)).unwrap_err();
    assert!(err.is_prompt_not_found());
    assert!(matches!(err, SearchError::Query(QueryError::PromptNotFound { detector_calls: 5, .. })));
    assert_eq!(det.calls(), 5);
}

#[test]
fn threshold_is_strict() {
    let f = clusters();
    let det = full_frame_detector("red", &[(f.image("red1.png"), 0.3)]);
    let at = QuerySpec { threshold: 0.3, ..spec("red", 3, 1) };
    assert!(f.run(&det, &at).unwrap_err().is_prompt_not_found());
    let below = QuerySpec { threshold: 0.29, ..spec("red", 3, 1) };
    assert!(f.run(&det, &below).is_ok());
}

#[test]
fn invalid_specs_are_rejected_before_any_detection() {
    let f = clusters();
    let det = ScriptedDetector::new("scripted");
    for bad in [
        QuerySpec::new("   "),
        QuerySpec { threshold: 1.5, ..QuerySpec::new("x") },
        QuerySpec { threshold: f32::NAN, ..QuerySpec::new("x") },
        QuerySpec { k: 0, ..QuerySpec::new("x") },
    ] {
        assert!(matches!(f.run(&det, &bad), Err(SearchError::Query(_))), "{bad:?}");
    }
    assert_eq!(det.calls(), 0);
}

#[test]
fn a_changed_catalog_makes_the_index_stale() {
    let mut f = clusters();
    write_png(&f.root, "extra.png", 4, 4, [1, 1, 1]);
    fs::remove_file(f.root.join("red0.png")).unwrap();
    f.snapshot = scan_directory(Path::new(&f.root), &default_extensions()).unwrap().snapshot;
    let det = ScriptedDetector::new("scripted");
    match f.run(&det, &spec("red", 3, 1)) {
        Err(SearchError::StaleIndex { added: 1, removed: 1, modified: 0 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn an_index_from_another_model_is_refused() {
    let mut f = clusters();
    f.extractor = QuadrantMeanExtractor::new("other");
    let det = full_frame_detector("red", &[(f.image("red0.png"), 0.8)]);
    assert!(matches!(f.run(&det, &spec("red", 3, 1)), Err(SearchError::ModelMismatch(_))));
}
