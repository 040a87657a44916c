mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{bin, dataset, write_png};

fn picsearch(cache: &Path, args: &[&str]) -> Output {
    let models = dataset().join("models");
    Command::new(bin())
        .env("PICSEARCH_CONFIG", cache.join("no-such-config"))
        .env_remove("PICSEARCH_CATALOG_ROOT")
        .env_remove("PICSEARCH_MODEL_DIR")
        .env_remove("PICSEARCH_INDEX_DIR")
        .arg("--models-dir")
        .arg(&models)
        .arg("--index-dir")
        .arg(cache)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

#[test]
fn index_reports_built_reused_and_updated() {
    let cache = tempfile::tempdir().unwrap();
    let pics = tempfile::tempdir().unwrap();
    for i in 0..4u8 {
        write_png(pics.path(), &format!("p{i}.png"), 8, 8, [i * 60, 30, 90]);
    }
    let dir = pics.path().to_str().unwrap();
    let index = |extra: &[&str]| {
        let mut args = vec!["index", "--dir", dir, "--model", "quadrant"];
        args.extend_from_slice(extra);
        ok(picsearch(cache.path(), &args))
    };
    assert_eq!(index(&[]).trim(), "indexed 4 images");
    assert_eq!(index(&[]).trim(), "0 changed, index reused");
    write_png(pics.path(), "p9.png", 8, 8, [1, 1, 1]);
    fs::remove_file(pics.path().join("p0.png")).unwrap();
    assert_eq!(index(&[]).trim(), "1 added, 1 removed, 0 modified, 3 unchanged; indexed 4 images");
    assert_eq!(index(&["--force"]).trim(), "indexed 4 images");
}

fn gallery_search(cache: &Path, extra: &[&str]) -> Output {
    let gallery = dataset().join("gallery");
    let mut args = vec!["search", "--dir", gallery.to_str().unwrap(), "--model", "quadrant", "--detector", "scripted"];
    args.extend_from_slice(extra);
    picsearch(cache, &args)
}

#[test]
fn search_listing_matches_the_golden_file() {
    let cache = tempfile::tempdir().unwrap();
    // The first search builds the index on the fly.
    let out = ok(gallery_search(cache.path(), &["cat", "--seed", "7"]));
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/search_cat_seed7.txt")).unwrap();
    assert_eq!(out, golden);

    let three = ok(gallery_search(cache.path(), &["cat", "--seed", "7", "-k", "3"]));
    assert_eq!(three.lines().count(), 3);
    assert!(golden.starts_with(&three));
}

#[test]
fn json_output_has_the_response_shape() {
    let cache = tempfile::tempdir().unwrap();
    let out = ok(gallery_search(cache.path(), &["food", "--seed", "3", "-k", "4", "--json"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["items"].as_array().unwrap().len(), 4);
    assert_eq!(v["model"], "quadrant");
    assert_eq!(v["provenance"]["prompt"], "food");
    assert_eq!(v["provenance"]["seed"], 3);
    assert!(v["items"][0]["thumbnail_url"].as_str().unwrap().starts_with("/api/image?path="));
}

#[test]
fn prompt_not_found_exits_with_code_2() {
    let cache = tempfile::tempdir().unwrap();
    let out = gallery_search(cache.path(), &["unicorn", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn bad_arguments_fail_without_results() {
    let cache = tempfile::tempdir().unwrap();
    let bad = gallery_search(cache.path(), &["cat", "--threshold", "2"]);
    assert_eq!(bad.status.code(), Some(1));
    let missing = picsearch(cache.path(), &["search", "cat", "--dir", "/definitely/not/here", "--model", "quadrant"]);
    assert_eq!(missing.status.code(), Some(1));
    let gallery = dataset().join("gallery");
    let unknown = picsearch(cache.path(), &["search", "cat", "--dir", gallery.to_str().unwrap(), "--model", "nope"]);
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn models_lists_the_registry() {
    let cache = tempfile::tempdir().unwrap();
    let out = ok(picsearch(cache.path(), &["models"]));
    assert!(out.contains("quadrant"), "{out}");
    assert!(out.contains("scripted"), "{out}");
}

fn bench(cache: &Path, out_dir: &Path, models: &str) -> Output {
    let data = dataset();
    picsearch(
        cache,
        &[
            "bench",
            "--labels",
            data.join("labels.tsv").to_str().unwrap(),
            "--prompts",
            data.join("prompts.tsv").to_str().unwrap(),
            "--models",
            models,
            "--detector",
            "scripted",
            "--repeats",
            "0",
            "--out",
            out_dir.to_str().unwrap(),
        ],
    )
}

#[test]
fn bench_without_timing_is_byte_identical_across_runs() {
    let cache = tempfile::tempdir().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(bench(cache.path(), a.path(), "quadrant"));
    ok(bench(cache.path(), b.path(), "quadrant"));
    for f in ["report.txt", "report.json"] {
        let (x, y) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn bench_keeps_going_past_a_broken_model() {
    let cache = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = bench(cache.path(), out.path(), "quadrant,missing-model");
    let text = ok(o);
    let report = fs::read_to_string(out.path().join("report.txt")).unwrap();
    assert!(report.contains("missing-model"), "{report}");
    assert!(report.contains("quadrant"));
    assert!(text.contains("missing-model") || report.contains("failed"));
    // Every model broken is an error.
    let o = bench(cache.path(), out.path(), "missing-model");
    assert!(!o.status.success());
}
