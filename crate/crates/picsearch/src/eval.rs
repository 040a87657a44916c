//! Accuracy, latency and size evaluation over a labelled dataset.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use picsearch_core::eval::{accuracy, mean_present, TimingStats};
use picsearch_core::{CatalogSnapshot, Detector, FeatureExtractor, FeatureIndex, QueryCrop, QueryError, QuerySpec, RgbImage};
use serde::Serialize;

use crate::decode::load_image;
use crate::indexer::{check_model, pending_changes, refresh_index};
use crate::model::{ModelError, Registry};
use crate::pipeline::{pick_query, rank_crop, SearchError};
use crate::scan::{default_extensions, scan_directory, ScanError};
use crate::store::index_dir;

pub const DEFAULT_THRESHOLDS: [f32; 4] = [0.05, 0.1, 0.2, 0.3];
pub const MISSING: &str = "—";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}, line {line}: {reason}")]
    Manifest { file: String, line: usize, reason: String },
    #[error("dataset image {0} does not exist")]
    MissingImage(String),
    #[error("prompt `{prompt}` maps to no category present in the dataset")]
    UnknownCategory { prompt: String },
    #[error("{0}")]
    Plan(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("{0}")]
    Other(String),
}

/// Labelled images (`path<TAB>label,label`) and the categories each prompt
/// should retrieve (`prompt<TAB>category,category`).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub labels: BTreeMap<String, BTreeSet<String>>,
    pub prompts: BTreeMap<String, BTreeSet<String>>,
}

fn parse_tsv(text: &str, file: &str) -> Result<Vec<(String, BTreeSet<String>)>, EvalError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| EvalError::Manifest { file: file.into(), line: i + 1, reason: reason.into() };
        let (key, values) = line.split_once('\t').ok_or_else(|| err("expected `key<TAB>values`"))?;
        let key = key.trim();
        let set: BTreeSet<String> =
            values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if key.is_empty() || set.is_empty() {
            return Err(err("empty key or value list"));
        }
        if !seen.insert(key.to_string()) {
            return Err(err("duplicate key"));
        }
        out.push((key.to_string(), set));
    }
    Ok(out)
}

impl DatasetManifest {
    pub fn parse(root: &Path, labels: &str, prompts: &str) -> Result<Self, EvalError> {
        let labels: BTreeMap<_, _> = parse_tsv(labels, "labels")?.into_iter().collect();
        let prompts: BTreeMap<_, _> = parse_tsv(prompts, "prompts")?.into_iter().collect();
        let present: BTreeSet<&String> = labels.values().flatten().collect();
        for (prompt, cats) in &prompts {
            if !cats.iter().any(|c| present.contains(c)) {
                return Err(EvalError::UnknownCategory { prompt: prompt.clone() });
            }
        }
        Ok(Self { root: root.to_path_buf(), labels, prompts })
    }

    /// Reads both files and checks that every labelled image exists.
    pub fn load(root: &Path, labels_file: &Path, prompts_file: &Path) -> Result<Self, EvalError> {
        let read = |p: &Path| fs::read_to_string(p).map_err(|source| EvalError::Io { path: p.into(), source });
        let m = Self::parse(root, &read(labels_file)?, &read(prompts_file)?)?;
        if let Some(missing) = m.labels.keys().find(|p| !root.join(p).is_file()) {
            return Err(EvalError::MissingImage(missing.clone()));
        }
        Ok(m)
    }

    /// Paths whose labels intersect the prompt's categories.
    pub fn relevant(&self, prompt: &str) -> BTreeSet<String> {
        let Some(cats) = self.prompts.get(prompt) else { return BTreeSet::new() };
        self.labels
            .iter()
            .filter(|(_, labels)| !labels.is_disjoint(cats))
            .map(|(p, _)| p.clone())
            .collect()
    }
}

/// What to evaluate: every combination of prompt, threshold and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPlan {
    pub prompts: Vec<String>,
    pub thresholds: Vec<f32>,
    pub seeds: Vec<u64>,
    pub k: usize,
}

/// One model with its index over the evaluated catalog.
pub struct EvalModel<'a> {
    pub extractor: &'a dyn FeatureExtractor,
    pub index: &'a FeatureIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub prompt: String,
    pub model: String,
    pub threshold: f32,
    pub seed: u64,
    /// `None` when no image matched the prompt above the threshold.
    pub accuracy: Option<f64>,
    pub query_source: Option<String>,
}

/// Runs a search per (prompt, model, threshold, seed) and scores it. Query
/// crops depend only on the detector, so each is found once and reused for
/// every model.
pub fn run_prompt_eval(
    manifest: &DatasetManifest,
    snapshot: &CatalogSnapshot,
    detector: &dyn Detector,
    models: &[EvalModel<'_>],
    plan: &EvalPlan,
) -> Result<Vec<Cell>, EvalError> {
    if plan.prompts.is_empty() || plan.thresholds.is_empty() || plan.seeds.is_empty() {
        return Err(EvalError::Plan("prompts, thresholds and seeds must be non-empty".into()));
    }
    for m in models {
        check_model(m.index, m.extractor).map_err(|e| EvalError::Other(e.to_string()))?;
        if !pending_changes(m.index, snapshot).map_err(|e| EvalError::Other(e.to_string()))?.is_empty() {
            return Err(EvalError::Other(format!("index for `{}` is stale", m.extractor.model_id())));
        }
    }
    let mut crops: HashMap<(usize, usize, u64), Option<QueryCrop>> = HashMap::new();
    let mut cells = Vec::new();
    for (pi, prompt) in plan.prompts.iter().enumerate() {
        let relevant = manifest.relevant(prompt);
        for m in models {
            for (ti, &threshold) in plan.thresholds.iter().enumerate() {
                for &seed in &plan.seeds {
                    let spec = QuerySpec { threshold, k: plan.k, seed: Some(seed), ..QuerySpec::new(prompt.clone()) };
                    let crop = match crops.get(&(pi, ti, seed)) {
                        Some(c) => c.clone(),
                        None => {
                            let c = match pick_query(&manifest.root, snapshot, detector, &spec, seed) {
                                Ok(c) => Some(c),
                                Err(QueryError::PromptNotFound { .. }) => None,
                                Err(e) => return Err(SearchError::from(e).into()),
                            };
                            crops.insert((pi, ti, seed), c.clone());
                            c
                        }
                    };
                    let (acc, source) = match crop {
                        Some(crop) => {
                            let (results, _, _) = rank_crop(m.index, m.extractor, &crop, &spec, seed)?;
                            let acc = accuracy(&results, &relevant).map_err(|e| EvalError::Other(e.to_string()))?;
                            (Some(acc), Some(crop.source_path))
                        }
                        None => (None, None),
                    };
                    cells.push(Cell {
                        prompt: prompt.clone(),
                        model: m.extractor.model_id().into(),
                        threshold,
                        seed,
                        accuracy: acc,
                        query_source: source,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// Per-image extraction latency after `warmup` discarded calls, over
/// `repeats` passes through `images`. Runs on the calling thread only.
pub fn benchmark_inference(
    extractor: &dyn FeatureExtractor,
    images: &[RgbImage],
    warmup: usize,
    repeats: usize,
) -> Result<TimingStats, EvalError> {
    if repeats == 0 || images.is_empty() {
        return Err(EvalError::Plan("benchmark needs at least one image and one repeat".into()));
    }
    let run = |img: &RgbImage| extractor.extract(img).map_err(|e| EvalError::Other(e.to_string()));
    for img in images.iter().cycle().take(warmup) {
        run(img)?;
    }
    let mut samples = Vec::with_capacity(repeats * images.len());
    for _ in 0..repeats {
        for img in images {
            let t = Instant::now();
            run(img)?;
            samples.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    TimingStats::from_samples(&samples).map_err(|e| EvalError::Other(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

impl From<TimingStats> for Timing {
    fn from(t: TimingStats) -> Self {
        Self { mean_ms: t.mean_ms, p50_ms: t.p50_ms, p95_ms: t.p95_ms, samples: t.samples }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean_accuracy: Option<f64>,
    pub timing: Option<Timing>,
    pub size_bytes: Option<u64>,
    pub prompt_not_found: usize,
    /// Why the model produced no cells.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub thresholds: Vec<f32>,
    pub seeds: Vec<u64>,
    pub prompts: Vec<String>,
    pub models: Vec<ModelSummary>,
    pub cells: Vec<Cell>,
}

impl EvalReport {
    pub fn prompt_not_found(&self) -> usize {
        self.cells.iter().filter(|c| c.accuracy.is_none()).count()
    }

    /// Mean accuracy of one prompt under one model.
    pub fn prompt_mean(&self, prompt: &str, model: &str) -> Option<f64> {
        mean_present(self.cells.iter().filter(|c| c.prompt == prompt && c.model == model).map(|c| c.accuracy))
    }

    pub fn model(&self, model: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == model)
    }
}

/// Fills in the per-model accuracy means and not-found counts from cells.
pub fn summarize(cells: &[Cell], model: &str) -> (Option<f64>, usize) {
    let mine: Vec<&Cell> = cells.iter().filter(|c| c.model == model).collect();
    (mean_present(mine.iter().map(|c| c.accuracy)), mine.iter().filter(|c| c.accuracy.is_none()).count())
}

pub const MIB: f64 = (1u64 << 20) as f64;

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| MISSING.to_string(), |v| format!("{v:.decimals$}"))
}

/// Aligned text tables plus the same report as JSON.
pub fn render_report(report: &EvalReport) -> (String, String) {
    let mut text = String::new();
    let combos = report.thresholds.len() * report.seeds.len();
    let _ = writeln!(
        text,
        "Prompt results (precision of the top {}, mean over {} threshold(s) x {} seed(s))\n",
        report.k,
        report.thresholds.len(),
        report.seeds.len()
    );
    let mut rows = Vec::new();
    for prompt in &report.prompts {
        for m in report.models.iter().filter(|m| m.failure.is_none()) {
            let missing = report
                .cells
                .iter()
                .filter(|c| &c.prompt == prompt && c.model == m.model && c.accuracy.is_none())
                .count();
            rows.push(vec![
                prompt.clone(),
                m.model.clone(),
                opt(report.prompt_mean(prompt, &m.model), 3),
                format!("{}/{}", combos - missing, combos),
            ]);
        }
    }
    text.push_str(&table(&["prompt", "model", "accuracy", "found"], &rows));

    let _ = writeln!(text, "\nModels\n");
    let rows: Vec<Vec<String>> = report
        .models
        .iter()
        .map(|m| {
            vec![
                m.model.clone(),
                opt(m.mean_accuracy, 3),
                opt(m.timing.as_ref().map(|t| t.mean_ms), 1),
                opt(m.size_bytes.map(|b| b as f64 / MIB), 1),
            ]
        })
        .collect();
    text.push_str(&table(&["model", "avg accuracy", "ms CPU", "size (MB)"], &rows));

    let _ = writeln!(
        text,
        "\n{MISSING} no value. No image matched the prompt above the threshold in {} of {} searches.",
        report.prompt_not_found(),
        report.cells.len()
    );
    for m in report.models.iter().filter_map(|m| m.failure.as_ref().map(|f| (&m.model, f))) {
        let _ = writeln!(text, "failed: {}: {}", m.0, m.1);
    }
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    (text, json)
}

/// Everything `picsearch bench` needs.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub root: PathBuf,
    pub labels_file: PathBuf,
    pub prompts_file: PathBuf,
    pub models: Vec<String>,
    pub detector: String,
    pub prompts: Option<Vec<String>>,
    pub thresholds: Vec<f32>,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub warmup: usize,
    /// Timing passes; 0 skips timing so the report is reproducible.
    pub repeats: usize,
    pub bench_images: usize,
    pub index_cache: PathBuf,
}

/// Indexes the dataset with every model, evaluates, times and sizes them.
/// A model that fails to load or index gets a failure row instead of
/// aborting the run.
pub fn run_bench(config: &BenchConfig, registry: &Registry, log: &mut dyn FnMut(&str)) -> Result<EvalReport, EvalError> {
    let manifest = DatasetManifest::load(&config.root, &config.labels_file, &config.prompts_file)?;
    let scan = scan_directory(&config.root, &default_extensions())?;
    let root = PathBuf::from(scan.snapshot.root());
    let manifest = DatasetManifest { root: root.clone(), ..manifest };
    let detector = registry.detector(&config.detector)?;
    let prompts = config.prompts.clone().unwrap_or_else(|| manifest.prompts.keys().cloned().collect());
    if let Some(p) = prompts.iter().find(|p| !manifest.prompts.contains_key(*p)) {
        return Err(EvalError::Plan(format!("prompt `{p}` is not in the prompt file")));
    }
    let plan = EvalPlan { prompts, thresholds: config.thresholds.clone(), seeds: config.seeds.clone(), k: config.k };

    let mut loaded = Vec::new();
    let mut summaries = Vec::new();
    for id in &config.models {
        let size = registry.descriptor(id).ok().and_then(|d| d.file_size().ok());
        let prepared = registry.extractor(id).map_err(|e| e.to_string()).and_then(|ex| {
            log(&format!("indexing {} images with {id}", scan.snapshot.len()));
            let dir = index_dir(&config.index_cache, scan.snapshot.root(), id);
            refresh_index(&root, &dir, &scan.snapshot, ex.as_ref(), false, &mut |_, _| {})
                .map(|o| (ex, o.index))
                .map_err(|e| e.to_string())
        });
        let failure = match prepared {
            Ok(p) => {
                loaded.push(p);
                None
            }
            Err(reason) => {
                log(&format!("{id}: {reason}"));
                Some(reason)
            }
        };
        summaries.push(ModelSummary {
            model: id.clone(),
            mean_accuracy: None,
            timing: None,
            size_bytes: size,
            prompt_not_found: 0,
            failure,
        });
    }

    let models: Vec<EvalModel<'_>> =
        loaded.iter().map(|(ex, index)| EvalModel { extractor: ex.as_ref(), index }).collect();
    log(&format!(
        "evaluating {} prompt(s) x {} model(s) x {} threshold(s) x {} seed(s)",
        plan.prompts.len(),
        models.len(),
        plan.thresholds.len(),
        plan.seeds.len()
    ));
    let cells = if models.is_empty() { Vec::new() } else { run_prompt_eval(&manifest, &scan.snapshot, detector.as_ref(), &models, &plan)? };

    let images: Vec<RgbImage> = if config.repeats > 0 {
        scan.snapshot.entries().iter().filter_map(|e| load_image(&root, e).ok()).take(config.bench_images.max(1)).collect()
    } else {
        Vec::new()
    };
    for summary in summaries.iter_mut().filter(|s| s.failure.is_none()) {
        let (mean, missing) = summarize(&cells, &summary.model);
        summary.mean_accuracy = mean;
        summary.prompt_not_found = missing;
        if config.repeats > 0 {
            let (ex, _) = loaded.iter().find(|(ex, _)| ex.model_id() == summary.model).expect("loaded above");
            log(&format!("timing {}", summary.model));
            summary.timing = Some(benchmark_inference(ex.as_ref(), &images, config.warmup, config.repeats)?.into());
        }
    }
    Ok(EvalReport {
        k: plan.k,
        thresholds: plan.thresholds,
        seeds: plan.seeds,
        prompts: plan.prompts,
        models: summaries,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parsing_and_relevance() {
        let m = DatasetManifest::parse(
            Path::new("/d"),
            "a.jpg\tcat,animal\nb.jpg\tfood\n# comment\nc.jpg\tanimal\n",
            "cat\tcat\npet\tanimal,dog\n",
        )
        .unwrap();
        assert_eq!(m.relevant("cat"), ["a.jpg".to_string()].into());
        assert_eq!(m.relevant("pet"), ["a.jpg".to_string(), "c.jpg".to_string()].into());
        assert!(m.relevant("nope").is_empty());
    }

    #[test]
    fn manifest_validation() {
        let root = Path::new("/d");
        assert!(matches!(
            DatasetManifest::parse(root, "a.jpg\tcat\n", "dog\tdog\n"),
            Err(EvalError::UnknownCategory { .. })
        ));
        assert!(matches!(DatasetManifest::parse(root, "a.jpg\t\n", ""), Err(EvalError::Manifest { line: 1, .. })));
        assert!(matches!(DatasetManifest::parse(root, "a.jpg cat\n", ""), Err(EvalError::Manifest { .. })));
        assert!(matches!(
            DatasetManifest::parse(root, "a.jpg\tcat\na.jpg\tdog\n", ""),
            Err(EvalError::Manifest { line: 2, .. })
        ));
    }

    fn report() -> EvalReport {
        EvalReport {
            k: 10,
            thresholds: vec![0.1],
            seeds: vec![1],
            prompts: vec!["cat".into()],
            models: vec![ModelSummary {
                model: "m".into(),
                mean_accuracy: None,
                timing: None,
                size_bytes: Some(14 << 20),
                prompt_not_found: 1,
                failure: None,
            }],
            cells: vec![Cell {
                prompt: "cat".into(),
                model: "m".into(),
                threshold: 0.1,
                seed: 1,
                accuracy: None,
                query_source: None,
            }],
        }
    }

    #[test]
    fn rendering_has_one_row_per_table_and_dashes_for_gaps() {
        let (text, json) = render_report(&report());
        let summary = text.split("Models").nth(1).unwrap();
        let data_rows: Vec<&str> =
            summary.lines().filter(|l| l.starts_with("m ")).collect();
        assert_eq!(data_rows.len(), 1);
        assert!(data_rows[0].contains("14.0"), "{text}");
        assert!(data_rows[0].contains(MISSING));
        assert!(text.contains("in 1 of 1 searches"));
        let header = summary.lines().find(|l| l.starts_with("model")).unwrap();
        let order: Vec<usize> =
            ["model", "avg accuracy", "ms CPU", "size"].iter().map(|h| header.find(h).unwrap()).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["cells"][0]["accuracy"], serde_json::Value::Null);
    }
}
