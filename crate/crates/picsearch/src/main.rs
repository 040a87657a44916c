use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use picsearch::api::SearchResponse;
use picsearch::config::{default_config_path, AppConfig};
use picsearch::eval::{render_report, run_bench, BenchConfig, DEFAULT_THRESHOLDS};
use picsearch::indexer::{pending_changes, refresh_index, RefreshKind};
use picsearch::model::Registry;
use picsearch::pipeline::{search, SearchContext};
use picsearch::scan::{default_extensions, scan_directory, scan_directory_reusing};
use picsearch::service::{self, error_code, AppState};
use picsearch::store::{index_dir, load_index};
use picsearch_core::QuerySpec;

const EXIT_PROMPT_NOT_FOUND: u8 = 2;

#[derive(Parser)]
#[command(name = "picsearch", version, about = "Search a local image folder with a text prompt")]
struct Cli {
    /// Config file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of `*.model` manifests.
    #[arg(long, global = true)]
    models_dir: Option<PathBuf>,
    /// Where indexes and thumbnails are cached.
    #[arg(long, global = true)]
    index_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or update the feature index of a folder.
    Index(IndexArgs),
    /// Find images matching a prompt.
    Search(SearchArgs),
    /// Measure accuracy, latency and size of models on a labelled dataset.
    Bench(BenchArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
    /// List registered models.
    Models,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Rebuild from scratch even if nothing changed.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SearchArgs {
    prompt: String,
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    detector: Option<String>,
    /// Minimum detector confidence (exclusive), in [0, 1].
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many catalog images.
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Extra margin around the detected box, as a fraction of its longer side.
    #[arg(long, default_value_t = 0.0)]
    pad: f32,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// `path<TAB>label,label` lines.
    #[arg(long)]
    labels: PathBuf,
    /// `prompt<TAB>category,category` lines.
    #[arg(long)]
    prompts: PathBuf,
    /// Dataset root; defaults to the labels file's directory.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    #[arg(long)]
    detector: Option<String>,
    /// Only these prompts (repeatable); all prompts by default.
    #[arg(long = "prompt")]
    only_prompts: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
    thresholds: Vec<f32>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3])]
    seeds: Vec<u64>,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Timing passes over the benchmark images; 0 leaves timing out.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 8)]
    bench_images: usize,
    /// Writes `report.txt` and `report.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
    #[arg(long)]
    dir: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let env = |k: &str| std::env::var(k).ok();
    let config_path = cli.config.clone().or_else(|| default_config_path(&env));
    if let Some(p) = cli.config.as_ref().filter(|p| !p.exists()) {
        return Err(format!("config file {} does not exist", p.display()).into());
    }
    let mut config = AppConfig::load(config_path.as_deref(), &env)?;
    if let Some(d) = cli.models_dir {
        config.model_registry_dir = d;
    }
    if let Some(d) = cli.index_dir {
        config.index_cache_dir = d;
    }
    let registry = Registry::open(&config.model_registry_dir)?;
    match cli.command {
        Command::Index(a) => cmd_index(&config, &registry, a),
        Command::Search(a) => cmd_search(&config, &registry, a),
        Command::Bench(a) => cmd_bench(&config, &registry, a),
        Command::Serve(a) => cmd_serve(config, registry, a),
        Command::Models => {
            for d in registry.descriptors() {
                let size = d.file_size().map_or_else(|_| "-".into(), |b| format!("{:.1} MB", b as f64 / (1u64 << 20) as f64));
                println!("{:<16} {:<10} {}", d.model_id, d.role, size);
            }
            Ok(())
        }
    }
}

fn progress_printer(label: &'static str) -> impl FnMut(usize, usize) {
    let mut last = usize::MAX;
    move |done, total| {
        if total > 0 && (done == total || done * 20 / total != last) {
            last = done * 20 / total;
            eprint!("\r{label} {done}/{total}");
            if done == total {
                eprintln!();
            }
        }
    }
}

fn cmd_index(config: &AppConfig, registry: &Registry, a: IndexArgs) -> Result<(), Failure> {
    let dir = a.dir.unwrap_or_else(|| config.catalog_root.clone());
    let model = a.model.unwrap_or_else(|| config.default_model.clone());
    let extractor = registry.extractor(&model)?;
    let scan = scan_directory(&dir, &default_extensions())?;
    for u in &scan.unreadable {
        eprintln!("skipped {}: {}", u.path, u.reason);
    }
    let root = PathBuf::from(scan.snapshot.root());
    let store = index_dir(&config.index_cache_dir, scan.snapshot.root(), &model);
    let outcome = refresh_index(&root, &store, &scan.snapshot, extractor.as_ref(), a.force, &mut progress_printer("extracting"))?;
    for s in outcome.index.skipped() {
        eprintln!("skipped {}: {}", s.entry.relative_path, s.reason);
    }
    match outcome.kind {
        RefreshKind::Reused => println!("0 changed, index reused"),
        RefreshKind::Built => println!("indexed {} images", outcome.index.len()),
        RefreshKind::Updated => println!(
            "{} added, {} removed, {} modified, {} unchanged; indexed {} images",
            outcome.added,
            outcome.removed,
            outcome.modified,
            outcome.unchanged,
            outcome.index.len()
        ),
    }
    Ok(())
}

fn cmd_search(config: &AppConfig, registry: &Registry, a: SearchArgs) -> Result<(), Failure> {
    let dir = a.dir.unwrap_or_else(|| config.catalog_root.clone());
    let model = a.model.unwrap_or_else(|| config.default_model.clone());
    let detector_id = a.detector.unwrap_or_else(|| config.default_detector.clone());
    let spec = QuerySpec {
        threshold: a.threshold.unwrap_or(config.default_threshold),
        k: a.k.unwrap_or(config.default_k),
        seed: a.seed,
        max_attempts: a.max_attempts,
        pad_fraction: a.pad,
        ..QuerySpec::new(a.prompt)
    };
    spec.validate()?;
    let extractor = registry.extractor(&model)?;
    let detector = registry.detector(&detector_id)?;

    let first = scan_directory(&dir, &default_extensions())?;
    let root = PathBuf::from(first.snapshot.root());
    let store = index_dir(&config.index_cache_dir, first.snapshot.root(), &model);
    let fresh = match load_index(&store) {
        Ok(ix) if ix.model_revision() == extractor.revision() => pending_changes(&ix, &first.snapshot)?.is_empty(),
        _ => false,
    };
    if !fresh {
        eprintln!("index for {model} is missing or out of date; updating it");
    }
    let index = refresh_index(&root, &store, &first.snapshot, extractor.as_ref(), false, &mut progress_printer("extracting"))?.index;
    let scan = scan_directory_reusing(&root, &default_extensions(), Some(&first.snapshot))?;
    let ctx = SearchContext {
        root: &root,
        snapshot: &scan.snapshot,
        index: &index,
        extractor: extractor.as_ref(),
        detector: detector.as_ref(),
    };
    let outcome = search(&ctx, &spec).map_err(|e| Failure {
        code: if e.is_prompt_not_found() { EXIT_PROMPT_NOT_FOUND } else { 1 },
        message: format!("{} ({})", e, error_code(&e)),
    })?;
    let response = SearchResponse::from_outcome(&model, &detector_id, &outcome);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&response)?);
        return Ok(());
    }
    let p = &response.provenance;
    eprintln!(
        "query crop from {} at [{:.0}, {:.0}, {:.0}, {:.0}], detector score {:.3}, seed {}",
        p.source_path, p.bbox[0], p.bbox[1], p.bbox[2], p.bbox[3], p.detector_score, p.seed
    );
    for item in &response.items {
        println!("{:>3}  {:.4}  {}", item.rank, item.score, item.path);
    }
    Ok(())
}

fn cmd_bench(config: &AppConfig, registry: &Registry, a: BenchArgs) -> Result<(), Failure> {
    let root = a.dir.clone().unwrap_or_else(|| a.labels.parent().unwrap_or(Path::new(".")).to_path_buf());
    let bench = BenchConfig {
        root,
        labels_file: a.labels,
        prompts_file: a.prompts,
        models: a.models,
        detector: a.detector.unwrap_or_else(|| config.default_detector.clone()),
        prompts: (!a.only_prompts.is_empty()).then_some(a.only_prompts),
        thresholds: a.thresholds,
        seeds: a.seeds,
        k: a.k,
        warmup: a.warmup,
        repeats: a.repeats,
        bench_images: a.bench_images,
        index_cache: config.index_cache_dir.clone(),
    };
    let report = run_bench(&bench, registry, &mut |m| eprintln!("{m}"))?;
    let (text, json) = render_report(&report);
    print!("{text}");
    if let Some(out) = a.out {
        fs::create_dir_all(&out)?;
        fs::write(out.join("report.txt"), &text)?;
        fs::write(out.join("report.json"), &json)?;
    }
    if report.models.iter().all(|m| m.failure.is_some()) {
        return Err("every model failed".to_string().into());
    }
    Ok(())
}

fn cmd_serve(mut config: AppConfig, registry: Registry, a: ServeArgs) -> Result<(), Failure> {
    if let Some(b) = a.bind {
        config.bind_address = b;
    }
    if let Some(d) = a.dir {
        config.catalog_root = d;
    }
    let state = Arc::new(AppState::new(config, registry)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(state))?;
    Ok(())
}
