//! `ovdet`: object-pool construction, synthetic data generation, loss
//! checks, AP / Fixed-AP evaluation and a generation benchmark.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 check failure or
//! internal error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use ovdet::dataio::{
    load_annotations, load_detections, save_annotations, write_atomic, write_image,
    AnnotationSet, CategoryInfo, ImageRecord, RunConfig,
};
use ovdet::metrics::scenario::SupplementScenario;
use ovdet::metrics::{evaluate, EvalDataset, EvalMode};
use ovdet::synth::{grid_corpus_digest, grid_synthesize, pipeline_sample};
use ovdet::vlalign::{run_loss_check, LossCheckConfig, GRADIENT_TOLERANCE, MINIMIZER_TOLERANCE};
use ovdet::{build_pool, CategoryId, Error, ObjectPool, SampleAnnotation};

#[derive(Parser)]
#[command(name = "ovdet", version, about = "Open-vocabulary detection data and evaluation tools")]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Print a machine-readable JSON summary instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract context-expanded object patches from an annotated dataset.
    PoolBuild(PoolBuildArgs),
    /// Generate GridSynthetic (or full pipeline) samples from a pool.
    Synth(SynthArgs),
    /// Check loss derivatives and minimizers numerically.
    Losscheck(LossCheckArgs),
    /// Score detections with AP or Fixed AP.
    Eval(EvalArgs),
    /// AP against supplement budget on a synthetic crowded scene.
    Sweep(SweepArgs),
    /// Measure generation throughput and check worker-count determinism.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PoolBuildArgs {
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    images_dir: Option<PathBuf>,
    #[arg(long, default_value_t = ovdet::pool::DEFAULT_CONTEXT_RATIO)]
    context_ratio: f64,
    #[arg(long, default_value_t = ovdet::pool::DEFAULT_MIN_SIDE)]
    min_side: u32,
    /// Output directory for patches and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_images: Option<PathBuf>,
    #[arg(long)]
    out_annotations: Option<PathBuf>,
    /// Grid resolutions as `MxN` pairs, e.g. `4x4,8x8`.
    #[arg(long, value_delimiter = ',', value_parser = parse_resolution)]
    grid: Option<Vec<(u32, u32)>>,
    #[arg(long)]
    css_probability: Option<f64>,
    #[arg(long)]
    flip_probability: Option<f64>,
    /// Base stream annotations, required when the config sets a pipeline.
    #[arg(long)]
    base_annotations: Option<PathBuf>,
    #[arg(long)]
    base_images_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct LossCheckArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda_neg: Option<f64>,
    #[arg(long, default_value_t = 100_001)]
    grid_density: usize,
    #[arg(long, hide = true)]
    corrupt_derivative: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Fixed,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    per_image_cap: Option<usize>,
    /// Dataset-wide per-category cap in fixed mode.
    #[arg(long)]
    per_class_cap: Option<usize>,
    /// Write the full JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,100,200,300,400,500,600,700")]
    budgets: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    images: usize,
    #[arg(long, default_value_t = 400)]
    objects: usize,
    #[arg(long, default_value_t = 300)]
    decoder_queries: usize,
    #[arg(long, default_value_t = 1200)]
    background_rows: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    count: u64,
    /// Worker counts to compare, e.g. `1,8`. Defaults to 1 and all cores.
    #[arg(long, value_delimiter = ',')]
    workers: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Result of a command: a JSON summary, its text rendering and exit code.
struct Outcome {
    summary: Value,
    text: String,
    code: u8,
}

impl Outcome {
    fn ok(summary: Value, text: String) -> Self {
        Self {
            summary,
            text,
            code: 0,
        }
    }
}

enum CliError {
    Usage(String),
    Data(Error),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Internal(m) => m.clone(),
            CliError::Data(e) => e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&out.summary).expect("summary serializes"));
            } else {
                print!("{}", out.text);
            }
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            if json {
                println!("{}", json!({ "error": e.message(), "exit_code": e.code() }));
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<Outcome> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::PoolBuild(a) => with_workers(a.workers.or(cfg.workers), || pool_build(a, &cfg)),
        Command::Synth(a) => with_workers(a.workers.or(cfg.workers), || synth(a, &cfg)),
        Command::Losscheck(a) => losscheck(a, &cfg),
        Command::Eval(a) => with_workers(a.workers.or(cfg.workers), || eval(a, &cfg)),
        Command::Sweep(a) => sweep(a),
        Command::Bench(a) => bench(a, &cfg),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn require(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| CliError::Usage(format!("{name} is required (flag or config paths section)")))
}

fn parse_resolution(s: &str) -> Result<(u32, u32), String> {
    let (m, n) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected MxN, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{s:?}: {e}"));
    Ok((parse(m)?, parse(n)?))
}

fn existing_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
        }))
    }
}

fn load_samples(annotations: &Path, images_dir: &Path) -> CliResult<(AnnotationSet, Vec<SampleAnnotation>)> {
    existing_dir(images_dir)?;
    let set = load_annotations(annotations)?;
    eprintln!("decoding {} images from {}", set.images.len(), images_dir.display());
    let samples = set
        .images
        .par_iter()
        .map(|r| r.load_sample(images_dir, &set.categories))
        .collect::<ovdet::Result<Vec<_>>>()?;
    Ok((set, samples))
}

fn pool_build(a: PoolBuildArgs, cfg: &RunConfig) -> CliResult<Outcome> {
    let annotations = require(a.annotations, &cfg.paths.annotations, "--annotations")?;
    let images_dir = require(a.images_dir, &cfg.paths.images_dir, "--images-dir")?;
    let out = require(a.out, &cfg.paths.pool, "--out")?;
    let (set, samples) = load_samples(&annotations, &images_dir)?;
    let pool = build_pool(&samples, a.context_ratio, a.min_side)?;
    pool.save(&out)?;

    let names = set.text_labels();
    let mut text = format!("pool of {} patches written to {}\n", pool.len(), out.display());
    let mut per_category = serde_json::Map::new();
    for (cat, idx) in pool.by_category() {
        let name = names.get(cat).cloned().unwrap_or_else(|| cat.to_string());
        text.push_str(&format!("{cat:>8}  {name:<24} {:>6}\n", idx.len()));
        per_category.insert(cat.to_string(), json!(idx.len()));
    }
    let summary = json!({
        "patches": pool.len(),
        "per_category": per_category,
        "out": out,
        "context_ratio": a.context_ratio,
        "min_side": a.min_side,
    });
    Ok(Outcome::ok(summary, text))
}

fn synth(a: SynthArgs, cfg: &RunConfig) -> CliResult<Outcome> {
    let mut cfg = cfg.clone();
    if let Some(seed) = a.seed {
        cfg.synth.rng_seed = seed;
    }
    if let Some(g) = a.grid {
        cfg.synth.grid.resolutions = g;
    }
    if let Some(p) = a.css_probability {
        cfg.synth.grid.css_probability = p;
    }
    if let Some(p) = a.flip_probability {
        cfg.synth.flip_probability = p;
    }
    cfg.validate()?;
    let out_images = require(a.out_images, &cfg.paths.out_images, "--out-images")?;
    let out_annotations = require(a.out_annotations, &cfg.paths.out_annotations, "--out-annotations")?;
    let pipeline = cfg.pipeline_config();

    let pool_path = a.pool.or_else(|| cfg.paths.pool.clone());
    let pool = match (&pool_path, &pipeline) {
        (Some(p), _) => Some(ObjectPool::load(p)?),
        (None, None) => return Err(CliError::Usage("--pool is required".into())),
        (None, Some(_)) => None,
    };
    let (base_set, base) = match &pipeline {
        Some(_) => {
            let ann = require(a.base_annotations, &cfg.paths.annotations, "--base-annotations")?;
            let dir = require(a.base_images_dir, &cfg.paths.images_dir, "--base-images-dir")?;
            let (set, samples) = load_samples(&ann, &dir)?;
            (Some(set), samples)
        }
        None => (None, Vec::new()),
    };
    std::fs::create_dir_all(&out_images).map_err(|e| CliError::Data(Error::Io {
        path: out_images.clone(),
        source: e,
    }))?;

    let seed = cfg.synth.rng_seed;
    let name_of = |i: u64| format!("synth_{i:06}.png");
    let mut records = Vec::with_capacity(a.count as usize);
    let mut labels: BTreeMap<CategoryId, String> = BTreeMap::new();
    const CHUNK: u64 = 256;
    let mut start = 0;
    while start < a.count {
        let end = (start + CHUNK).min(a.count);
        let chunk = (start..end)
            .into_par_iter()
            .map(|i| {
                let s = match &pipeline {
                    Some(pc) => pipeline_sample(&base, pool.as_ref(), pc, seed, i)?.0,
                    None => grid_synthesize(pool.as_ref().expect("pool checked"), &cfg.synth, i)?,
                };
                write_image(&s.image, &out_images.join(name_of(i)))?;
                Ok((i, s.width(), s.height(), s.instances, s.text_labels))
            })
            .collect::<ovdet::Result<Vec<_>>>()?;
        for (i, w, h, instances, l) in chunk {
            labels.extend(l);
            records.push(ImageRecord {
                id: i,
                file_name: name_of(i),
                width: w,
                height: h,
                instances: instances
                    .into_iter()
                    .map(|inst| ovdet::Instance { image_id: i, ..inst })
                    .collect(),
            });
        }
        eprintln!("generated {end}/{}", a.count);
        start = end;
    }

    let mut categories: BTreeMap<CategoryId, CategoryInfo> = BTreeMap::new();
    if let Some(set) = &base_set {
        for c in &set.categories {
            categories.insert(c.id, c.clone());
        }
    }
    if let Some(p) = &pool {
        labels.extend(p.text_labels().clone());
    }
    for r in &records {
        for inst in &r.instances {
            labels.entry(inst.category_id).or_insert_with(|| inst.category_id.to_string());
        }
    }
    for (id, name) in labels {
        categories.entry(id).or_insert(CategoryInfo {
            id,
            name,
            frequency: None,
        });
    }
    let set = AnnotationSet {
        images: records,
        categories: categories.into_values().collect(),
    };
    save_annotations(&set, &out_annotations)?;

    let mut histogram: BTreeMap<usize, u64> = BTreeMap::new();
    for r in &set.images {
        *histogram.entry(r.instances.len()).or_default() += 1;
    }
    let mut text = format!(
        "{} samples, {} instances -> {} and {}\ninstances per sample:\n",
        set.images.len(),
        set.instance_count(),
        out_images.display(),
        out_annotations.display()
    );
    for (k, v) in &histogram {
        text.push_str(&format!("{k:>8} {v:>8}\n"));
    }
    let summary = json!({
        "samples": set.images.len(),
        "instances": set.instance_count(),
        "seed": seed,
        "mode": if pipeline.is_some() { "pipeline" } else { "grid_synthetic" },
        "instance_histogram": histogram.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "out_images": out_images,
        "out_annotations": out_annotations,
    });
    Ok(Outcome::ok(summary, text))
}

fn losscheck(a: LossCheckArgs, cfg: &RunConfig) -> CliResult<Outcome> {
    let check = LossCheckConfig {
        gamma: a.gamma.unwrap_or(cfg.loss.gamma),
        lambda_neg: a.lambda_neg.unwrap_or(cfg.loss.lambda_neg),
        grid_density: a.grid_density,
        corrupt_derivative: a.corrupt_derivative,
    };
    if !(check.gamma.is_finite() && check.gamma >= 0.0 && check.lambda_neg.is_finite() && check.lambda_neg >= 0.0) {
        return Err(CliError::Usage("--gamma and --lambda-neg must be finite and non-negative".into()));
    }
    if check.grid_density < 3 {
        return Err(CliError::Usage("--grid-density must be at least 3".into()));
    }
    let r = run_loss_check(&check);
    let verdict = |ok| if ok { "ok" } else { "FAILED" };
    let mut text = format!(
        "gamma {}, lambda_neg {}\nderivative: max relative error {:.3e} (tolerance {:.0e}) {}\nminimizer:  max |p* - q^gamma| {:.3e} (tolerance {:.0e}) {}\n\n{:>6} {:>10} {:>10}\n",
        r.gamma,
        check.lambda_neg,
        r.max_gradient_rel_error,
        GRADIENT_TOLERANCE,
        verdict(r.gradient_ok),
        r.max_minimizer_error,
        MINIMIZER_TOLERANCE,
        verdict(r.minimizer_ok),
        "q",
        "p*",
        "q^gamma"
    );
    for m in &r.minimizers {
        text.push_str(&format!("{:>6.2} {:>10.5} {:>10.5}\n", m.q, m.p_star, m.q_pow_gamma));
    }
    let code = if r.passed() { 0 } else { 3 };
    if code != 0 {
        eprintln!("loss check outside tolerance");
    }
    Ok(Outcome {
        summary: serde_json::to_value(&r).expect("report serializes"),
        text,
        code,
    })
}

fn eval(a: EvalArgs, cfg: &RunConfig) -> CliResult<Outcome> {
    let gt = require(a.gt, &cfg.paths.annotations, "--gt")?;
    let dets = require(a.dets, &cfg.paths.detections, "--dets")?;
    let mut ec = cfg.eval.clone();
    if let Some(m) = a.mode {
        let (mode, cap) = match m {
            ModeArg::Standard => (EvalMode::Standard, 300),
            ModeArg::Fixed => (EvalMode::Fixed, 1000),
        };
        ec.mode = mode;
        ec.per_image_cap = cap;
    }
    if let Some(c) = a.per_image_cap {
        ec.per_image_cap = c;
    }
    if let Some(c) = a.per_class_cap {
        ec.per_class_global_cap = c;
    }
    ec.validate()?;
    let set = load_annotations(&gt)?;
    let detections = load_detections(&dets)?;
    let ds = EvalDataset::from_annotations(&set, detections).map_err(|e| match e {
        Error::InvalidConfig(m) => CliError::Data(Error::DanglingReference { path: dets.clone(), message: m }),
        other => other.into(),
    })?;
    let report = evaluate(&ds, &ec)?;
    if let Some(path) = a.report.or_else(|| cfg.paths.report.clone()) {
        write_atomic(&path, report.to_json().as_bytes())?;
        eprintln!("report written to {}", path.display());
    }
    let summary = json!({
        "mode": report.mode,
        "per_image_cap": report.per_image_cap,
        "ap": report.ap,
        "ap_r": report.ap_r,
        "ap_c": report.ap_c,
        "ap_f": report.ap_f,
    });
    Ok(Outcome::ok(summary, report.to_table()))
}

fn sweep(a: SweepArgs) -> CliResult<Outcome> {
    let sc = SupplementScenario {
        images: a.images,
        objects_per_image: a.objects,
        decoder_queries: a.decoder_queries,
        background_rows: a.background_rows,
        ..SupplementScenario {
            seed: a.seed,
            ..SupplementScenario::default()
        }
    };
    if sc.images == 0 || sc.objects_per_image == 0 || sc.decoder_queries > sc.objects_per_image + sc.background_rows {
        return Err(CliError::Usage("scenario needs images, objects and enough encoder rows".into()));
    }
    let points = sc.sweep(&a.budgets)?;
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}", 100.0 * x));
    let mut text = format!("{:>10} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "supplement", "cap", "AP", "AP_r", "AP_c", "AP_f");
    for p in &points {
        text.push_str(&format!(
            "{:>10} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            p.supplement_queries,
            p.per_image_cap,
            pct(Some(p.ap)),
            pct(p.ap_r),
            pct(p.ap_c),
            pct(p.ap_f)
        ));
    }
    let non_decreasing = points.windows(2).all(|w| w[1].ap >= w[0].ap);
    Ok(Outcome::ok(json!({ "points": points, "non_decreasing": non_decreasing }), text))
}

fn bench(a: BenchArgs, cfg: &RunConfig) -> CliResult<Outcome> {
    let pool_path = require(a.pool, &cfg.paths.pool, "--pool")?;
    let pool = ObjectPool::load(&pool_path)?;
    let mut synth = cfg.synth.clone();
    if let Some(s) = a.seed {
        synth.rng_seed = s;
    }
    let workers = if a.workers.is_empty() {
        let all = std::thread::available_parallelism().map_or(1, |n| n.get());
        if all > 1 {
            vec![1, all]
        } else {
            vec![1]
        }
    } else {
        a.workers
    };
    if workers.contains(&0) {
        return Err(CliError::Usage("--workers entries must be positive".into()));
    }
    let mut runs = Vec::new();
    let mut text = format!("{:>8} {:>12} {:>12}  digest\n", "workers", "seconds", "samples/s");
    for &w in &workers {
        eprintln!("bench: {} samples on {w} workers", a.count);
        let start = Instant::now();
        let digest = grid_corpus_digest(&pool, &synth, a.count, w)?;
        let secs = start.elapsed().as_secs_f64();
        let rate = if secs > 0.0 { a.count as f64 / secs } else { 0.0 };
        text.push_str(&format!("{w:>8} {secs:>12.3} {rate:>12.1}  {}\n", &digest[..16]));
        runs.push(json!({ "workers": w, "seconds": secs, "samples_per_second": rate, "digest": digest }));
    }
    let identical = runs.windows(2).all(|r| r[0]["digest"] == r[1]["digest"]);
    let summary = json!({ "count": a.count, "runs": runs, "digests_identical": identical });
    if !identical {
        eprintln!("error: corpus digest differs across worker counts");
        return Ok(Outcome {
            summary,
            text,
            code: 3,
        });
    }
    text.push_str("digest identical across worker counts\n");
    Ok(Outcome::ok(summary, text))
}
