mod config;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use sembar::agent::{aggregate_rubric, build_prompt, query_agent, verify_all, Flag, ImageMeta, LlmClient, RubricScore, RuleConfig};
use sembar::autodg::{generate_dataset, import_manifest, DatasetManifest, Split};
use sembar::detect::{detect_bars, DetectorBackend};
use sembar::extract::{extract_scale, BarReading};
use sembar::imaging::load_image;
use sembar::metrics::{score_extraction, EvalReport, ImageResults};
use sembar::ocr::{hybrid_recognize, OcrEngineConfig};
use sembar::BoundingBox;
use sembar_service::{AppState, Pipeline, Store};

use config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "sembar", version, about = "Find, read and check scale bars in electron micrographs")]
struct Cli {
    /// Settings file (TOML, or a generator config as JSON).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// error, warn, info, debug or trace. Defaults to RUST_LOG, then warn.
    #[arg(long, global = true, value_name = "LEVEL")]
    log_level: Option<log::LevelFilter>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic annotated dataset.
    Gen {
        /// Number of images; overrides the config file.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (images/, labels/, manifest.json).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Train, val and test fractions, e.g. 0.7,0.15,0.15.
        #[arg(long, value_name = "T,V,S", value_parser = parse_ratios)]
        split_ratios: Option<[f64; 3]>,
    },
    /// Detect scale bars.
    Detect {
        #[arg(required = true, value_name = "IMG")]
        images: Vec<PathBuf>,
        /// builtin or ext:<command>.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Read the text in one region.
    Ocr {
        #[arg(value_name = "IMG")]
        image: PathBuf,
        #[arg(long, value_name = "X0,Y0,X1,Y1", value_parser = parse_region)]
        region: BoundingBox,
        /// General-purpose engine: builtin or ext:<command>.
        #[arg(long)]
        engine: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Detect bars, read their labels and derive the pixel size.
    Extract {
        #[arg(value_name = "IMG")]
        image: PathBuf,
        /// Detector: builtin or ext:<command>.
        #[arg(long)]
        backend: Option<String>,
        /// General-purpose OCR engine: builtin or ext:<command>.
        #[arg(long)]
        engine: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Score the pipeline, or saved predictions, against a generated dataset.
    Eval {
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Read predictions (`<stem>.json` per image) instead of running the pipeline.
        #[arg(long, value_name = "DIR")]
        pred: Option<PathBuf>,
        /// Also write the pipeline's predictions here.
        #[arg(long, value_name = "DIR", conflicts_with = "pred")]
        save_pred: Option<PathBuf>,
        /// Detector: builtin or ext:<command>.
        #[arg(long)]
        backend: Option<String>,
        /// General-purpose OCR engine: builtin or ext:<command>.
        #[arg(long)]
        engine: Option<String>,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        /// Where to write the JSON report.
        #[arg(long, value_name = "FILE", default_value = "eval_report.json")]
        report: PathBuf,
    },
    /// Check an image's scale reading and ask the agent about it.
    Agent {
        #[arg(long, value_name = "IMG")]
        image: PathBuf,
        #[arg(long)]
        question: Option<String>,
        /// Use the deterministic offline responder.
        #[arg(long)]
        stub: bool,
        #[arg(long)]
        json: bool,
    },
    /// Summarize rubric scores from a JSON list.
    Rubric {
        #[arg(value_name = "FILE")]
        scores: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        /// Defaults to the config file's port, then 8080.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Store directory. Defaults to the config file's store, then ./store.
        #[arg(long, value_name = "DIR")]
        store: Option<PathBuf>,
        /// Answer agent queries with the offline responder.
        #[arg(long)]
        stub_llm: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    parts.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

fn parse_region(s: &str) -> Result<BoundingBox, String> {
    let v: Vec<u32> = s.split(',').map(|p| p.trim().parse::<u32>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let [x0, y0, x1, y1]: [u32; 4] = v.try_into().map_err(|_| "expected x0,y0,x1,y1".to_string())?;
    BoundingBox::new(x0, y0, x1, y1).map_err(|e| e.to_string())
}

fn main() {
    // Exit quietly when stdout is closed early, e.g. piped into `head`.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let mut logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if let Some(level) = cli.log_level {
        logger.filter_level(level);
    }
    logger.init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen { count, seed, out, split_ratios } => gen(&file, count, seed, &out, split_ratios),
        Command::Detect { images, backend, json } => detect(&file, &images, backend.as_deref(), json),
        Command::Ocr { image, region, engine, json } => ocr(&file, &image, region, engine.as_deref(), json),
        Command::Extract { image, backend, engine, json } => extract(&file, &image, backend.as_deref(), engine.as_deref(), json),
        Command::Eval { dataset, pred, save_pred, backend, engine, split, report } => {
            let detector = file.detector(backend.as_deref())?;
            let ocr = file.ocr(engine.as_deref())?;
            let source = match &pred {
                Some(dir) => Predictions::Saved(dir),
                None => Predictions::Run { detector: &detector, ocr: &ocr, save: save_pred.as_deref() },
            };
            eval(&dataset, source, split, &report)
        }
        Command::Agent { image, question, stub, json } => agent(&file, &image, question.as_deref(), stub, json),
        Command::Rubric { scores } => rubric(&scores),
        Command::Serve { port, host, store, stub_llm } => serve(&file, host, port, store, stub_llm),
    }
}

fn gen(file: &FileConfig, count: Option<usize>, seed: u64, out: &Path, ratios: Option<[f64; 3]>) -> Result<()> {
    let mut config = file.gen.clone().unwrap_or_default();
    if let Some(n) = count {
        config.count = n;
    }
    if let Some(r) = ratios {
        config.split_ratios = r;
    }
    let started = Instant::now();
    let manifest = generate_dataset(&config, seed, out).context("dataset generation failed")?;
    let per_split: Vec<String> =
        Split::ALL.iter().map(|s| format!("{} {}", s.as_str(), manifest.split(*s).count())).collect();
    println!(
        "wrote {} images to {} ({}) in {:.1} s",
        manifest.records.len(),
        out.display(),
        per_split.join(", "),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn detect(file: &FileConfig, images: &[PathBuf], backend: Option<&str>, as_json: bool) -> Result<()> {
    let detector = file.detector(backend)?;
    let mut all = Vec::new();
    for path in images {
        let image = load_image(path)?;
        let dets = detect_bars(&image, &detector).with_context(|| format!("detection failed on {}", path.display()))?;
        if as_json {
            all.push(json!({"image": path.display().to_string(), "detections": dets}));
        } else {
            println!("{}: {} bar(s)", path.display(), dets.len());
            for d in dets {
                println!("  {:<11} {:.3}  {}", d.shape.as_str(), d.confidence, d.bbox);
            }
        }
    }
    if as_json {
        println!("{}", serde_json::to_string_pretty(&all)?);
    }
    Ok(())
}

fn ocr(file: &FileConfig, path: &Path, region: BoundingBox, engine: Option<&str>, as_json: bool) -> Result<()> {
    let image = load_image(path)?;
    let t = hybrid_recognize(&image, region, &file.ocr(engine)?)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&t)?);
    } else {
        println!("{:?} confidence {:.3} ({:?}{})", t.text, t.confidence, t.engine, if t.validated { "" } else { ", not a scale label" });
    }
    Ok(())
}

/// Readings with the verification flags of the whole image attached.
fn verified_readings(image: &sembar::RasterImage, detector: &DetectorBackend, ocr: &OcrEngineConfig) -> Result<Vec<BarReading>> {
    let mut readings = extract_scale(image, detector, ocr)?;
    let flags = verify_all(&readings, &RuleConfig::default());
    for (r, flags) in readings.iter_mut().zip(flags) {
        r.flags = flags;
    }
    Ok(readings)
}

fn extract(file: &FileConfig, path: &Path, backend: Option<&str>, engine: Option<&str>, as_json: bool) -> Result<()> {
    let image = load_image(path)?;
    let readings = verified_readings(&image, &file.detector(backend)?, &file.ocr(engine)?)?;
    let records: Vec<_> = readings.iter().map(BarReading::to_record).collect();
    if as_json {
        println!("{}", serde_json::to_string_pretty(&records)?);
        return Ok(());
    }
    if records.is_empty() {
        println!("no scale bar found");
    }
    for (i, r) in records.iter().enumerate() {
        match (&r.text, r.pixel_pitch_m) {
            (Some(text), Some(pitch)) => println!("bar {i} {}: {text:?} -> {pitch:.6e} m/px", r.bar_bbox),
            _ => println!("bar {i} {}: no label", r.bar_bbox),
        }
        for f in &r.flags {
            println!("  flag {}", f.as_str());
        }
    }
    Ok(())
}

enum Predictions<'a> {
    Saved(&'a Path),
    Run { detector: &'a DetectorBackend, ocr: &'a OcrEngineConfig, save: Option<&'a Path> },
}

fn pred_path(dir: &Path, image_path: &str) -> PathBuf {
    let stem = Path::new(image_path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dir.join(format!("{stem}.json"))
}

fn eval(dataset: &Path, source: Predictions<'_>, split: SplitArg, report_path: &Path) -> Result<()> {
    let mut manifest: DatasetManifest = import_manifest(&dataset.join("manifest.json"))?;
    let wanted = match split {
        SplitArg::All => None,
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
    };
    if let Some(s) = wanted {
        manifest.records.retain(|r| r.split == s);
    }
    if manifest.records.is_empty() {
        bail!("no images in the selected split");
    }
    let started = Instant::now();
    let results: Vec<ImageResults> = match source {
        Predictions::Saved(dir) => manifest
            .records
            .iter()
            .map(|r| {
                let path = pred_path(dir, &r.image_path);
                let readings = match std::fs::read(&path) {
                    Ok(bytes) => serde_json::from_slice(&bytes).with_context(|| format!("invalid predictions {}", path.display()))?,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
                    Err(e) => return Err(e.into()),
                };
                Ok(ImageResults { image_path: r.image_path.clone(), readings })
            })
            .collect::<Result<_>>()?,
        Predictions::Run { detector, ocr, save } => {
            if let Some(dir) = save {
                std::fs::create_dir_all(dir)?;
            }
            manifest
                .records
                .par_iter()
                .map(|r| {
                    let image = load_image(dataset.join(&r.image_path))?;
                    let readings = verified_readings(&image, detector, ocr)?;
                    if let Some(dir) = save {
                        std::fs::write(pred_path(dir, &r.image_path), serde_json::to_vec_pretty(&readings)?)?;
                    }
                    Ok(ImageResults { image_path: r.image_path.clone(), readings })
                })
                .collect::<Result<_>>()?
        }
    };
    let report = score_extraction(&results, &manifest)?;
    std::fs::write(report_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", report_path.display()))?;
    print_report(&report, started.elapsed().as_secs_f64());
    println!("report written to {}", report_path.display());
    Ok(())
}

fn print_report(r: &EvalReport, seconds: f64) {
    let c = &r.counts;
    let mut out = std::io::stdout().lock();
    let rows = [
        ("images", format!("{}", c.images)),
        ("bars gt / predicted", format!("{} / {}", c.gt_bars, c.predicted_bars)),
        ("bar precision", format!("{:.4}", r.precision)),
        ("bar recall", format!("{:.4}", r.recall)),
        ("bar F1", format!("{:.4}", r.f1)),
        ("AP@0.5", format!("{:.4}", r.ap_50)),
        ("mAP@0.5:0.95", format!("{:.4}", r.map_50_95)),
        ("scale precision", format!("{:.4}", r.ocr_precision)),
        ("scale recall", format!("{:.4}", r.ocr_recall)),
        ("scale F1", format!("{:.4}", r.ocr_f1)),
        ("seconds", format!("{seconds:.1}")),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<22}{v:>12}");
    }
}

fn agent(file: &FileConfig, path: &Path, question: Option<&str>, stub: bool, as_json: bool) -> Result<()> {
    let image = load_image(path)?;
    let readings = verified_readings(&image, &file.detector(None)?, &file.ocr(None)?)?;
    let flags: Vec<Flag> = readings.iter().flat_map(|r| r.flags.iter().cloned()).collect();
    let meta = ImageMeta {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()),
        width: image.width(),
        height: image.height(),
    };
    let prompt = build_prompt(&meta, &readings, &flags, question);
    let client = LlmClient::new(file.llm(stub));
    let report = query_agent(&prompt, &flags, &client)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("verdict: {:?}", report.verdict);
    for f in &report.flags {
        println!("flag {} ({:?}): {}", f.code.as_str(), f.severity, f.message);
    }
    println!("\n{}", report.narrative);
    for s in &report.suggestions {
        println!("- {s}");
    }
    Ok(())
}

fn rubric(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let scores: Vec<RubricScore> = serde_json::from_slice(&bytes).context("expected a JSON list of rubric scores")?;
    let summary = aggregate_rubric(&scores)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn serve(file: &FileConfig, host: std::net::IpAddr, port: Option<u16>, store: Option<PathBuf>, stub_llm: bool) -> Result<()> {
    let port = port.or(file.service.port).unwrap_or(8080);
    let root = store.or_else(|| file.service.store.clone()).unwrap_or_else(|| PathBuf::from("store"));
    let store = Store::open(&root).with_context(|| format!("cannot open store {}", root.display()))?;
    let mut state = AppState::new(store, LlmClient::new(file.llm(stub_llm)));
    let (det, ocr) = (&file.service.external_detector, &file.service.external_ocr);
    if det.is_some() || ocr.is_some() {
        let builtin = Pipeline::builtin();
        let mut ocr_config = builtin.ocr.clone();
        if let Some(cmd) = ocr {
            ocr_config.general = sembar::ocr::EngineSelector::External(file.adapter_pool(cmd));
        }
        state = state.with_external(Pipeline {
            name: "ext".into(),
            detector: det.as_ref().map_or(DetectorBackend::Builtin, |cmd| DetectorBackend::External(file.adapter_pool(cmd))),
            ocr: ocr_config,
            ..builtin
        });
    }
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("serving {} on http://{host}:{port}", root.display());
    runtime.block_on(sembar_service::serve(state, SocketAddr::new(host, port)))?;
    Ok(())
}
