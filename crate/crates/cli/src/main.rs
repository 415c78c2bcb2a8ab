use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use xdfsod::bench::{self, BenchReport};
use xdfsod::config::{EvalClasses, RunConfig};
use xdfsod::detector::{self, Checkpoint};
use xdfsod::embedding::gradcheck::{self, GradcheckConfig};
use xdfsod::episodic::{load_annotations, DatasetIndex, DatasetView};
use xdfsod::metrics::{evaluate, DetectionRecord, GroundTruth};
use xdfsod::rng::{self, purpose};
use xdfsod::synthgen::{generate_dataset, GapPreset};
use xdfsod::{BBox, Error, ErrorKind, ImageRGB, Result};

#[derive(Parser, Debug)]
#[command(name = "xdfsod", version, about = "Few-shot detection under domain shift: data, training, inference, evaluation")]
struct Cli {
    /// Run config (TOML, or JSON by extension). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a paired source/target synthetic shapes dataset.
    Synthgen(SynthArgs),
    /// Episodic training on base classes.
    MetaTrain,
    /// Few-shot fine-tuning on novel classes.
    MetaTest {
        /// Meta-trained checkpoint; defaults to <out>/checkpoints/meta_train.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Detect novel classes on a held-out test split.
    Infer {
        /// Meta-tested checkpoint; defaults to <out>/checkpoints/meta_test.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DomainArg::Target)]
        domain: DomainArg,
    },
    /// Score detections against ground truth.
    Eval {
        /// Annotation JSON; defaults to <out>/ground_truth.json.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Detection list; defaults to <out>/detections.json.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Overrides `metrics.classes`.
        #[arg(long, value_enum)]
        classes: Option<ClassesArg>,
    },
    /// Compare analytic and finite-difference gradients of the contrastive loss.
    Gradcheck,
    /// Write augmented variants of one image.
    AugmentPreview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Foreground box `x,y,w,h`; repeatable. Without boxes the
        /// background stage is skipped.
        #[arg(long = "box", value_parser = parse_box)]
        boxes: Vec<BBox>,
    },
    /// Generate data and compare the training variants end to end.
    Bench {
        #[arg(long, value_parser = parse_preset)]
        gap_preset: Option<GapPreset>,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Images per domain; defaults to `synth.n_images`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = parse_preset)]
    gap_preset: Option<GapPreset>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DomainArg {
    Source,
    Target,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ClassesArg {
    Novel,
    Base,
    All,
}

impl From<ClassesArg> for EvalClasses {
    fn from(c: ClassesArg) -> Self {
        match c {
            ClassesArg::Novel => EvalClasses::Novel,
            ClassesArg::Base => EvalClasses::Base,
            ClassesArg::All => EvalClasses::All,
        }
    }
}

fn parse_preset(s: &str) -> std::result::Result<GapPreset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_box(s: &str) -> std::result::Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, w, h] => Ok(BBox::new(x, y, w, h)),
        _ => Err(format!("expected x,y,w,h, got {s:?}")),
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    threads: usize,
    config_path: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write_json(&self, rel: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Record how this output was produced. Entries from other subcommands
    /// writing to the same directory are kept.
    fn manifest(&self, command: &str, extra: Value, outputs: &[PathBuf], started: Instant) -> Result<()> {
        let path = self.path("manifest.json");
        let mut doc: Value = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .filter(Value::is_object)
            .unwrap_or_else(|| json!({}));
        doc["tool"] = json!("xdfsod");
        doc["version"] = json!(env!("CARGO_PKG_VERSION"));
        doc["runs"][command] = json!({
            "command": command,
            "args": std::env::args().skip(1).collect::<Vec<_>>(),
            "seed": self.cfg.seed,
            "threads": self.threads,
            "config_file": self.config_path,
            "config": self.cfg,
            "outputs": outputs,
            "details": extra,
            "runtime_secs": started.elapsed().as_secs_f64(),
        });
        self.write_json("manifest.json", &doc)?;
        self.write_text("config.toml", &self.cfg.to_toml())?;
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let (label, code) = match e.kind() {
                ErrorKind::Config => ("config", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Check => ("check", 4),
            };
            eprintln!("error[{label}]: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let ctx = Ctx {
        cfg,
        out: cli.out,
        threads: cli.threads,
        config_path: cli.config,
    };
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    let started = Instant::now();
    match cli.command {
        Command::Synthgen(a) => synthgen(ctx, a, started),
        Command::MetaTrain => meta_train(ctx, started),
        Command::MetaTest { checkpoint } => meta_test(ctx, checkpoint, started),
        Command::Infer { checkpoint, domain } => infer(ctx, checkpoint, domain, started),
        Command::Eval {
            gt,
            detections,
            classes,
        } => eval(ctx, gt, detections, classes, started),
        Command::Gradcheck => run_gradcheck(ctx, started),
        Command::AugmentPreview { image, n, boxes } => augment_preview(ctx, &image, n, &boxes, started),
        Command::Bench { gap_preset } => run_bench(ctx, gap_preset, started),
    }
}

fn synthgen(mut ctx: Ctx, a: SynthArgs, started: Instant) -> Result<ExitCode> {
    if let Some(p) = a.gap_preset {
        ctx.cfg.synth.gap_preset = p;
    }
    if let Some(n) = a.n {
        ctx.cfg.synth.n_images = n;
    }
    let s = &ctx.cfg.synth;
    let (src, tgt) = generate_dataset(
        s.n_images,
        &s.scene,
        &s.source_spec(),
        &s.target_spec(),
        &ctx.cfg.split,
        &ctx.out,
        ctx.cfg.seed,
    )?;
    let outputs = vec![ctx.path("source/annotations.json"), ctx.path("target/annotations.json")];
    println!(
        "wrote {} source and {} target images ({} and {} objects) to {}",
        src.images().len(),
        tgt.images().len(),
        src.annotations().len(),
        tgt.annotations().len(),
        ctx.out.display()
    );
    ctx.manifest("synthgen", json!({ "n_images": s.n_images }), &outputs, started)?;
    Ok(ExitCode::SUCCESS)
}

fn loss_summary(trace: &[f64]) -> Value {
    let last = trace.len().saturating_sub(20);
    let tail = &trace[last..];
    json!({
        "steps": trace.len(),
        "first": trace.first(),
        "final_mean_20": if tail.is_empty() { None } else { Some(tail.iter().sum::<f64>() / tail.len() as f64) },
    })
}

fn meta_train(ctx: Ctx, started: Instant) -> Result<ExitCode> {
    let data = bench::load_run_data(&ctx.cfg)?;
    let train = data.train()?;
    let base = DatasetView::by_class(&train, |c| ctx.cfg.split.is_base(c));
    let cfg = &ctx.cfg.train;
    let out = detector::meta_train(&base, detector::init_params(cfg), cfg)?;
    let summary = loss_summary(&out.loss_trace);
    let path = ctx.path("checkpoints/meta_train.json");
    Checkpoint::new(out.params, cfg.clone(), None, out.loss_trace).save(&path)?;
    println!("meta-train: {summary}; checkpoint {}", path.display());
    ctx.manifest("meta-train", summary, &[path], started)?;
    Ok(ExitCode::SUCCESS)
}

fn meta_test(ctx: Ctx, checkpoint: Option<PathBuf>, started: Instant) -> Result<ExitCode> {
    let ck_path = checkpoint.unwrap_or_else(|| ctx.path("checkpoints/meta_train.json"));
    let ck = Checkpoint::load(&ck_path)?;
    let data = bench::load_run_data(&ctx.cfg)?;
    let fewshot = bench::draw_fewshot(&ctx.cfg, &data.source_train)?;
    let novel = DatasetView::by_class(&data.source_train, |c| ctx.cfg.split.is_novel(c));
    let cfg = &ctx.cfg.train;
    let out = detector::meta_test(&fewshot.view(&novel), ck.params, cfg)?;
    let mut summary = loss_summary(&out.loss_trace);
    let path = ctx.path("checkpoints/meta_test.json");
    Checkpoint::new(out.params, cfg.clone(), Some(fewshot), out.loss_trace).save(&path)?;
    println!("meta-test: {summary}; checkpoint {}", path.display());
    summary["from_checkpoint"] = json!(ck_path);
    ctx.manifest("meta-test", summary, &[path], started)?;
    Ok(ExitCode::SUCCESS)
}

fn infer(ctx: Ctx, checkpoint: Option<PathBuf>, domain: DomainArg, started: Instant) -> Result<ExitCode> {
    let ck_path = checkpoint.unwrap_or_else(|| ctx.path("checkpoints/meta_test.json"));
    let ck = Checkpoint::load(&ck_path)?;
    let fewshot = ck
        .fewshot
        .ok_or_else(|| Error::Config(format!("{} has no few-shot set; run meta-test first", ck_path.display())))?;
    let data = bench::load_run_data(&ctx.cfg)?;
    let test: &DatasetIndex = match domain {
        DomainArg::Source => &data.source_test,
        DomainArg::Target => data
            .target_test
            .as_ref()
            .ok_or_else(|| Error::Config("data.target is not set".into()))?,
    };
    let cfg = &ctx.cfg.train;
    let embeddings = detector::class_embeddings(&data.source_train, &fewshot, &ck.params, cfg)?;
    let positions: Vec<usize> = (0..test.images().len()).collect();
    let dets = detector::infer_images(test, &positions, &embeddings, &ck.params, cfg)?;
    let det_path = ctx.write_json("detections.json", &dets)?;
    let gt_path = ctx.write_json("ground_truth.json", &test.annotation_json())?;
    println!(
        "infer: {} detections on {} test images; wrote {} and {}",
        dets.len(),
        test.images().len(),
        det_path.display(),
        gt_path.display()
    );
    let details = json!({ "checkpoint": ck_path, "domain": format!("{domain:?}").to_lowercase(), "detections": dets.len() });
    ctx.manifest("infer", details, &[det_path, gt_path], started)?;
    Ok(ExitCode::SUCCESS)
}

fn eval(
    ctx: Ctx,
    gt: Option<PathBuf>,
    detections: Option<PathBuf>,
    classes: Option<ClassesArg>,
    started: Instant,
) -> Result<ExitCode> {
    let gt_path = gt.unwrap_or_else(|| ctx.path("ground_truth.json"));
    let det_path = detections.unwrap_or_else(|| ctx.path("detections.json"));
    let (images, anns, class_names) = load_annotations(&gt_path)?;
    let text = std::fs::read_to_string(&det_path).map_err(|e| Error::io(&det_path, e))?;
    let dets: Vec<DetectionRecord> =
        serde_json::from_str(&text).map_err(|e| Error::from(e).context(format!("parsing {}", det_path.display())))?;
    let known: std::collections::HashSet<u64> = images.iter().map(|e| e.id).collect();
    if let Some(d) = dets.iter().find(|d| !known.contains(&d.image_id)) {
        return Err(Error::Config(format!(
            "detection references image {} not in {}",
            d.image_id,
            gt_path.display()
        )));
    }
    let which = classes.map(EvalClasses::from).unwrap_or(ctx.cfg.metrics.classes);
    let class_set = bench::eval_class_set(&ctx.cfg.split, which, class_names.keys().copied());
    let gts: Vec<GroundTruth> = anns.iter().map(GroundTruth::from).collect();
    let report = evaluate(&dets, &gts, &class_set)?;
    let table = report.table();
    print!("{table}");
    let m = ctx.write_json("metrics.json", &report)?;
    let t = ctx.write_text("metrics.txt", &table)?;
    ctx.manifest(
        "eval",
        json!({ "ground_truth": gt_path, "detections": det_path, "classes": class_set }),
        &[m, t],
        started,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(ctx: Ctx, started: Instant) -> Result<ExitCode> {
    let gc = GradcheckConfig {
        margin: ctx.cfg.train.cfce.margin,
        ..GradcheckConfig::default()
    };
    let report = gradcheck::run(ctx.cfg.seed, &gc)?;
    println!(
        "gradcheck: {} instances ({} rejected near the hinge), max relative error {:.3e}, tolerance {:.0e}: {}",
        report.instances,
        report.rejected,
        report.max_relative_error,
        report.tolerance,
        if report.passed { "ok" } else { "FAILED" }
    );
    let path = ctx.write_json("gradcheck.json", &report)?;
    ctx.manifest("gradcheck", json!(report), &[path], started)?;
    if report.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(Error::CheckFailed(format!(
            "max relative error {:.3e} exceeds {:.0e}",
            report.max_relative_error, report.tolerance
        )))
    }
}

fn augment_preview(ctx: Ctx, image: &Path, n: usize, boxes: &[BBox], started: Instant) -> Result<ExitCode> {
    let img = ImageRGB::load_png(image)?;
    let pipeline = if boxes.is_empty() {
        ctx.cfg.train.pipeline.without_background()
    } else {
        ctx.cfg.train.pipeline.clone()
    };
    let dir = ctx.path("preview");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut outputs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng::stream(ctx.cfg.seed, purpose::PREVIEW, i as u64);
        let aug = pipeline.apply_image(&img, boxes, &mut rng)?;
        let path = dir.join(format!("{i:03}.png"));
        aug.save_png(&path)?;
        outputs.push(path);
    }
    println!("wrote {n} variants of {} to {}", image.display(), dir.display());
    ctx.manifest("augment-preview", json!({ "image": image, "boxes": boxes }), &outputs, started)?;
    Ok(ExitCode::SUCCESS)
}

fn run_bench(mut ctx: Ctx, gap_preset: Option<GapPreset>, started: Instant) -> Result<ExitCode> {
    if let Some(p) = gap_preset {
        ctx.cfg.synth.gap_preset = p;
    }
    let report: BenchReport = bench::run_bench(&ctx.cfg, &|line| eprintln!("{line}"))?;
    let table = report.table();
    print!("{table}");
    let m = ctx.write_json("metrics.json", &report)?;
    let t = ctx.write_text("comparison.txt", &table)?;
    ctx.manifest("bench", json!({ "gap_preset": ctx.cfg.synth.gap_preset }), &[m, t], started)?;
    Ok(ExitCode::SUCCESS)
}
