use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lungfuse_core::backbone::{load_pretrained_spec, BackboneKind, FinetunedBackbone};
use lungfuse_core::checkpoint::{load_model, save_single, ManifestContext};
use lungfuse_core::config::RUN_SUBDIRS;
use lungfuse_core::data::{FileSource, FoldPlanFile};
use lungfuse_core::gradcam::{grad_cam, overlay_file_name, render_overlay, CamScore, Colormap, GradCamSidecar};
use lungfuse_core::{
    benchmark_inference, build_ensemble, evaluate_fold, finetune, load_and_preprocess, make_folds, run_cross_validation,
    scan_dataset, split_train_val, truncate_and_freeze, ClassLabel, DatasetIndex, FoldPlan, RunConfig, Variant,
};

#[derive(Parser, Debug)]
#[command(name = "lungfuse", version, about = "Fused multi-backbone chest X-ray classifier")]
struct Cli {
    /// TOML configuration file. `LUNGFUSE_*` environment variables override it.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Output root (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run directory name under the output root (overrides `output.run_id`).
    #[arg(long, global = true)]
    run_id: Option<String>,

    /// Dataset root (overrides `dataset.root`).
    #[arg(long, global = true)]
    root: Option<PathBuf>,

    /// Directory holding ImageNet weights as safetensors.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,

    /// Fall back to random initialization when pretrained weights are missing.
    #[arg(long, global = true)]
    random_init: bool,

    /// More log output (repeat for debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct FoldArg {
    /// 1-based fold number.
    #[arg(long, default_value_t = 1)]
    fold: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index the dataset and report class counts.
    Scan,
    /// Build the stratified fold plan.
    Folds {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune one backbone on a fold's training split.
    Finetune {
        #[arg(long)]
        backbone: String,
        #[command(flatten)]
        fold: FoldArg,
    },
    /// Assemble a fused model and report its shapes and parameter counts.
    Build {
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Fine-tune and train one variant on a single fold.
    Train {
        #[arg(long)]
        variant: Option<Variant>,
        #[command(flatten)]
        fold: FoldArg,
    },
    /// Full k-fold cross-validation.
    Crossval {
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Evaluate a checkpoint on a test fold.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        fold: FoldArg,
    },
    /// Grad-CAM overlay for one image.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Target class; defaults to the predicted class.
        #[arg(long)]
        class: Option<ClassLabel>,
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        score: Option<String>,
        #[arg(long)]
        colormap: Option<Colormap>,
    },
    /// Per-image inference latency on a test fold.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        fold: FoldArg,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Use only the first N images of the fold.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// List a backbone's stage names and parameter names.
    Layers { backbone: String },
}

struct App {
    cfg: RunConfig,
    run_dir: PathBuf,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

impl App {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = RunConfig::load(cli.config.as_deref())?;
        if let Some(o) = &cli.out {
            cfg.output.dir = o.clone();
        }
        if let Some(id) = &cli.run_id {
            cfg.output.run_id = Some(id.clone());
        }
        if let Some(r) = &cli.root {
            cfg.dataset.root = Some(r.clone());
        }
        if let Some(w) = &cli.weights {
            cfg.weights.dir = Some(w.clone());
        }
        if cli.random_init {
            cfg.weights.allow_random_init = true;
        }
        let run_dir = cfg.run_dir();
        Ok(Self { cfg, run_dir })
    }

    fn subdir(&self, name: &str) -> PathBuf {
        debug_assert!(RUN_SUBDIRS.contains(&name));
        self.run_dir.join(name)
    }

    fn index(&self) -> Result<DatasetIndex> {
        let root = self
            .cfg
            .dataset
            .root
            .as_ref()
            .context("no dataset root: set dataset.root in the config or pass --root")?;
        Ok(scan_dataset(root, &self.cfg.dataset.aliases)?)
    }

    fn plan_path(&self) -> PathBuf {
        self.subdir("folds").join("fold_plan.json")
    }

    /// The saved plan of this run if there is one, otherwise a fresh one.
    fn plan(&self, index: &DatasetIndex) -> Result<FoldPlan> {
        let path = self.plan_path();
        if path.is_file() {
            let file: FoldPlanFile = serde_json::from_str(&fs::read_to_string(&path)?)?;
            return Ok(file.resolve(index)?);
        }
        Ok(make_folds(index, self.cfg.folds.k, self.cfg.folds.seed)?)
    }

    fn source(&self, index: DatasetIndex) -> FileSource {
        FileSource::new(index, self.cfg.normalization.clone())
    }

    fn fold_index(&self, plan: &FoldPlan, fold: usize) -> Result<usize> {
        if fold == 0 || fold > plan.k {
            bail!("--fold must be in 1..={}", plan.k);
        }
        Ok(fold - 1)
    }

    fn variant(&mut self, v: Option<Variant>) -> Variant {
        if let Some(v) = v {
            self.cfg.variant = v;
        }
        self.cfg.variant
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut app = App::new(&cli)?;
    match cli.command {
        Command::Scan => {
            let index = app.index()?;
            for c in ClassLabel::ALL {
                println!("{:<16} {}", c.name(), index.count(c));
            }
            println!("{:<16} {}", "total", index.len());
            write_json(&app.subdir("folds").join("index.json"), &index)?;
        }
        Command::Folds { k, seed } => {
            let index = app.index()?;
            let plan = make_folds(&index, k.unwrap_or(app.cfg.folds.k), seed.unwrap_or(app.cfg.folds.seed))?;
            for (i, f) in plan.folds.iter().enumerate() {
                let counts: Vec<usize> = ClassLabel::ALL
                    .iter()
                    .map(|&c| f.iter().filter(|&&j| index.entries[j].label == c).count())
                    .collect();
                println!("fold {}: {} items {:?}", i + 1, f.len(), counts);
            }
            write_json(&app.plan_path(), &plan.to_file(&index))?;
        }
        Command::Finetune { backbone, fold } => {
            let kind: BackboneKind = backbone.parse()?;
            let index = app.index()?;
            let plan = app.plan(&index)?;
            let f = app.fold_index(&plan, fold.fold)?;
            let source = app.source(index);
            let hp = &app.cfg.hyperparams.finetune;
            let (train, val) = split_train_val(&plan.train_indices(f), hp.val_fraction, app.cfg.folds.seed)?;
            let cv = app.cfg.cv_config();
            let pretrained = load_pretrained_spec(cv.spec(kind), &app.cfg.weights)?;
            let ft = finetune(pretrained, &source, &train, &val, hp, app.cfg.folds.seed)?;
            let dir = app
                .subdir("checkpoints")
                .join(format!("fold{}-{}", fold.fold, kind.slug()));
            let mut hyper = std::collections::BTreeMap::new();
            hyper.insert("finetune".to_string(), hp.clone());
            let ctx = ManifestContext {
                normalization: app.cfg.normalization.clone(),
                anchors: app.cfg.anchors.clone(),
                hyperparams: hyper,
                fold_plan_digest: None,
                fold_id: Some(fold.fold),
            };
            save_single(&ft.backbone, &ctx, &dir)?;
            write_json(&dir.join("history.json"), &ft.history)?;
        }
        Command::Build { variant } => {
            let variant = app.variant(variant);
            if !variant.is_ensemble() {
                bail!("build expects an ensemble variant (cvdnet1, cvdnet2 or cvdnet3)");
            }
            let cv = app.cfg.cv_config();
            let mut generators = Vec::new();
            for kind in variant.backbones() {
                let b = load_pretrained_spec(cv.spec(kind), &app.cfg.weights)?.with_classes(3, app.cfg.folds.seed)?;
                let g = truncate_and_freeze(&FinetunedBackbone::untrained(b), &app.cfg.anchors)?;
                let (h, w, c) = g.output_shape();
                println!("{:<16} {h}x{w}x{c}  {} parameters", kind.name(), g.param_count());
                generators.push(g);
            }
            let model = build_ensemble(generators, app.cfg.head.clone(), app.cfg.folds.seed)?;
            let (h, w, c) = model.feature_shape();
            let count = model.count_parameters();
            println!("{:<16} {h}x{w}x{c}", "concatenated");
            println!("parameters: {} total, {} trainable", count.total, count.trainable);
            let summary = serde_json::json!({
                "variant": variant,
                "branches": model.branches().iter().map(|b| &b.spec).collect::<Vec<_>>(),
                "feature_shape": [h, w, c],
                "head": model.head_config,
                "parameters": count,
            });
            write_json(&app.subdir("reports").join(format!("build_{variant}.json")), &summary)?;
        }
        Command::Train { variant, fold } => {
            let variant = app.variant(variant);
            let index = app.index()?;
            let plan = app.plan(&index)?;
            app.fold_index(&plan, fold.fold)?;
            let source = app.source(index);
            let mut cv = app.cfg.cv_config();
            cv.only_folds = Some(vec![fold.fold]);
            let report = run_cross_validation(&cv, &source, &plan, Some(&app.subdir("checkpoints")))?;
            if let Some(f) = report.failures.first() {
                bail!("fold {} failed: {}", f.fold_id, f.error);
            }
            let result = &report.per_fold[0];
            println!("fold {} accuracy: {:.2}%", result.fold_id, result.accuracy);
            write_json(
                &app.subdir("reports").join(format!("train_{variant}_fold{}.json", fold.fold)),
                result,
            )?;
        }
        Command::Crossval { variant } => {
            let variant = app.variant(variant);
            let index = app.index()?;
            let plan = app.plan(&index)?;
            write_json(&app.plan_path(), &plan.to_file(&index))?;
            let source = app.source(index);
            let report = run_cross_validation(&app.cfg.cv_config(), &source, &plan, Some(&app.subdir("checkpoints")))?;
            for f in &report.per_fold {
                println!("fold {}: {:.2}%", f.fold_id, f.accuracy);
            }
            for f in &report.failures {
                eprintln!("fold {} failed: {}", f.fold_id, f.error);
            }
            let reports = app.subdir("reports");
            write_json(&reports.join(format!("cv_{variant}.json")), &report)?;
            if let Some(m) = &report.metrics {
                let csv = reports.join(format!("cv_{variant}_metrics.csv"));
                fs::write(&csv, m.to_csv())?;
                println!("wrote {}", csv.display());
                print!("{}", m.to_csv());
            }
            if !report.failures.is_empty() {
                bail!("{} of {} folds failed", report.failures.len(), report.k);
            }
        }
        Command::Eval { checkpoint, fold } => {
            let (model, _) = load_model(&checkpoint)?;
            let index = app.index()?;
            let plan = app.plan(&index)?;
            let f = app.fold_index(&plan, fold.fold)?;
            let source = app.source(index);
            let mut result = evaluate_fold(model.classifier(), &source, fold.fold, plan.test_indices(f))?;
            result.checkpoint = Some(checkpoint.clone());
            println!("fold {} accuracy: {:.2}%", fold.fold, result.accuracy);
            println!("{:?}", result.confusion.m);
            write_json(&app.subdir("reports").join(format!("eval_fold{}.json", fold.fold)), &result)?;
        }
        Command::Gradcam {
            checkpoint,
            image,
            class,
            layer,
            score,
            colormap,
        } => {
            let (model, manifest) = load_model(&checkpoint)?;
            let img = load_and_preprocess(&image, 224, &manifest.normalization)?;
            let mode = match score.as_deref() {
                None => app.cfg.gradcam.score,
                Some("logit") => CamScore::Logit,
                Some("probability") => CamScore::Probability,
                Some(other) => bail!("--score must be logit or probability, got {other:?}"),
            };
            let layer = layer.or(app.cfg.gradcam.layer.clone());
            let classifier = model.classifier();
            let target = match class {
                Some(c) => c,
                None => classifier
                    .predict(&lungfuse_core::data::batch_tensor(
                        std::slice::from_ref(&img),
                        candle_core::DType::F32,
                        &candle_core::Device::Cpu,
                    )?)?
                    .remove(0)
                    .label,
            };
            let (map, prediction) = grad_cam(classifier, &img, target, layer.as_deref(), mode)?;
            let overlay = render_overlay(
                &map,
                &img.to_rgb8(&manifest.normalization),
                colormap.unwrap_or(app.cfg.gradcam.colormap),
                app.cfg.gradcam.alpha,
            )?;
            let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let dir = app.subdir("heatmaps");
            fs::create_dir_all(&dir)?;
            let png = dir.join(overlay_file_name(stem, target));
            overlay.save(&png).with_context(|| format!("writing {}", png.display()))?;
            println!("wrote {}", png.display());
            println!(
                "predicted {} ({:.2}%)",
                prediction.label,
                100.0 * prediction.probs[prediction.label.index()]
            );
            let sidecar = GradCamSidecar {
                image: image.display().to_string(),
                target_class: target,
                layer: map.layer.clone(),
                score: mode,
                raw: map.raw_rows(),
                channel_weights: map.channel_weights.clone(),
                prediction,
            };
            write_json(&png.with_extension("json"), &sidecar)?;
        }
        Command::Bench {
            checkpoint,
            fold,
            repeats,
            warmup,
            limit,
        } => {
            let (model, _) = load_model(&checkpoint)?;
            let index = app.index()?;
            let plan = app.plan(&index)?;
            let f = app.fold_index(&plan, fold.fold)?;
            let source = app.source(index);
            let mut images = plan.test_indices(f).to_vec();
            if let Some(n) = limit {
                images.truncate(n);
            }
            let mut bench = app.cfg.bench;
            if let Some(r) = repeats {
                bench.repeats = r;
            }
            if let Some(w) = warmup {
                bench.warmup = w;
            }
            let report = benchmark_inference(
                model.classifier(),
                &source,
                &images,
                &bench,
                &checkpoint.display().to_string(),
            )?;
            println!(
                "forward: {:.2} ± {:.2} ms/image; end-to-end: {:.2} ± {:.2} ms/image ({} images x {} repeats)",
                report.forward.mean_ms,
                report.forward.std_ms,
                report.end_to_end.mean_ms,
                report.end_to_end.std_ms,
                report.n_images,
                report.repeats
            );
            println!("{}", report.hardware);
            write_json(&app.subdir("bench").join(format!("bench_fold{}.json", fold.fold)), &report)?;
        }
        Command::Layers { backbone } => {
            let kind: BackboneKind = backbone.parse()?;
            let spec = app.cfg.cv_config().spec(kind);
            let b = lungfuse_core::Backbone::random(spec.clone(), 1000, 0)?;
            // Usually piped into grep or head; a closed pipe is not an error.
            let print = || -> std::io::Result<()> {
                let mut out = std::io::stdout().lock();
                writeln!(out, "# stages")?;
                for name in spec.layer_names().map_err(std::io::Error::other)? {
                    let mark = if name == spec.anchor.layer { "  <- anchor" } else { "" };
                    writeln!(out, "{name}{mark}")?;
                }
                writeln!(out, "# parameters")?;
                for e in b.store.entries() {
                    writeln!(out, "{} {:?}", e.name, e.var.shape().dims())?;
                }
                Ok(())
            };
            match print() {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
