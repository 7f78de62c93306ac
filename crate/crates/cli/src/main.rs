use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use primrnn::encoder::DepthImage;
use primrnn::geom::PointCloud;
use primrnn::io::{
    primitives_mesh, read_depth, read_obj, read_prims, read_weights, read_xyz, write_depth, write_json, write_obj,
    write_prims, write_weights, PrimsFile, PrimsMetadata,
};
use primrnn::metrics::{face_label_accuracy, iou, surface_distance_with, Direction};
use primrnn::parser::{fit_primitives, FitReport, ParserConfig, PrimitiveSet};
use primrnn::pipeline::{
    build_dataset, complete, fit_mesh, load_dataset, stage, stage_seed, synthesize, train_model, CloudMode,
    PipelineConfig,
};
use primrnn::render::render_depth;
use primrnn::seqgen::{ModelConfig, SamplingMode};

const THREADS_ENV: &str = "PRIMRNN_THREADS";

#[derive(Parser)]
#[command(name = "primrnn", version, about = "Cuboid primitive parsing and sequence generation")]
struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit cuboid primitives to a mesh (.obj) or point cloud (.xyz).
    Fit(FitArgs),
    /// Render depth views of a mesh.
    RenderDepth(RenderArgs),
    /// Token dataset construction.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train the sequence generator on a token dataset.
    Train(TrainArgs),
    /// Unconditioned shape synthesis.
    Generate(GenerateArgs),
    /// Shape completion from a single depth image.
    Complete(CompleteArgs),
    /// Evaluation metrics.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Defaults to INPUT with a `.prims.json` extension.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also export the cuboids as an OBJ mesh.
    #[arg(long)]
    obj: Option<PathBuf>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, value_enum)]
    cloud: Option<CloudArg>,
    #[arg(long)]
    max_primitives: Option<usize>,
    #[arg(long)]
    coverage: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    no_symmetry: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    views: Option<usize>,
    /// Write plain-text float grids instead of PGM.
    #[arg(long)]
    grid: bool,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Parse every mesh of a directory and write the token dataset.
    Build {
        #[arg(long)]
        meshes: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output weight container.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Use the small model tier.
    #[arg(long)]
    tiny: bool,
    /// Ignore depth views.
    #[arg(long)]
    unconditioned: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    obj: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    sample: SampleArgs,
}

#[derive(Args)]
struct CompleteArgs {
    /// Depth image (.pgm or float grid).
    #[arg(long)]
    depth: PathBuf,
    #[command(flatten)]
    sample: SampleArgs,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Volumetric IoU on a 30³ grid.
    Iou(EvalArgs),
    /// Normalized surface-to-surface distance.
    Surface {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = DirectionArg::Symmetric)]
        direction: DirectionArg,
    },
    /// Face-labeling accuracy against a labeled mesh.
    Seg(EvalArgs),
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CloudArg {
    Volume,
    Surface,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Train,
    Test,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Symmetric,
    PredToGt,
    GtToPred,
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    match flag.or_else(|| fallback.clone()) {
        Some(p) => Ok(p),
        None => bail!("--{name} is required (or set paths.{name} in the config)"),
    }
}

fn is_ext(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn default_prims_path(input: &Path) -> PathBuf {
    let stem = input.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    input.with_file_name(format!("{stem}.prims.json"))
}

fn save_set(set: &PrimitiveSet, meta: PrimsMetadata, out: &Path, obj: Option<&Path>) -> anyhow::Result<()> {
    write_prims(out, &PrimsFile::from_set(set, meta))?;
    if let Some(o) = obj {
        write_obj(o, &primitives_mesh(set))?;
    }
    Ok(())
}

fn fit(cfg: &mut PipelineConfig, a: FitArgs) -> anyhow::Result<serde_json::Value> {
    if let Some(n) = a.points {
        cfg.cloud.points = n;
    }
    if let Some(m) = a.cloud {
        cfg.cloud.mode = match m {
            CloudArg::Volume => CloudMode::Volume,
            CloudArg::Surface => CloudMode::Surface,
        };
    }
    if let Some(n) = a.max_primitives {
        cfg.parser.max_primitives = n;
    }
    if let Some(c) = a.coverage {
        cfg.parser.coverage = c;
    }
    if let Some(r) = a.restarts {
        cfg.parser.restarts = r;
    }
    if a.no_symmetry {
        cfg.parser.detect_symmetry = false;
    }
    let fit_seed = stage_seed(cfg.seed, stage::FIT, 0);
    let report: FitReport = if is_ext(&a.input, "xyz") {
        let cloud = PointCloud::new(read_xyz(&a.input)?);
        fit_primitives(&cloud, &ParserConfig { seed: fit_seed, ..cfg.parser })?
    } else {
        fit_mesh(&read_obj(&a.input)?, cfg, 0)?.1
    };
    if let Some(w) = &report.warning {
        log::warn!("{w}");
    }
    let out = a.output.unwrap_or_else(|| default_prims_path(&a.input));
    let meta = PrimsMetadata {
        source_file: Some(a.input.display().to_string()),
        seed: Some(fit_seed),
        energy: Some(report.energies.iter().sum()),
        coverage: Some(report.coverage),
        ..Default::default()
    };
    save_set(&report.set, meta, &out, a.obj.as_deref())?;
    Ok(json!({
        "output": out,
        "primitives": report.set.len(),
        "coverage": report.coverage,
        "coverage_reached": report.coverage_reached,
    }))
}

fn render(cfg: &mut PipelineConfig, a: RenderArgs) -> anyhow::Result<serde_json::Value> {
    if let Some(v) = a.views {
        cfg.render.views = v;
    }
    let mesh = read_obj(&a.input)?;
    let views = render_depth(&mesh, &cfg.render, stage_seed(cfg.seed, stage::RENDER, 0))?;
    let stem = a.input.file_stem().map_or_else(|| "view".into(), |s| s.to_string_lossy().into_owned());
    let ext = if a.grid { "txt" } else { "pgm" };
    let mut files = Vec::new();
    for (k, img) in views.iter().enumerate() {
        let p = a.out_dir.join(format!("{stem}_v{k}.{ext}"));
        write_depth(&p, img)?;
        files.push(p);
    }
    Ok(json!({ "views": files }))
}

fn sampling(cfg: &mut PipelineConfig, a: &SampleArgs) -> anyhow::Result<PathBuf> {
    if let Some(n) = a.max_steps {
        cfg.generate.max_steps = n;
    }
    if let Some(m) = a.mode {
        cfg.generate.mode = match m {
            ModeArg::Train => SamplingMode::Train,
            ModeArg::Test => SamplingMode::Test,
            ModeArg::Greedy => SamplingMode::Greedy,
        };
    }
    required(a.weights.clone(), &cfg.paths.weights, "weights")
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Fit(a) => fit(&mut cfg, a),
        Command::RenderDepth(a) => render(&mut cfg, a),
        Command::Dataset {
            command: DatasetCommand::Build { meshes, out, points, views },
        } => {
            let meshes = required(meshes, &cfg.paths.meshes, "meshes")?;
            let out = required(out, &cfg.paths.dataset, "dataset")?;
            if let Some(n) = points {
                cfg.cloud.points = n;
            }
            if let Some(v) = views {
                cfg.render.views = v;
            }
            let m = build_dataset(&meshes, &out, &cfg)?;
            Ok(json!({ "dataset": out, "shapes": m.shapes.len(), "failures": m.failures.len() }))
        }
        Command::Train(a) => {
            let dir = required(a.dataset, &cfg.paths.dataset, "dataset")?;
            let out = required(a.weights, &cfg.paths.weights, "weights")?;
            if let Some(n) = a.epochs {
                cfg.train.max_epochs = n;
            }
            if let Some(n) = a.batch_size {
                cfg.train.batch_size = n;
            }
            if let Some(x) = a.learning_rate {
                cfg.train.learning_rate = x;
            }
            if let Some(x) = a.validation_fraction {
                cfg.train.validation_fraction = x;
            }
            if a.tiny {
                cfg.model = ModelConfig::tiny();
            }
            if a.unconditioned {
                cfg.conditioned = false;
            }
            let data = load_dataset(&dir, cfg.conditioned)?;
            let outcome = train_model(&data, &cfg)?;
            write_weights(&out, &outcome.weights)?;
            if let Some(reports) = &cfg.paths.reports {
                write_json(
                    &reports.join("train.json"),
                    &json!({ "train_loss": outcome.train_loss, "val_loss": outcome.val_loss }),
                )?;
            }
            Ok(json!({
                "weights": out,
                "epochs": outcome.epochs,
                "final_train_loss": outcome.train_loss.last(),
                "best_val_loss": outcome.val_loss.iter().copied().reduce(f64::min),
            }))
        }
        Command::Generate(a) => {
            let wpath = sampling(&mut cfg, &a.sample)?;
            let w = read_weights(&wpath)?;
            let seed = stage_seed(cfg.seed, stage::GENERATE, 0);
            let set = synthesize(&w, &cfg.generate, seed)?;
            let meta = PrimsMetadata {
                seed: Some(seed),
                ..Default::default()
            };
            save_set(&set, meta, &a.sample.output, a.sample.obj.as_deref())?;
            Ok(json!({ "output": a.sample.output, "primitives": set.len() }))
        }
        Command::Complete(a) => {
            let wpath = sampling(&mut cfg, &a.sample)?;
            let w = read_weights(&wpath)?;
            let depth: DepthImage = read_depth(&a.depth)?;
            let seed = stage_seed(cfg.seed, stage::GENERATE, 0);
            let set = complete(&depth, &w, &cfg.generate, seed)?;
            let meta = PrimsMetadata {
                source_file: Some(a.depth.display().to_string()),
                seed: Some(seed),
                ..Default::default()
            };
            save_set(&set, meta, &a.sample.output, a.sample.obj.as_deref())?;
            Ok(json!({ "output": a.sample.output, "primitives": set.len() }))
        }
        Command::Eval { command } => {
            let value = match command {
                EvalCommand::Iou(e) => iou(&read_prims(&e.pred)?.to_set().primitives, &read_obj(&e.gt)?)?,
                EvalCommand::Surface { args, samples, direction } => {
                    let d = match direction {
                        DirectionArg::Symmetric => Direction::Symmetric,
                        DirectionArg::PredToGt => Direction::PredToGt,
                        DirectionArg::GtToPred => Direction::GtToPred,
                    };
                    let pred = read_prims(&args.pred)?.to_set();
                    surface_distance_with(&pred.primitives, &read_obj(&args.gt)?, samples, cfg.seed, d)?
                }
                EvalCommand::Seg(e) => {
                    let f = read_prims(&e.pred)?;
                    // without labels every primitive is its own segment
                    let labels = f.labels.clone().unwrap_or_else(|| (0..f.primitives.len() as u32).collect());
                    face_label_accuracy(&f.to_set().primitives, &labels, &read_obj(&e.gt)?, cfg.seed)?
                }
            };
            println!("{value}");
            Ok(serde_json::Value::Null)
        }
    }
}

fn error_json(e: &anyhow::Error) -> serde_json::Value {
    // library errors already print their source
    let (kind, message) = match e.downcast_ref::<primrnn::Error>() {
        Some(inner) => (inner.kind(), inner.to_string()),
        None => ("cli", format!("{e:#}")),
    };
    json!({ "error": { "kind": kind, "message": message } })
}

fn setup_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse(); // usage errors exit with status 2
    match setup_threads().and_then(|_| run(cli)) {
        Ok(v) => {
            if !v.is_null() {
                println!("{v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
