//! The `pvcnn` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime or
//! numeric failure (including a failed gradient check).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pvcnn_core::data::{Dataset, Taxonomy};
use pvcnn_core::gradcheck::{gradcheck, random_batch, GradcheckOptions};
use pvcnn_core::metrics::argmax;
use pvcnn_core::model::{build_model, ModelError};
use pvcnn_core::preprocess::normalize;
use pvcnn_core::train::{evaluate, train, ImageSet, TrainError};
use pvcnn_core::{ArchId, Model, Tensor};
use thiserror::Error;

use crate::artifacts::{load_checkpoint, save_checkpoint, CheckpointFileError, CHECKPOINT_FILE, CONFIG_FILE};
use crate::config::{ConfigError, Layers, RunConfig};
use crate::curves::{emit_curves, read_metrics, render_svg, CurvesError, METRICS_FILE};
use crate::imaging::{decode_and_resize, load_image_set, ImageError};
use crate::manifest::{self, image_root, load_manifest, ManifestError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointFileError> for CliError {
    fn from(e: CheckpointFileError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CurvesError> for CliError {
    fn from(e: CurvesError) -> Self {
        match e {
            CurvesError::Io { .. } | CurvesError::Empty => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::EmptyDataset(_)
            | TrainError::ClassCount { .. }
            | TrainError::LabelCount { .. }
            | TrainError::LabelOutOfRange { .. }
            | TrainError::ImageShape { .. } => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Runtime(format!("writing output: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "pvcnn", version, about = "CNN classifier for photovoltaic panel faults")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified train/test split of a manifest into train.csv and test.csv.
    Split(SplitArgs),
    /// Train a model and write model.ckpt, metrics.csv and curves.svg.
    Train(Box<TrainArgs>),
    /// Accuracy and confusion matrix of a checkpoint on a manifest.
    Evaluate(EvaluateArgs),
    /// Classify images. Prints `path<TAB>label<TAB>class=prob...` per image.
    Predict(PredictArgs),
    /// Compare analytical and finite-difference gradients on a random batch.
    Gradcheck(GradcheckArgs),
    /// Summarize one or more training runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Input manifest (`relative_path,label` CSV).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fraction of each class assigned to train.
    #[arg(long, default_value_t = 0.7)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for train.csv and test.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// proposed-3conv, ablated-2conv, espinosa-binary or espinosa-multi.
    #[arg(long)]
    pub arch: Option<String>,
    /// 2 (normal/faulty) or 4 (normal/cracked/dusty/shadowed).
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub train_manifest: Option<String>,
    #[arg(long)]
    pub test_manifest: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Square input side in pixels.
    #[arg(long)]
    pub image_size: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    /// adam or sgd-momentum.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// true or false.
    #[arg(long)]
    pub augment: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Images to classify.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Pass iff every worst relative error is strictly below this.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Batch size, 1 to 4.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Square input side.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Entries checked per tensor.
    #[arg(long, default_value_t = 24)]
    pub samples: usize,
    /// Check every entry of every tensor.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, each holding a metrics.csv.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Write summary.tsv and one curves SVG per run here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Split(a) => cmd_split(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Predict(a) => cmd_predict(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code; diagnostics go to stderr.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>, out: &mut dyn Write) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_split(args: &SplitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(args.fraction > 0.0 && args.fraction < 1.0) {
        return Err(CliError::Config(format!(
            "--fraction must lie strictly between 0 and 1, got {}",
            args.fraction
        )));
    }
    let dataset = load_manifest(&args.manifest)?;
    let (train, test) = dataset
        .stratified_split(args.fraction, args.seed)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.manifest.display())))?;
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let root = image_root(&args.manifest);
    for (name, part) in [("train.csv", &train), ("test.csv", &test)] {
        let rebased = manifest::rebase(part, &root, &args.out)?;
        let path = args.out.join(name);
        let mut buf = Vec::new();
        manifest::write(&rebased, &mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, buf).map_err(io_err(&path))?;
    }
    let labels = dataset.taxonomy().labels();
    writeln!(out, "class\ttrain\ttest").map_err(out_err)?;
    for (i, label) in labels.iter().enumerate() {
        writeln!(out, "{label}\t{}\t{}", train.class_counts()[i], test.class_counts()[i]).map_err(out_err)?;
    }
    writeln!(out, "total\t{}\t{}", train.len(), test.len()).map_err(out_err)?;
    Ok(())
}

/// Resolves the run config of `args`: defaults, then the config file, then
/// flags.
pub fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut layers = Layers::new();
    if let Some(path) = &args.config {
        layers.add_file(path)?;
    }
    let flags: [(&str, &Option<String>, &str); 15] = [
        ("arch", &args.arch, "--arch"),
        ("classes", &args.classes, "--classes"),
        ("train_manifest", &args.train_manifest, "--train-manifest"),
        ("test_manifest", &args.test_manifest, "--test-manifest"),
        ("out_dir", &args.out, "--out"),
        ("image_size", &args.image_size, "--image-size"),
        ("epochs", &args.epochs, "--epochs"),
        ("batch_size", &args.batch_size, "--batch-size"),
        ("optimizer", &args.optimizer, "--optimizer"),
        ("learning_rate", &args.learning_rate, "--learning-rate"),
        ("momentum", &args.momentum, "--momentum"),
        ("beta1", &args.beta1, "--beta1"),
        ("beta2", &args.beta2, "--beta2"),
        ("seed", &args.seed, "--seed"),
        ("augment", &args.augment, "--augment"),
    ];
    for (key, value, flag) in flags {
        if let Some(v) = value {
            layers.set(key, v, flag)?;
        }
    }
    let cfg = layers.resolve()?;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Loads a manifest and brings it to the taxonomy of a `classes`-way model.
fn dataset_for(path: &Path, classes: usize) -> Result<Dataset, CliError> {
    let dataset = load_manifest(path)?;
    match (dataset.taxonomy(), classes) {
        (Taxonomy::Multiclass, 2) => dataset
            .relabel_binary()
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        (Taxonomy::Binary, 4) => Err(CliError::Data(format!(
            "{}: binary labels cannot train or evaluate a 4-class model",
            path.display()
        ))),
        _ => Ok(dataset),
    }
}

fn load_set(path: &Path, classes: usize, size: [usize; 2]) -> Result<ImageSet, CliError> {
    let dataset = dataset_for(path, classes)?;
    Ok(load_image_set(&dataset, &image_root(path), size[0], size[1])?)
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_train_config(args)?;
    let train_path = cfg
        .train_manifest
        .clone()
        .ok_or(ConfigError::Missing("train_manifest"))?;
    let test_path = cfg
        .test_manifest
        .clone()
        .ok_or(ConfigError::Missing("test_manifest"))?;
    let size = [cfg.image_size, cfg.image_size];
    let input_shape = [3, size[0], size[1]];
    // reject an input size the architecture cannot handle before decoding
    let mut model = build_model(cfg.arch, cfg.classes, input_shape, cfg.train.seed).map_err(|e| match e {
        ModelError::InputTooSmall { .. } | ModelError::InvalidClassCount(_) => CliError::Config(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    })?;
    let train_set = load_set(&train_path, cfg.classes, size)?;
    let test_set = load_set(&test_path, cfg.classes, size)?;

    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let config_path = cfg.out_dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_text()).map_err(io_err(&config_path))?;

    let total = cfg.train.epochs;
    let log = train(&mut model, &train_set, &test_set, &cfg.train, |r| {
        eprintln!(
            "epoch {}/{total}  train_loss {:.4}  train_acc {:.4}  test_loss {:.4}  test_acc {:.4}",
            r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
        );
    })?;

    let ckpt = cfg.out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &ckpt).map_err(|e| CliError::Runtime(e.to_string()))?;
    emit_curves(&log, &cfg.out_dir)?;
    let last = log.last().expect("at least one epoch");
    writeln!(
        out,
        "{} ({} classes): test accuracy {:.4} after {} epochs; artifacts in {}",
        cfg.arch,
        cfg.classes,
        last.test_accuracy,
        last.epoch,
        cfg.out_dir.display()
    )
    .map_err(out_err)?;
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.batch_size == 0 {
        return Err(CliError::Config("--batch-size must be at least 1".into()));
    }
    let model = load_checkpoint(&args.checkpoint, None)?;
    let [_, h, w] = model.input_shape();
    let set = load_set(&args.manifest, model.num_classes(), [h, w])?;
    let eval = evaluate(&model, &set, args.batch_size)?;
    let labels = Taxonomy::for_classes(model.num_classes())
        .expect("checkpoint class count is validated")
        .labels();
    let r = &eval.report;
    writeln!(out, "overall_accuracy\t{}", r.overall_accuracy).map_err(out_err)?;
    writeln!(out, "loss\t{}", eval.loss).map_err(out_err)?;
    for (label, acc) in labels.iter().zip(&r.per_class_accuracy) {
        let acc = acc.map_or_else(|| "n/a".to_string(), |a| a.to_string());
        writeln!(out, "accuracy[{label}]\t{acc}").map_err(out_err)?;
    }
    let names: Vec<&str> = labels.iter().map(|l| l.as_str()).collect();
    writeln!(out, "confusion (rows true, columns predicted)\t{}", names.join("\t")).map_err(out_err)?;
    for (label, row) in labels.iter().zip(&r.confusion) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(out, "{label}\t{}", cells.join("\t")).map_err(out_err)?;
    }
    Ok(())
}

/// Class probabilities of one image under `model`.
pub fn predict_image(model: &Model, path: &Path) -> Result<Tensor<f32>, CliError> {
    let [_, h, w] = model.input_shape();
    let img = decode_and_resize(path, h, w)?;
    let x = normalize(&img, model.normalization())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let batch = Tensor::stack(&[&x]).map_err(|e| CliError::Runtime(e.to_string()))?;
    model.predict(&batch).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn cmd_predict(args: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint, None)?;
    let labels = Taxonomy::for_classes(model.num_classes())
        .expect("checkpoint class count is validated")
        .labels();
    for path in &args.images {
        let probs = predict_image(&model, path)?;
        let row = probs.data();
        let mut line = format!("{}\t{}", path.display(), labels[argmax(row)]);
        for (label, p) in labels.iter().zip(row) {
            line.push_str(&format!("\t{label}={p}"));
        }
        writeln!(out, "{line}").map_err(out_err)?;
    }
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let arch: ArchId = args.arch.parse().map_err(|e: pvcnn_core::model::ParseArchError| CliError::Config(e.to_string()))?;
    if !(args.tolerance >= 0.0 && args.tolerance.is_finite()) {
        return Err(CliError::Config(format!(
            "--tolerance must be a finite non-negative number, got {}",
            args.tolerance
        )));
    }
    if !(1..=4).contains(&args.batch) {
        return Err(CliError::Config(format!("--batch must lie in 1..=4, got {}", args.batch)));
    }
    if args.samples == 0 && !args.full {
        return Err(CliError::Config("--samples must be at least 1".into()));
    }
    let shape = [3, args.size, args.size];
    let model = Model::<f64>::build(arch, args.classes, shape, args.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let (batch, labels) = random_batch(args.batch, shape, args.classes, args.seed.wrapping_add(1));
    let options = GradcheckOptions {
        samples_per_tensor: (!args.full).then_some(args.samples),
        seed: args.seed,
        ..GradcheckOptions::default()
    };
    let report = gradcheck(&model, &batch, &labels, args.tolerance, options)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out, "tensor\tchecked\tworst_rel_error").map_err(out_err)?;
    for t in &report.tensors {
        writeln!(out, "{}\t{}/{}\t{:.3e}", t.name, t.checked, t.len, t.worst_rel_error).map_err(out_err)?;
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    writeln!(
        out,
        "{verdict} {arch}: worst relative error {:.3e} (tolerance {:e})",
        report.worst(),
        args.tolerance
    )
    .map_err(out_err)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed for {arch}: worst relative error {:.3e} >= {:e}",
            report.worst(),
            args.tolerance
        )))
    }
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for dir in &args.runs {
        let path = dir.join(METRICS_FILE);
        let file = fs::File::open(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let log = read_metrics(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let last = *log.last().ok_or_else(|| CliError::Data(format!("{}: no epochs", path.display())))?;
        let best = log
            .records()
            .iter()
            .map(|r| r.test_accuracy)
            .fold(0.0, f64::max);
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.push((name, log, last, best));
    }
    let header = "run\tepochs\ttrain_loss\ttrain_acc\ttest_loss\ttest_acc\tbest_test_acc";
    let lines: Vec<String> = rows
        .iter()
        .map(|(name, _, r, best)| {
            format!(
                "{name}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy, best
            )
        })
        .collect();
    writeln!(out, "{header}").map_err(out_err)?;
    for l in &lines {
        writeln!(out, "{l}").map_err(out_err)?;
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let summary = dir.join("summary.tsv");
        let mut text = format!("{header}\n");
        for l in &lines {
            text.push_str(l);
            text.push('\n');
        }
        fs::write(&summary, text).map_err(io_err(&summary))?;
        for (name, log, _, _) in &rows {
            let svg_path = dir.join(format!("{name}-curves.svg"));
            fs::write(&svg_path, render_svg(log)?).map_err(io_err(&svg_path))?;
        }
    }
    Ok(())
}
